//! Grid kernels `a_n` on `2^-n Z^d`.
//!
//! `a_n(j) = 2^{-nd} * inf { a(x - y) : x in cell(0), y in cell(j) }` with
//! half-open product cells `[j_k - 2^{-(n+1)}, j_k + 2^{-(n+1)})`. The set of
//! differences `x - y` is the open box of half-width `2^-n` around `-j`, so by
//! symmetry the infimum is taken over the box around `j`.

use std::io::Write;

use super::{for_each_offset, CubeDomain, DispersalKernel, JumpSampler, Space};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfimumMethod {
    /// Exact for radially nonincreasing densities (evaluate at the far corner),
    /// probe grid otherwise.
    Auto,
    Exact,
    /// Minimum over a regular grid with this many points per axis per cell.
    ProbeGrid { points_per_cell: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct DiscretizeOptions {
    pub method: InfimumMethod,
    /// Cap on the number of grid sites inside the cube.
    pub max_sites: u128,
}

impl Default for DiscretizeOptions {
    fn default() -> Self {
        Self {
            method: InfimumMethod::Auto,
            max_sites: 1 << 26,
        }
    }
}

/// The discretized, sub-stochastic grid kernel. Offsets are in grid units
/// (multiples of the spacing `2^-n`).
#[derive(Debug, Clone)]
pub struct GridKernel {
    resolution: u32,
    dim: usize,
    spacing: f64,
    half_extent: i64,
    reach: i64,
    masses: Vec<f64>,
    total_mass: f64,
    cdf: Vec<f64>,
    cdf_offsets: Vec<i64>,
}

impl GridKernel {
    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Grid spacing `2^-n`.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Sum of all masses; below one.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Largest grid index `K` with `K * 2^-n` inside the open cube.
    pub fn half_extent(&self) -> i64 {
        self.half_extent
    }

    /// The lattice `2^-n Z^d ∩ int(B)` in grid units, as a discrete cube.
    pub fn grid_domain(&self) -> CubeDomain {
        CubeDomain::Discrete {
            dim: self.dim,
            side: (2 * self.half_extent + 1) as u64,
        }
    }

    /// Grid index of the half-open cell containing coordinate `x`.
    #[inline]
    pub fn cell_index(&self, x: f64) -> i64 {
        (x / self.spacing + 0.5).floor() as i64
    }

    fn slot(&self, k: &[i64]) -> Option<usize> {
        let width = (2 * self.reach + 1) as usize;
        let mut idx = 0usize;
        for v in k {
            if v.abs() > self.reach {
                return None;
            }
            idx = idx * width + (v + self.reach) as usize;
        }
        Some(idx)
    }

    /// `a_n` at grid offset `k` (grid units).
    pub fn mass_at(&self, k: &[i64]) -> f64 {
        if k.iter().any(|v| v.abs() > self.half_extent) {
            return 0.0;
        }
        self.slot(k).map_or(0.0, |i| self.masses[i])
    }

    /// Offsets and masses with positive mass, in lexicographic order.
    pub fn positive_sites(&self) -> Vec<(Vec<i64>, f64)> {
        let mut out = Vec::new();
        for (i, chunk) in self.cdf_offsets.chunks_exact(self.dim).enumerate() {
            let lo = if i == 0 { 0.0 } else { self.cdf[i - 1] };
            out.push((chunk.to_vec(), self.cdf[i] - lo));
        }
        out
    }

    /// Writes `j_1,...,j_d,mass` rows, offsets in grid units, for every positive site.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|a| format!("j_{a}")).chain(std::iter::once("mass".into())).collect();
        writeln!(w, "{}", header.join(","))?;
        for chunk in self.cdf_offsets.chunks_exact(self.dim) {
            let m = self.mass_at(chunk);
            let coords: Vec<String> = chunk.iter().map(|k| k.to_string()).collect();
            writeln!(w, "{},{}", coords.join(","), m)?;
        }
        Ok(())
    }
}

impl JumpSampler for GridKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn space(&self) -> Space {
        Space::Discrete
    }

    fn sample_jump(&self, rng: &mut RandomStream, out: &mut [f64]) -> bool {
        let u = rng.uniform();
        if u >= self.total_mass {
            return false;
        }
        let i = self.cdf.partition_point(|c| *c <= u).min(self.cdf.len() - 1);
        for (o, k) in out.iter_mut().zip(&self.cdf_offsets[i * self.dim..(i + 1) * self.dim]) {
            *o = *k as f64;
        }
        true
    }
}

fn infimum_exact(kernel: &DispersalKernel, k: &[i64], h: f64) -> f64 {
    let r2: f64 = k.iter().map(|v| (v.abs() as f64 * h + h).powi(2)).sum();
    kernel.radial_density_sq(r2)
}

fn infimum_probe(kernel: &DispersalKernel, k: &[i64], h: f64, per_cell: usize) -> f64 {
    let per_axis = 2 * per_cell.max(1) + 1;
    let step = 2.0 * h / (per_axis - 1) as f64;
    let dim = k.len();
    let mut idx = vec![0usize; dim];
    let mut z = vec![0.0; dim];
    let mut best = f64::INFINITY;
    loop {
        for a in 0..dim {
            z[a] = k[a] as f64 * h - h + idx[a] as f64 * step;
        }
        best = best.min(kernel.density(&z));
        if best == 0.0 {
            return 0.0;
        }
        let mut a = 0;
        loop {
            if a == dim {
                return best;
            }
            idx[a] += 1;
            if idx[a] < per_axis {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

/// Builds `a_n` for a continuous kernel on a continuous cube with integer edge length.
pub fn discretize(kernel: &DispersalKernel, domain: &CubeDomain, resolution: u32, opts: &DiscretizeOptions) -> Result<GridKernel> {
    if kernel.space() != Space::Continuous {
        return Err(Error::Precondition("discretize needs a continuous-space kernel".into()));
    }
    domain.check_compatible(kernel.space(), kernel.dim())?;
    if resolution == 0 || resolution > 40 {
        return Err(Error::invalid("resolution", format!("must lie in 1..=40, got {resolution}")));
    }
    let side = domain.side();
    if side.fract() != 0.0 {
        return Err(Error::invalid("domain.side", format!("grid coupling needs an integer edge length, got {side}")));
    }
    let dim = kernel.dim();
    let cells_per_unit = 1i64 << resolution;
    let h = 1.0 / cells_per_unit as f64;
    // |k h| < side/2  <=>  |k| <= side * 2^(n-1) - 1
    let half_extent = side as i64 * cells_per_unit / 2 - 1;
    let per_axis = (2 * half_extent + 1) as u128;
    let requested = per_axis.checked_pow(dim as u32).unwrap_or(u128::MAX);
    if requested > opts.max_sites {
        return Err(Error::Capacity {
            what: "grid kernel sites",
            requested,
            cap: opts.max_sites,
        });
    }
    let reach = half_extent.min((kernel.support_radius() / h).ceil() as i64).max(0);
    let width = (2 * reach + 1) as usize;
    let mut masses = vec![0.0; width.pow(dim as u32)];
    let method = match opts.method {
        InfimumMethod::Auto if kernel.is_radially_nonincreasing() => InfimumMethod::Exact,
        InfimumMethod::Auto => InfimumMethod::ProbeGrid { points_per_cell: 32 },
        m => m,
    };
    if method == InfimumMethod::Exact && !kernel.is_radially_nonincreasing() {
        return Err(Error::Precondition("exact infimum needs a radially nonincreasing density".into()));
    }
    let cell_volume = h.powi(dim as i32);
    let mut cdf = Vec::new();
    let mut cdf_offsets = Vec::new();
    let mut acc = 0.0;
    let mut slot = 0usize;
    for_each_offset(dim, reach, |k| {
        let inf = match method {
            InfimumMethod::ProbeGrid { points_per_cell } => infimum_probe(kernel, k, h, points_per_cell),
            _ => infimum_exact(kernel, k, h),
        };
        let m = cell_volume * inf;
        masses[slot] = m;
        slot += 1;
        if m > 0.0 {
            acc += m;
            cdf.push(acc);
            cdf_offsets.extend_from_slice(k);
        }
    });
    Ok(GridKernel {
        resolution,
        dim,
        spacing: h,
        half_extent,
        reach,
        masses,
        total_mass: acc,
        cdf,
        cdf_offsets,
    })
}

/// Smallest `n <= n_max` with `lambda * total_mass(a_n) > 1`.
pub fn min_resolution_supercritical(
    kernel: &DispersalKernel,
    domain: &CubeDomain,
    lambda: f64,
    n_max: u32,
    opts: &DiscretizeOptions,
) -> Result<GridKernel> {
    if !(lambda > 1.0) {
        return Err(Error::Precondition(format!("supercritical search needs lambda > 1, got {lambda}")));
    }
    let mut best = 0.0f64;
    for n in 1..=n_max {
        let g = discretize(kernel, domain, n, opts)?;
        if lambda * g.total_mass() > 1.0 {
            return Ok(g);
        }
        best = best.max(g.total_mass());
    }
    Err(Error::NotFound {
        what: "supercritical resolution",
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use crate::rng::Lane;

    fn ball(dim: usize, r: f64) -> DispersalKernel {
        DispersalKernel::new(dim, KernelFamily::UniformBall { radius: r }).unwrap()
    }

    fn gauss() -> DispersalKernel {
        DispersalKernel::new(1, KernelFamily::Gaussian { std: 1.0, truncation: 4.0 }).unwrap()
    }

    /// h times the average density over the difference box around k h (1-d, fine midpoint rule).
    fn cell_integral_1d(kernel: &DispersalKernel, k: i64, h: f64) -> f64 {
        let n = 4000;
        let step = 2.0 * h / n as f64;
        (0..n).map(|i| kernel.density(&[k as f64 * h - h + (i as f64 + 0.5) * step]) * step).sum::<f64>() / 2.0
    }

    #[test]
    fn unit_interval_kernel_at_resolution_three() {
        let dom = CubeDomain::continuous(1, 4.0).unwrap();
        let g = discretize(&ball(1, 1.0), &dom, 3, &DiscretizeOptions::default()).unwrap();
        // |k| + 1 <= 8 gives 15 sites of mass (1/8)(1/2)
        assert!((g.total_mass() - 15.0 / 16.0).abs() < 1e-12);
        assert!(g.total_mass() > 0.9 && g.total_mass() <= 1.0);
    }

    #[test]
    fn masses_match_infimum_formula_and_stay_below_cell_average() {
        let dom = CubeDomain::continuous(1, 10.0).unwrap();
        for kernel in [ball(1, 1.0), gauss()] {
            for n in 1..=4 {
                let g = discretize(&kernel, &dom, n, &DiscretizeOptions::default()).unwrap();
                let h = g.spacing();
                for (k, m) in g.positive_sites() {
                    // recompute: density at the far corner of the difference box
                    let far = k[0].abs() as f64 * h + h;
                    assert!((m - h * kernel.density(&[far])).abs() < 1e-10);
                    // h times the box average bounds h times the infimum
                    assert!(m <= cell_integral_1d(&kernel, k[0], h) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn refinement_is_monotone() {
        let dom = CubeDomain::continuous(1, 10.0).unwrap();
        for kernel in [ball(1, 1.0), gauss(), ball(1, 0.7)] {
            let masses: Vec<f64> = (1..=6)
                .map(|n| discretize(&kernel, &dom, n, &DiscretizeOptions::default()).unwrap().total_mass())
                .collect();
            for w in masses.windows(2) {
                assert!(w[1] >= w[0] - 1e-15, "{masses:?}");
            }
            assert!(masses.iter().all(|m| *m <= 1.0));
        }
        let dom2 = CubeDomain::continuous(2, 4.0).unwrap();
        let m: Vec<f64> = (1..=4)
            .map(|n| discretize(&ball(2, 1.0), &dom2, n, &DiscretizeOptions::default()).unwrap().total_mass())
            .collect();
        assert!(m.windows(2).all(|w| w[1] >= w[0]), "{m:?}");
    }

    #[test]
    fn gaussian_refinement_gains_mass() {
        let dom = CubeDomain::continuous(1, 10.0).unwrap();
        let m3 = discretize(&gauss(), &dom, 3, &DiscretizeOptions::default()).unwrap().total_mass();
        let m6 = discretize(&gauss(), &dom, 6, &DiscretizeOptions::default()).unwrap().total_mass();
        assert!(m6 >= m3);
    }

    #[test]
    fn probe_grid_agrees_with_exact_for_monotone_kernels() {
        let dom = CubeDomain::continuous(1, 10.0).unwrap();
        let exact = discretize(&gauss(), &dom, 3, &DiscretizeOptions::default()).unwrap();
        let probe = discretize(
            &gauss(),
            &dom,
            3,
            &DiscretizeOptions {
                method: InfimumMethod::ProbeGrid { points_per_cell: 32 },
                ..Default::default()
            },
        )
        .unwrap();
        assert!((exact.total_mass() - probe.total_mass()).abs() < 1e-12);
    }

    #[test]
    fn capacity_error_on_huge_grids() {
        let dom = CubeDomain::continuous(3, 10.0).unwrap();
        let err = discretize(&ball(3, 1.0), &dom, 12, &DiscretizeOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn supercritical_resolution_search() {
        let dom = CubeDomain::continuous(1, 6.0).unwrap();
        let g = min_resolution_supercritical(&ball(1, 1.0), &dom, 2.0, 12, &DiscretizeOptions::default()).unwrap();
        assert!(2.0 * g.total_mass() > 1.0);
        let g = min_resolution_supercritical(&ball(1, 1.0), &dom, 1e6, 12, &DiscretizeOptions::default()).unwrap();
        assert_eq!(g.resolution(), 1);
        assert!(matches!(
            min_resolution_supercritical(&ball(1, 1.0), &dom, 1.0, 12, &DiscretizeOptions::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn grid_sampler_follows_masses() {
        let dom = CubeDomain::continuous(1, 10.0).unwrap();
        let g = discretize(&ball(1, 1.0), &dom, 2, &DiscretizeOptions::default()).unwrap();
        let mut s = RandomStream::new(5, Lane::Custom(3));
        let n = 400_000;
        let mut none = 0usize;
        let mut zero = 0usize;
        let mut buf = [0.0];
        for _ in 0..n {
            if g.sample_jump(&mut s, &mut buf) {
                zero += usize::from(buf[0] == 0.0);
            } else {
                none += 1;
            }
        }
        let f_none = none as f64 / n as f64;
        let f_zero = zero as f64 / n as f64;
        assert!((f_none - (1.0 - g.total_mass())).abs() < 0.003);
        assert!((f_zero - g.mass_at(&[0])).abs() < 0.003);
    }

    #[test]
    fn cell_index_is_half_open() {
        let dom = CubeDomain::continuous(1, 4.0).unwrap();
        let g = discretize(&ball(1, 1.0), &dom, 1, &DiscretizeOptions::default()).unwrap();
        assert_eq!(g.cell_index(0.25), 1);
        assert_eq!(g.cell_index(-0.25), 0);
        assert_eq!(g.cell_index(0.2499), 0);
        assert_eq!(g.half_extent(), 3);
    }
}
