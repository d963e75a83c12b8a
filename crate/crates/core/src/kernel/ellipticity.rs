//! Cube-restricted transition function with a cemetery state, and the
//! numerical ellipticity probe built on it.
//!
//! The probe certifies, on a finite probe grid only, that for some `N`
//! `sum_{n=1..N} a~^(n)_B(x, B(0, r)) >= delta` for every probed `x`.

use super::{CubeDomain, DispersalKernel, Space};
use crate::error::{Error, Result};

/// `a~_B`: jumps that leave the cube go to the cemetery `Δ`.
#[derive(Debug, Clone)]
pub struct CemeteryKernel {
    kernel: DispersalKernel,
    domain: CubeDomain,
    /// Midpoints per axis of the continuous quadrature.
    quadrature: usize,
}

impl CemeteryKernel {
    pub fn new(kernel: DispersalKernel, domain: CubeDomain) -> Result<Self> {
        domain.check_compatible(kernel.space(), kernel.dim())?;
        let quadrature = match kernel.dim() {
            1 => 20_000,
            2 => 600,
            3 => 80,
            _ => 24,
        };
        Ok(Self { kernel, domain, quadrature })
    }

    pub fn kernel(&self) -> &DispersalKernel {
        &self.kernel
    }

    pub fn domain(&self) -> &CubeDomain {
        &self.domain
    }

    /// `(a~_B(x, B), a~_B(x, {Δ}))`, accumulated separately.
    ///
    /// Discrete kernels sum exact point masses. Continuous kernels use a
    /// midpoint rule on the support box, normalized by the rule's own total so
    /// that quadrature error does not leak into the cemetery mass.
    pub fn split_mass(&self, x: &[f64]) -> (f64, f64) {
        let mut inside = 0.0;
        let mut outside = 0.0;
        let mut y = vec![0.0; x.len()];
        match self.kernel.space() {
            Space::Discrete => {
                for (s, m) in self.kernel.discrete_support() {
                    for (a, v) in s.iter().enumerate() {
                        y[a] = x[a] + *v as f64;
                    }
                    if self.domain.contains(&y) {
                        inside += m;
                    } else {
                        outside += m;
                    }
                }
            }
            Space::Continuous => {
                let r = self.kernel.support_radius();
                let n = self.quadrature;
                let step = 2.0 * r / n as f64;
                let mut idx = vec![0usize; x.len()];
                let mut s = vec![0.0; x.len()];
                'outer: loop {
                    for a in 0..x.len() {
                        s[a] = -r + (idx[a] as f64 + 0.5) * step;
                        y[a] = x[a] + s[a];
                    }
                    let w = self.kernel.density(&s);
                    if w > 0.0 {
                        if self.domain.contains(&y) {
                            inside += w;
                        } else {
                            outside += w;
                        }
                    }
                    let mut a = 0;
                    loop {
                        if a == idx.len() {
                            break 'outer;
                        }
                        idx[a] += 1;
                        if idx[a] < n {
                            break;
                        }
                        idx[a] = 0;
                        a += 1;
                    }
                }
                let total = inside + outside;
                if total > 0.0 {
                    inside /= total;
                    outside /= total;
                }
            }
        }
        (inside, outside)
    }

    pub fn retained_mass(&self, x: &[f64]) -> f64 {
        self.split_mass(x).0
    }

    pub fn cemetery_mass(&self, x: &[f64]) -> f64 {
        self.split_mass(x).1
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EllipticityOptions {
    /// Largest number of convolution steps tried.
    pub max_steps: usize,
    /// Continuous probe grid: cells per axis (the probe points are the cell centres).
    pub cells_per_axis: usize,
    /// Continuous probe grid: quadrature points per axis inside each cell.
    pub sub_points: usize,
    /// Cap on the number of probe points.
    pub max_points: usize,
}

impl Default for EllipticityOptions {
    fn default() -> Self {
        Self {
            max_steps: 64,
            cells_per_axis: 10,
            sub_points: 8,
            max_points: 4096,
        }
    }
}

/// Result of a successful probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipticity {
    /// Smallest number of steps `N` that works.
    pub steps: usize,
    /// Minimum over the probe grid of the partial sum up to `steps`.
    pub delta: f64,
}

fn for_each_index(dim: usize, per_axis: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; dim];
    loop {
        f(&idx);
        let mut a = 0;
        loop {
            if a == dim {
                return;
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

/// Dense sub-stochastic transfer matrix on the probe points plus the one-step
/// mass each probe point sends into `B(0, r)`.
fn transfer(kernel: &DispersalKernel, domain: &CubeDomain, r: f64, opts: &EllipticityOptions) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let dim = kernel.dim();
    match kernel.space() {
        Space::Discrete => {
            let count = domain.site_count().unwrap_or(u128::MAX);
            if count > opts.max_points as u128 {
                return Err(Error::Capacity {
                    what: "ellipticity probe points",
                    requested: count,
                    cap: opts.max_points as u128,
                });
            }
            let sites = domain.sites();
            let n = sites.len();
            let mut p = vec![vec![0.0; n]; n];
            let mut target = vec![0.0; n];
            let mut diff = vec![0i64; dim];
            for (i, x) in sites.iter().enumerate() {
                for (k, y) in sites.iter().enumerate() {
                    for a in 0..dim {
                        diff[a] = y[a] - x[a];
                    }
                    let m = kernel.mass(&diff);
                    p[i][k] = m;
                    let norm2: i64 = y.iter().map(|v| v * v).sum();
                    if (norm2 as f64) <= r * r {
                        target[i] += m;
                    }
                }
            }
            Ok((p, target))
        }
        Space::Continuous => {
            let cells = opts.cells_per_axis.max(1);
            let count = (cells as u128).pow(dim as u32);
            if count > opts.max_points as u128 {
                return Err(Error::Capacity {
                    what: "ellipticity probe points",
                    requested: count,
                    cap: opts.max_points as u128,
                });
            }
            let side = domain.side();
            let h = side / cells as f64;
            let mut centres = Vec::new();
            for_each_index(dim, cells, |idx| {
                centres.push(idx.iter().map(|i| -side / 2.0 + (*i as f64 + 0.5) * h).collect::<Vec<f64>>());
            });
            let q = opts.sub_points.max(1);
            let sub = h / q as f64;
            let sub_vol = sub.powi(dim as i32);
            let n = centres.len();
            let mut p = vec![vec![0.0; n]; n];
            let mut s = vec![0.0; dim];
            for (i, x) in centres.iter().enumerate() {
                for (k, c) in centres.iter().enumerate() {
                    let mut acc = 0.0;
                    for_each_index(dim, q, |sidx| {
                        for a in 0..dim {
                            s[a] = c[a] - h / 2.0 + (sidx[a] as f64 + 0.5) * sub - x[a];
                        }
                        acc += kernel.density(&s);
                    });
                    p[i][k] = acc * sub_vol;
                }
            }
            // one-step mass into the ball, by a midpoint rule on [-r, r]^d
            let per_axis = 64usize;
            let step = 2.0 * r / per_axis as f64;
            let vol = step.powi(dim as i32);
            let mut y = vec![0.0; dim];
            let mut target = vec![0.0; n];
            for (i, x) in centres.iter().enumerate() {
                let mut acc = 0.0;
                for_each_index(dim, per_axis, |yidx| {
                    for a in 0..dim {
                        y[a] = -r + (yidx[a] as f64 + 0.5) * step;
                    }
                    let r2: f64 = y.iter().map(|v| v * v).sum();
                    if r2 <= r * r && domain.contains(&y) {
                        for a in 0..dim {
                            s[a] = y[a] - x[a];
                        }
                        acc += kernel.density(&s);
                    }
                });
                target[i] = acc * vol;
            }
            Ok((p, target))
        }
    }
}

/// Smallest `N <= max_steps` for which every probe point sends positive
/// cumulative mass into `B(0, r)` within `N` steps.
pub fn ellipticity_probe(kernel: &DispersalKernel, domain: &CubeDomain, r: f64, opts: &EllipticityOptions) -> Result<Ellipticity> {
    if !(r > 0.0) {
        return Err(Error::invalid("r", format!("radius must be positive, got {r}")));
    }
    domain.check_compatible(kernel.space(), kernel.dim())?;
    let (p, target) = transfer(kernel, domain, r, opts)?;
    let n = target.len();
    // w_k(x) = a~^(k)(x, B(0,r)),  w_1 = target,  w_{k+1} = P w_k
    let mut w = target.clone();
    let mut partial = target;
    let mut best = 0.0f64;
    for steps in 1..=opts.max_steps {
        let delta = partial.iter().copied().fold(f64::INFINITY, f64::min);
        if delta > 0.0 {
            return Ok(Ellipticity { steps, delta });
        }
        best = best.max(delta);
        let next: Vec<f64> = (0..n).map(|i| p[i].iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
        for (s, v) in partial.iter_mut().zip(&next) {
            *s += v;
        }
        w = next;
    }
    Err(Error::NotFound {
        what: "ellipticity step count",
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;

    fn lazy(q: f64) -> DispersalKernel {
        DispersalKernel::new(1, KernelFamily::LazyNearestNeighbor { laziness: q }).unwrap()
    }

    /// Independent oracle: explicit matrix powers of the 5x5 sub-stochastic chain.
    fn matrix_power_partial_sums(p: [[f64; 5]; 5], target: usize, steps: usize) -> Vec<f64> {
        let mut power = p;
        let mut sums = vec![0.0; 5];
        for _ in 0..steps {
            for (i, s) in sums.iter_mut().enumerate() {
                *s += power[i][target];
            }
            let mut next = [[0.0; 5]; 5];
            for i in 0..5 {
                for j in 0..5 {
                    next[i][j] = (0..5).map(|k| power[i][k] * p[k][j]).sum();
                }
            }
            power = next;
        }
        sums
    }

    #[test]
    fn lazy_walk_on_five_sites_needs_two_steps() {
        let dom = CubeDomain::discrete(1, 5).unwrap();
        let e = ellipticity_probe(&lazy(0.5), &dom, 0.5, &EllipticityOptions::default()).unwrap();
        assert_eq!(e.steps, 2);
        let mut p = [[0.0; 5]; 5];
        for i in 0..5 {
            p[i][i] = 0.5;
            if i > 0 {
                p[i][i - 1] = 0.25;
            }
            if i < 4 {
                p[i][i + 1] = 0.25;
            }
        }
        let oracle = matrix_power_partial_sums(p, 2, 2);
        let oracle_one = matrix_power_partial_sums(p, 2, 1);
        assert_eq!(oracle_one[0], 0.0);
        let min = oracle.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((e.delta - min).abs() < 1e-12);
        assert!(e.delta > 0.0);
    }

    #[test]
    fn reducible_pair_kernel_is_not_elliptic() {
        let k = DispersalKernel::new(1, KernelFamily::PointSymmetricPair { distance: 4 }).unwrap();
        let dom = CubeDomain::discrete(1, 5).unwrap();
        let err = ellipticity_probe(&k, &dom, 0.5, &EllipticityOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NotFound { .. }));
    }

    #[test]
    fn huge_ball_gives_one_step() {
        let dom = CubeDomain::discrete(1, 7).unwrap();
        let k = lazy(0.2);
        let e = ellipticity_probe(&k, &dom, 100.0, &EllipticityOptions::default()).unwrap();
        assert_eq!(e.steps, 1);
        let cem = CemeteryKernel::new(k, dom).unwrap();
        let min = (-3..=3).map(|x| cem.retained_mass(&[x as f64])).fold(f64::INFINITY, f64::min);
        assert!((e.delta - min).abs() < 1e-12);
    }

    #[test]
    fn continuous_ball_kernel_is_elliptic_on_probe_grid() {
        let k = DispersalKernel::new(1, KernelFamily::UniformBall { radius: 1.0 }).unwrap();
        let dom = CubeDomain::continuous(1, 6.0).unwrap();
        let e = ellipticity_probe(&k, &dom, 0.5, &EllipticityOptions::default()).unwrap();
        assert!(e.steps >= 2 && e.delta > 0.0, "{e:?}");
    }

    #[test]
    fn cemetery_masses_complete() {
        let discrete = CemeteryKernel::new(
            DispersalKernel::new(2, KernelFamily::UniformRange { radius: 2 }).unwrap(),
            CubeDomain::discrete(2, 5).unwrap(),
        )
        .unwrap();
        for x in -2..=2 {
            for y in -2..=2 {
                let (i, o) = discrete.split_mass(&[x as f64, y as f64]);
                assert!((i + o - 1.0).abs() < 1e-10);
            }
        }
        let cont = CemeteryKernel::new(
            DispersalKernel::new(1, KernelFamily::Gaussian { std: 1.0, truncation: 3.0 }).unwrap(),
            CubeDomain::continuous(1, 4.0).unwrap(),
        )
        .unwrap();
        for i in 0..100 {
            let x = -2.0 + 4.0 * (i as f64 + 0.5) / 100.0;
            let (a, b) = cont.split_mass(&[x]);
            assert!((a + b - 1.0).abs() < 1e-10);
            assert!(b > 0.0);
        }
        // the centre of a wide cube keeps all of a narrow kernel
        let (a, _) = cont.split_mass(&[0.0]);
        assert!(a > 0.9);
    }
}
