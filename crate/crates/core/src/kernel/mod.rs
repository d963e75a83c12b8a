//! Dispersal kernels, the cube domain, and the kernel-level diagnostics.
//!
//! A [`DispersalKernel`] is a radially symmetric jump law on `Z^d` or `R^d`.
//! Offspring of a particle at `x` land at `x + s` with `s` drawn from the
//! kernel; landing outside the [`CubeDomain`] suppresses the birth.

mod ellipticity;
mod grid;

pub use ellipticity::{ellipticity_probe, CemeteryKernel, Ellipticity, EllipticityOptions};
pub use grid::{discretize, min_resolution_supercritical, DiscretizeOptions, GridKernel, InfimumMethod};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_lr};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Discrete,
    Continuous,
}

/// Parametric kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    /// Stay put with probability `laziness`, otherwise jump to one of the `2d` nearest neighbours.
    LazyNearestNeighbor { laziness: f64 },
    /// Uniform on the integer box `{-R..R}^d`.
    UniformRange { radius: u32 },
    /// Uniform on the `2d` points `±k e_i`.
    PointSymmetricPair { distance: u32 },
    /// Uniform density on the Euclidean ball of radius `R`.
    UniformBall { radius: f64 },
    /// Isotropic normal density cut at `|y| <= truncation` and renormalized.
    Gaussian { std: f64, truncation: f64 },
}

impl KernelFamily {
    pub fn space(&self) -> Space {
        match self {
            KernelFamily::LazyNearestNeighbor { .. }
            | KernelFamily::UniformRange { .. }
            | KernelFamily::PointSymmetricPair { .. } => Space::Discrete,
            KernelFamily::UniformBall { .. } | KernelFamily::Gaussian { .. } => Space::Continuous,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::LazyNearestNeighbor { .. } => "lazy_nearest_neighbor",
            KernelFamily::UniformRange { .. } => "uniform_range",
            KernelFamily::PointSymmetricPair { .. } => "point_symmetric_pair",
            KernelFamily::UniformBall { .. } => "uniform_ball",
            KernelFamily::Gaussian { .. } => "gaussian",
        }
    }
}

/// Anything that can draw offspring displacements for the engine.
pub trait JumpSampler: Send + Sync {
    fn dim(&self) -> usize;
    fn space(&self) -> Space;
    /// Writes a displacement into `out`. Returns `false` when the draw falls
    /// into missing kernel mass, i.e. no offspring is produced at all.
    fn sample_jump(&self, rng: &mut RandomStream, out: &mut [f64]) -> bool;
}

/// A validated radially symmetric dispersal kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersalKernel {
    dim: usize,
    family: KernelFamily,
    /// Point mass (`uniform_range`) or density normalizer (continuous families).
    norm: f64,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::invalid("dimension", format!("must be in 1..={MAX_DIM}, got {dim}")));
    }
    Ok(())
}

fn positive_finite(field: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::invalid(field, format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

/// Volume of the Euclidean ball of radius `r` in `d` dimensions.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    let half = d as f64 / 2.0;
    std::f64::consts::PI.powf(half) / gamma(half + 1.0) * r.powi(d as i32)
}

impl DispersalKernel {
    pub fn new(dim: usize, family: KernelFamily) -> Result<Self> {
        check_dim(dim)?;
        let norm = match family {
            KernelFamily::LazyNearestNeighbor { laziness } => {
                if !(0.0..=1.0).contains(&laziness) {
                    return Err(Error::invalid("kernel.params.laziness", format!("must lie in [0,1], got {laziness}")));
                }
                1.0
            }
            KernelFamily::UniformRange { radius } => 1.0 / f64::from(2 * radius + 1).powi(dim as i32),
            KernelFamily::PointSymmetricPair { distance } => {
                if distance == 0 {
                    return Err(Error::invalid("kernel.params.distance", "must be at least 1"));
                }
                1.0 / (2 * dim) as f64
            }
            KernelFamily::UniformBall { radius } => {
                positive_finite("kernel.params.radius", radius)?;
                1.0 / ball_volume(dim, radius)
            }
            KernelFamily::Gaussian { std, truncation } => {
                positive_finite("kernel.params.std", std)?;
                positive_finite("kernel.params.truncation", truncation)?;
                // mass of an untruncated isotropic normal inside radius R
                let inside = gamma_lr(dim as f64 / 2.0, truncation * truncation / (2.0 * std * std));
                let z = (2.0 * std::f64::consts::PI * std * std).powf(dim as f64 / 2.0) * inside;
                1.0 / z
            }
        };
        Ok(Self { dim, family, norm })
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn space(&self) -> Space {
        self.family.space()
    }

    /// Largest Euclidean jump length with positive mass/density.
    pub fn support_radius(&self) -> f64 {
        match self.family {
            KernelFamily::LazyNearestNeighbor { laziness } => {
                if laziness >= 1.0 {
                    0.0
                } else {
                    1.0
                }
            }
            KernelFamily::UniformRange { radius } => f64::from(radius) * (self.dim as f64).sqrt(),
            KernelFamily::PointSymmetricPair { distance } => f64::from(distance),
            KernelFamily::UniformBall { radius } => radius,
            KernelFamily::Gaussian { truncation, .. } => truncation,
        }
    }

    /// Point mass of a discrete kernel at integer offset `y`. Zero for continuous kernels.
    pub fn mass(&self, y: &[i64]) -> f64 {
        debug_assert_eq!(y.len(), self.dim);
        match self.family {
            KernelFamily::LazyNearestNeighbor { laziness } => {
                let l1: i64 = y.iter().map(|v| v.abs()).sum();
                match l1 {
                    0 => laziness,
                    1 => (1.0 - laziness) / (2 * self.dim) as f64,
                    _ => 0.0,
                }
            }
            KernelFamily::UniformRange { radius } => {
                if y.iter().all(|v| v.unsigned_abs() <= u64::from(radius)) {
                    self.norm
                } else {
                    0.0
                }
            }
            KernelFamily::PointSymmetricPair { distance } => {
                let nonzero: Vec<&i64> = y.iter().filter(|v| **v != 0).collect();
                if nonzero.len() == 1 && nonzero[0].unsigned_abs() == u64::from(distance) {
                    self.norm
                } else {
                    0.0
                }
            }
            KernelFamily::UniformBall { .. } | KernelFamily::Gaussian { .. } => 0.0,
        }
    }

    /// Density of a continuous kernel at `y`. Zero for discrete kernels.
    pub fn density(&self, y: &[f64]) -> f64 {
        let r2: f64 = y.iter().map(|v| v * v).sum();
        self.radial_density_sq(r2)
    }

    /// Density as a function of the squared radius. Both continuous families
    /// are radially nonincreasing, which the exact grid infimum relies on.
    pub fn radial_density_sq(&self, r2: f64) -> f64 {
        match self.family {
            KernelFamily::UniformBall { radius } => {
                if r2 <= radius * radius {
                    self.norm
                } else {
                    0.0
                }
            }
            KernelFamily::Gaussian { std, truncation } => {
                if r2 <= truncation * truncation {
                    self.norm * (-r2 / (2.0 * std * std)).exp()
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }
    }

    pub fn is_radially_nonincreasing(&self) -> bool {
        self.space() == Space::Continuous
    }

    /// All offsets with positive mass of a discrete kernel.
    pub fn discrete_support(&self) -> Vec<(Vec<i64>, f64)> {
        if self.space() != Space::Discrete {
            return Vec::new();
        }
        let reach = self.support_radius().ceil() as i64;
        let mut out = Vec::new();
        for_each_offset(self.dim, reach, |y| {
            let m = self.mass(y);
            if m > 0.0 {
                out.push((y.to_vec(), m));
            }
        });
        out
    }

    /// Draws a displacement with law `a` into `out`.
    pub fn sample_into(&self, rng: &mut RandomStream, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match self.family {
            KernelFamily::LazyNearestNeighbor { laziness } => {
                out.fill(0.0);
                if rng.uniform() >= laziness {
                    let k = rng.index(2 * self.dim);
                    out[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
                }
            }
            KernelFamily::UniformRange { radius } => {
                let width = 2 * radius as usize + 1;
                for v in out.iter_mut() {
                    *v = rng.index(width) as f64 - f64::from(radius);
                }
            }
            KernelFamily::PointSymmetricPair { distance } => {
                out.fill(0.0);
                let k = rng.index(2 * self.dim);
                let d = f64::from(distance);
                out[k / 2] = if k % 2 == 0 { d } else { -d };
            }
            KernelFamily::UniformBall { radius } => loop {
                let mut r2 = 0.0;
                for v in out.iter_mut() {
                    *v = (2.0 * rng.uniform() - 1.0) * radius;
                    r2 += *v * *v;
                }
                if r2 <= radius * radius {
                    break;
                }
            },
            KernelFamily::Gaussian { std, truncation } => loop {
                let mut r2 = 0.0;
                for v in out.iter_mut() {
                    *v = std * rng.standard_normal();
                    r2 += *v * *v;
                }
                if r2 <= truncation * truncation {
                    break;
                }
            },
        }
    }

    /// Convenience wrapper around [`sample_into`](Self::sample_into).
    pub fn sample_jump(&self, rng: &mut RandomStream) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut out);
        out
    }
}

impl JumpSampler for DispersalKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn space(&self) -> Space {
        self.family.space()
    }

    #[inline]
    fn sample_jump(&self, rng: &mut RandomStream, out: &mut [f64]) -> bool {
        self.sample_into(rng, out);
        true
    }
}

/// Calls `f` for every integer vector in `{-reach..reach}^dim`, in lexicographic order.
pub(crate) fn for_each_offset(dim: usize, reach: i64, mut f: impl FnMut(&[i64])) {
    let mut y = vec![-reach; dim];
    loop {
        f(&y);
        let mut axis = dim;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            if y[axis] < reach {
                y[axis] += 1;
                break;
            }
            y[axis] = -reach;
        }
    }
}

/// The cube `B`, centred at the origin.
///
/// Discrete cubes hold `side` sites per axis (`side` odd, sites `-h..=h`).
/// Continuous cubes are the half-open box `[-l/2, l/2)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "snake_case")]
pub enum CubeDomain {
    Discrete { dim: usize, side: u64 },
    Continuous { dim: usize, side: f64 },
}

impl CubeDomain {
    pub fn discrete(dim: usize, side: u64) -> Result<Self> {
        check_dim(dim)?;
        if side == 0 || side % 2 == 0 {
            return Err(Error::invalid("domain.side", format!("discrete side must be a positive odd site count, got {side}")));
        }
        Ok(CubeDomain::Discrete { dim, side })
    }

    pub fn continuous(dim: usize, side: f64) -> Result<Self> {
        check_dim(dim)?;
        positive_finite("domain.side", side)?;
        Ok(CubeDomain::Continuous { dim, side })
    }

    pub fn dim(&self) -> usize {
        match *self {
            CubeDomain::Discrete { dim, .. } | CubeDomain::Continuous { dim, .. } => dim,
        }
    }

    pub fn space(&self) -> Space {
        match self {
            CubeDomain::Discrete { .. } => Space::Discrete,
            CubeDomain::Continuous { .. } => Space::Continuous,
        }
    }

    /// Edge length (continuous) or number of sites per axis (discrete), as a float.
    pub fn side(&self) -> f64 {
        match *self {
            CubeDomain::Discrete { side, .. } => side as f64,
            CubeDomain::Continuous { side, .. } => side,
        }
    }

    /// Largest coordinate index of a discrete cube, `(side - 1) / 2`.
    pub fn half_sites(&self) -> i64 {
        match *self {
            CubeDomain::Discrete { side, .. } => ((side - 1) / 2) as i64,
            CubeDomain::Continuous { .. } => 0,
        }
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        match *self {
            CubeDomain::Discrete { side, .. } => {
                let h = ((side - 1) / 2) as f64;
                x.iter().all(|v| v.abs() <= h)
            }
            CubeDomain::Continuous { side, .. } => {
                let h = side / 2.0;
                x.iter().all(|v| *v >= -h && *v < h)
            }
        }
    }

    /// Number of sites of a discrete cube.
    pub fn site_count(&self) -> Option<u128> {
        match *self {
            CubeDomain::Discrete { dim, side } => Some(u128::from(side).checked_pow(dim as u32).unwrap_or(u128::MAX)),
            CubeDomain::Continuous { .. } => None,
        }
    }

    /// Row-major index of a discrete site.
    #[inline]
    pub fn site_index(&self, x: &[f64]) -> usize {
        let (h, side) = (self.half_sites(), self.side() as usize);
        x.iter().fold(0usize, |acc, v| acc * side + (*v as i64 + h) as usize)
    }

    /// Coordinates of the discrete site with the given row-major index.
    pub fn site_coords(&self, mut index: usize) -> Vec<i64> {
        let (h, side, dim) = (self.half_sites(), self.side() as usize, self.dim());
        let mut out = vec![0i64; dim];
        for k in (0..dim).rev() {
            out[k] = (index % side) as i64 - h;
            index /= side;
        }
        out
    }

    /// All sites of a discrete cube in row-major order.
    pub fn sites(&self) -> Vec<Vec<i64>> {
        match self.site_count() {
            Some(n) => (0..n as usize).map(|i| self.site_coords(i)).collect(),
            None => Vec::new(),
        }
    }

    /// Checks that a kernel and this domain describe the same space and dimension.
    pub fn check_compatible(&self, kernel_space: Space, kernel_dim: usize) -> Result<()> {
        if self.space() != kernel_space {
            return Err(Error::invalid(
                "kernel.family",
                format!("{kernel_space:?} kernel cannot act on a {:?} domain", self.space()),
            ));
        }
        if self.dim() != kernel_dim {
            return Err(Error::invalid(
                "domain.dimension",
                format!("kernel dimension {kernel_dim} differs from domain dimension {}", self.dim()),
            ));
        }
        Ok(())
    }

    /// Validates a particle position: inside the cube, integral in discrete space.
    pub fn check_position(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid("position", format!("expected {} coordinates, got {}", self.dim(), x.len())));
        }
        if self.space() == Space::Discrete && x.iter().any(|v| v.fract() != 0.0) {
            return Err(Error::invalid("position", format!("{x:?} is not a lattice site")));
        }
        if !self.contains(x) {
            return Err(Error::invalid("position", format!("{x:?} lies outside the cube")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lane;

    fn stream(seed: u64) -> RandomStream {
        RandomStream::new(seed, Lane::Custom(1))
    }

    #[test]
    fn fully_lazy_kernel_never_moves() {
        let k = DispersalKernel::new(1, KernelFamily::LazyNearestNeighbor { laziness: 1.0 }).unwrap();
        let mut s = stream(1);
        for _ in 0..1000 {
            assert_eq!(k.sample_jump(&mut s), vec![0.0]);
        }
    }

    #[test]
    fn point_pair_is_fair_coin() {
        let k = DispersalKernel::new(1, KernelFamily::PointSymmetricPair { distance: 4 }).unwrap();
        let mut s = stream(2);
        let n = 1_000_000;
        let mut buf = [0.0];
        let mut plus = 0usize;
        for _ in 0..n {
            k.sample_into(&mut s, &mut buf);
            assert_eq!(buf[0].abs(), 4.0);
            plus += usize::from(buf[0] > 0.0);
        }
        let f = plus as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.002, "{f}");
    }

    #[test]
    fn uniform_disc_area_ratio() {
        // P(|s| <= 1/sqrt 2) = (1/sqrt 2)^2 = 1/2 for the unit disc
        let k = DispersalKernel::new(2, KernelFamily::UniformBall { radius: 1.0 }).unwrap();
        let mut s = stream(3);
        let n = 1_000_000;
        let mut buf = [0.0; 2];
        let mut inner = 0usize;
        for _ in 0..n {
            k.sample_into(&mut s, &mut buf);
            let r2 = buf[0] * buf[0] + buf[1] * buf[1];
            assert!(r2 <= 1.0);
            inner += usize::from(r2 <= 0.5);
        }
        let f = inner as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.002, "{f}");
    }

    #[test]
    fn discrete_masses_sum_to_one() {
        for (dim, fam) in [
            (1, KernelFamily::LazyNearestNeighbor { laziness: 0.3 }),
            (3, KernelFamily::LazyNearestNeighbor { laziness: 0.0 }),
            (2, KernelFamily::UniformRange { radius: 2 }),
            (2, KernelFamily::PointSymmetricPair { distance: 3 }),
        ] {
            let k = DispersalKernel::new(dim, fam).unwrap();
            let total: f64 = k.discrete_support().iter().map(|(_, m)| m).sum();
            assert!((total - 1.0).abs() < 1e-12, "{fam:?}: {total}");
        }
    }

    fn midpoint_mass(k: &DispersalKernel, per_axis: usize) -> f64 {
        let r = k.support_radius();
        let h = 2.0 * r / per_axis as f64;
        let mut total = 0.0;
        let mut y = vec![0.0; k.dim()];
        let mut idx = vec![0usize; k.dim()];
        loop {
            for (a, i) in idx.iter().enumerate() {
                y[a] = -r + (*i as f64 + 0.5) * h;
            }
            total += k.density(&y) * h.powi(k.dim() as i32);
            let mut a = 0;
            loop {
                if a == idx.len() {
                    return total;
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

    #[test]
    fn continuous_densities_integrate_to_one() {
        let ball1 = DispersalKernel::new(1, KernelFamily::UniformBall { radius: 1.3 }).unwrap();
        assert!((midpoint_mass(&ball1, 100_000) - 1.0).abs() < 1e-4);
        let g1 = DispersalKernel::new(1, KernelFamily::Gaussian { std: 1.0, truncation: 2.0 }).unwrap();
        assert!((midpoint_mass(&g1, 200_000) - 1.0).abs() < 1e-8);
        let g2 = DispersalKernel::new(2, KernelFamily::Gaussian { std: 0.7, truncation: 3.0 }).unwrap();
        assert!((midpoint_mass(&g2, 2000) - 1.0).abs() < 1e-3);
        let b2 = DispersalKernel::new(2, KernelFamily::UniformBall { radius: 1.0 }).unwrap();
        assert!((midpoint_mass(&b2, 2000) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn radial_symmetry_of_masses() {
        let k = DispersalKernel::new(2, KernelFamily::UniformRange { radius: 1 }).unwrap();
        for (y, m) in k.discrete_support() {
            assert_eq!(k.mass(&[-y[0], y[1]]), m);
            assert_eq!(k.mass(&[y[1], y[0]]), m);
        }
        let g = DispersalKernel::new(2, KernelFamily::Gaussian { std: 1.0, truncation: 3.0 }).unwrap();
        assert_eq!(g.density(&[0.3, -1.1]), g.density(&[-1.1, 0.3]));
        assert_eq!(g.density(&[0.3, -1.1]), g.density(&[-0.3, 1.1]));
    }

    #[test]
    fn empirical_mean_is_near_zero() {
        let families = [
            (1, KernelFamily::LazyNearestNeighbor { laziness: 0.2 }),
            (2, KernelFamily::UniformRange { radius: 2 }),
            (1, KernelFamily::PointSymmetricPair { distance: 4 }),
            (2, KernelFamily::UniformBall { radius: 1.0 }),
            (1, KernelFamily::Gaussian { std: 1.0, truncation: 4.0 }),
        ];
        let n = 1_000_000;
        for (i, (dim, fam)) in families.into_iter().enumerate() {
            let k = DispersalKernel::new(dim, fam).unwrap();
            let mut s = stream(100 + i as u64);
            let mut buf = vec![0.0; dim];
            let mut sum = vec![0.0; dim];
            let mut sq = vec![0.0; dim];
            for _ in 0..n {
                k.sample_into(&mut s, &mut buf);
                for a in 0..dim {
                    sum[a] += buf[a];
                    sq[a] += buf[a] * buf[a];
                }
            }
            let norm: f64 = sum.iter().map(|v| (v / n as f64).powi(2)).sum::<f64>().sqrt();
            let std = (sq[0] / n as f64).sqrt();
            assert!(norm <= 4.0 * std / 1e3, "{fam:?}: |mean| {norm} std {std}");
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let k = DispersalKernel::new(2, KernelFamily::Gaussian { std: 0.5, truncation: 2.0 }).unwrap();
        let (mut a, mut b) = (stream(9), stream(9));
        let xa: Vec<u64> = (0..1000).flat_map(|_| k.sample_jump(&mut a)).map(f64::to_bits).collect();
        let xb: Vec<u64> = (0..1000).flat_map(|_| k.sample_jump(&mut b)).map(f64::to_bits).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(DispersalKernel::new(1, KernelFamily::LazyNearestNeighbor { laziness: 1.5 }).is_err());
        assert!(DispersalKernel::new(0, KernelFamily::UniformRange { radius: 1 }).is_err());
        assert!(DispersalKernel::new(1, KernelFamily::Gaussian { std: -1.0, truncation: 1.0 }).is_err());
        assert!(CubeDomain::discrete(1, 4).is_err());
        assert!(CubeDomain::continuous(1, 0.0).is_err());
    }

    #[test]
    fn domain_membership_and_indexing() {
        let d = CubeDomain::discrete(2, 5).unwrap();
        assert!(d.contains(&[2.0, -2.0]));
        assert!(!d.contains(&[3.0, 0.0]));
        for (i, s) in d.sites().iter().enumerate() {
            let x: Vec<f64> = s.iter().map(|v| *v as f64).collect();
            assert_eq!(d.site_index(&x), i);
        }
        let c = CubeDomain::continuous(1, 4.0).unwrap();
        assert!(c.contains(&[-2.0]));
        assert!(!c.contains(&[2.0]));
        assert!(d.check_position(&[0.5, 0.0]).is_err());
    }
}
