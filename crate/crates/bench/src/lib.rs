//! Fixtures shared by the benchmarks.

use brw_core::{CubeDomain, DispersalKernel, KernelFamily, SimulationParams};

/// Lazy walk on `{-h..h}` holding with probability 0.2.
pub fn lazy_walk(lambda: f64, half: u64, cap: usize) -> SimulationParams {
    let kernel = DispersalKernel::new(1, KernelFamily::LazyNearestNeighbor { laziness: 0.2 }).expect("valid kernel");
    let mut p = SimulationParams::new(lambda, kernel, CubeDomain::discrete(1, 2 * half + 1).expect("odd side"));
    p.population_cap = cap;
    p.horizon = 200.0;
    p
}

/// Uniform-ball dispersal of radius 1 on `[-side/2, side/2)`.
pub fn ball_walk(lambda: f64, side: f64, cap: usize) -> SimulationParams {
    let kernel = DispersalKernel::new(1, KernelFamily::UniformBall { radius: 1.0 }).expect("valid kernel");
    let mut p = SimulationParams::new(lambda, kernel, CubeDomain::continuous(1, side).expect("positive side"));
    p.population_cap = cap;
    p
}
