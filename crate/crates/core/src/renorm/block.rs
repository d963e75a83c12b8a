use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{block_seed, Half, Tally};
use crate::engine::{ParticleConfiguration, Simulation, SimulationParams};
use crate::error::{Error, Result};
use crate::kernel::JumpSampler;
use crate::rng::{mix64, replica_seed};
use crate::stats::Proportion;

/// Monte Carlo estimates of `c_ij`, the probability that a block seeded in
/// half `i` meets the shape of half `j` after time `T`. Indexed `[i][j]`
/// with `A1 = 0`, `A2 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMatrix {
    pub quota: u32,
    pub duration: f64,
    pub c: [[Proportion; 2]; 2],
    /// Runs stopped at the block cap, counted as successes.
    pub cap_hits: u64,
}

impl BlockMatrix {
    pub fn min_lower(&self) -> f64 {
        self.c.iter().flatten().map(|p| p.lower).fold(f64::INFINITY, f64::min)
    }
}

/// Outcome of one block: whether the time-`T` configuration meets each
/// half's shape; `None` when the run hit `block_cap` first.
pub(crate) fn run_block<K: JumpSampler + Clone>(
    params: &SimulationParams<K>,
    initial: &ParticleConfiguration,
    quota: u32,
    duration: f64,
    block_cap: usize,
    seed: u64,
) -> Result<Option<[bool; 2]>> {
    let mut p = params.clone();
    p.seed = seed;
    p.record_genealogy = false;
    p.population_cap = block_cap;
    p.horizon = duration;
    let mut sim = Simulation::new(&p, initial)?;
    sim.advance_to(duration, |_, _| {});
    if sim.population() >= block_cap {
        return Ok(None);
    }
    let mut tally = Tally::new(&p.domain);
    tally.fill_from(sim.state(), |_| true);
    Ok(Some([tally.meets(Half::A1, quota), tally.meets(Half::A2, quota)]))
}

/// Estimates all four `c_ij` from `replicas` blocks per seed half. Runs
/// reaching `block_cap` particles before time `T` count as successes.
pub fn estimate_block_matrix<K: JumpSampler + Clone>(
    params: &SimulationParams<K>,
    quota: u32,
    duration: f64,
    replicas: usize,
    block_cap: usize,
) -> Result<BlockMatrix> {
    if quota == 0 {
        return Err(Error::invalid("quota", "must be at least 1"));
    }
    if !(duration > 0.0) {
        return Err(Error::invalid("duration", format!("must be positive, got {duration}")));
    }
    params.validate()?;
    let mut c = [[Proportion::new(0, 0); 2]; 2];
    let mut cap_hits = 0;
    for from in Half::BOTH {
        let root = mix64(params.seed ^ mix64(0xb10c ^ (from.index() as u64 + 1) ^ (u64::from(quota) << 8)));
        let initial = block_seed(&params.domain, from, quota);
        let outcomes: Result<Vec<Option<[bool; 2]>>> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| run_block(params, &initial, quota, duration, block_cap, replica_seed(root, r)))
            .collect();
        let outcomes = outcomes?;
        for to in Half::BOTH {
            let ok = outcomes.iter().filter(|o| o.is_none_or(|hits| hits[to.index()])).count() as u64;
            c[from.index()][to.index()] = Proportion::new(ok, replicas as u64);
        }
        cap_hits += outcomes.iter().filter(|o| o.is_none()).count() as u64;
    }
    Ok(BlockMatrix {
        quota,
        duration,
        c,
        cap_hits,
    })
}

/// Block parameters `(M, T, p)` with the estimated `c_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub quota: u32,
    pub duration: f64,
    pub p: f64,
    /// `c[i][j]` point estimates.
    pub c: [[f64; 2]; 2],
    pub c_lower: [[f64; 2]; 2],
    pub c_upper: [[f64; 2]; 2],
    pub replicas: u64,
    pub block_cap: usize,
    pub cap_hits: u64,
}

impl BlockParams {
    pub fn from_matrix(m: &BlockMatrix, p: f64, block_cap: usize) -> Self {
        let pick = |f: fn(&Proportion) -> f64| {
            let mut out = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    out[i][j] = f(&m.c[i][j]);
                }
            }
            out
        };
        Self {
            quota: m.quota,
            duration: m.duration,
            p,
            c: pick(|x| x.estimate),
            c_lower: pick(|x| x.lower),
            c_upper: pick(|x| x.upper),
            replicas: m.c[0][0].trials,
            block_cap,
            cap_hits: m.cap_hits,
        }
    }

    /// `p / c_ij`.
    pub fn threshold(&self, from: Half, to: Half) -> f64 {
        self.p / self.c[from.index()][to.index()]
    }

    /// Every threshold must be at most one, so that thinning can bring each
    /// bond down to probability exactly `p`.
    pub fn validate(&self) -> Result<()> {
        if self.quota == 0 {
            return Err(Error::invalid("block.quota", "must be at least 1"));
        }
        if !(self.duration > 0.0) {
            return Err(Error::invalid("block.duration", "must be positive"));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::invalid("block.p", format!("must lie in (0, 1), got {}", self.p)));
        }
        for from in Half::BOTH {
            for to in Half::BOTH {
                let t = self.threshold(from, to);
                if !(t <= 1.0) {
                    return Err(Error::invalid(
                        "block.c",
                        format!("threshold p/c[{}][{}] = {t} exceeds one", from.index() + 1, to.index() + 1),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub matrix: BlockMatrix,
    pub accepted: bool,
}

/// Evaluates grid points ordered by `T`, then `M`, stopping at the first
/// whose lower confidence bounds all reach `p_target`.
pub fn search_block_params<K: JumpSampler + Clone>(
    params: &SimulationParams<K>,
    p_target: f64,
    quotas: &[u32],
    durations: &[f64],
    replicas: usize,
    block_cap: usize,
) -> Result<Vec<SearchPoint>> {
    if !(0.0..=1.0).contains(&p_target) {
        return Err(Error::invalid("p", format!("must lie in [0, 1], got {p_target}")));
    }
    let mut ts = durations.to_vec();
    ts.sort_by(f64::total_cmp);
    let mut ms = quotas.to_vec();
    ms.sort_unstable();
    let mut points = Vec::new();
    for &t in &ts {
        for &m in &ms {
            let matrix = estimate_block_matrix(params, m, t, replicas, block_cap)?;
            let accepted = matrix.min_lower() >= p_target;
            points.push(SearchPoint { matrix, accepted });
            if accepted {
                return Ok(points);
            }
        }
    }
    Ok(points)
}

/// The first accepted grid point, or `NotFound` carrying the best lower bound.
pub fn find_block_params<K: JumpSampler + Clone>(
    params: &SimulationParams<K>,
    p_target: f64,
    quotas: &[u32],
    durations: &[f64],
    replicas: usize,
    block_cap: usize,
) -> Result<BlockParams> {
    let points = search_block_params(params, p_target, quotas, durations, replicas, block_cap)?;
    match points.iter().find(|p| p.accepted) {
        Some(pt) => Ok(BlockParams::from_matrix(&pt.matrix, p_target, block_cap)),
        None => Err(Error::NotFound {
            what: "block parameters",
            best: points.iter().map(|p| p.matrix.min_lower()).fold(0.0, f64::max),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{CubeDomain, DispersalKernel, KernelFamily};

    fn params(lambda: f64) -> SimulationParams {
        let kernel = DispersalKernel::new(1, KernelFamily::LazyNearestNeighbor { laziness: 0.2 }).unwrap();
        let mut p = SimulationParams::new(lambda, kernel, CubeDomain::discrete(1, 11).unwrap());
        p.seed = 5;
        p
    }

    #[test]
    fn vanishing_duration() {
        let m = estimate_block_matrix(&params(3.0), 2, 1e-6, 2000, 10_000).unwrap();
        assert!(m.c[0][0].estimate > 0.99 && m.c[1][1].estimate > 0.99);
        assert!(m.c[0][1].estimate < 0.01 && m.c[1][0].estimate < 0.01);
    }

    #[test]
    fn pure_death_blocks_fail() {
        let m = estimate_block_matrix(&params(0.0), 1, 8.0, 2000, 10_000).unwrap();
        assert!(m.c.iter().flatten().all(|p| p.estimate < 0.01));
    }

    #[test]
    fn search_edge_cases() {
        let p = params(3.0);
        let first = find_block_params(&p, 0.0, &[2, 1], &[8.0, 4.0], 500, 5_000).unwrap();
        assert_eq!((first.quota, first.duration), (1, 4.0));
        assert!(matches!(
            find_block_params(&p, 1.0, &[1], &[4.0], 500, 5_000),
            Err(Error::NotFound { .. })
        ));
    }

    #[test]
    fn thresholds_validated() {
        let m = estimate_block_matrix(&params(3.0), 1, 4.0, 500, 5_000).unwrap();
        let mut b = BlockParams::from_matrix(&m, 0.5, 5_000);
        b.validate().unwrap();
        b.c[0][1] = 0.4;
        assert!(b.validate().is_err());
        let toml_text = serde_json::to_string(&b).unwrap();
        let back: BlockParams = serde_json::from_str(&toml_text).unwrap();
        assert_eq!(back, b);
    }
}
