//! Block construction comparing the walk with oriented percolation.
//!
//! The cube is split at `x₁ = 0` into `A1 = {x₁ ≥ 0}` and `A2 = {x₁ < 0}`
//! (called `Q+` and `Q−` in continuous space). A vertex `(n, m)` of the
//! percolation lattice carries a collection of particles `α` whose shape
//! follows the parity rule
//!
//! ```text
//! S(α) = M·1_{A2}  if m ≡ n     (mod 4)
//! S(α) = M·1_{A1}  if m ≡ n + 2 (mod 4)
//! ```
//!
//! in discrete space, and `|α ∩ Q| = M + 1` for the corresponding half in
//! continuous space. A bond `(n, m) → (n ± 1, m + 1)` is open when the
//! descendants of `α` after one block of duration `T` dominate the shape of
//! the target vertex and an independent uniform falls below `p / c_ij`.

mod block;
mod ledger;

pub use block::{
    estimate_block_matrix, find_block_params, search_block_params, BlockMatrix, BlockParams, SearchPoint,
};
pub use ledger::{
    build_percolation_from_brw, integer_time_variant, restart_until_percolation, AlphaRecord, AttemptRecord,
    BlockLedger, ClockRule, Disciplines, EdgeCounts, EdgeRecord, RenormOptions, Renormalizer,
};

use serde::{Deserialize, Serialize};

use crate::engine::ParticleConfiguration;
use crate::kernel::{CubeDomain, Space};

/// One of the two halves of the cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Half {
    /// `x₁ ≥ 0`
    A1,
    /// `x₁ < 0`
    A2,
}

impl Half {
    pub const BOTH: [Half; 2] = [Half::A1, Half::A2];

    #[inline]
    pub fn of(x: &[f64]) -> Half {
        if x[0] >= 0.0 {
            Half::A1
        } else {
            Half::A2
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Half::A1 => 0,
            Half::A2 => 1,
        }
    }

    pub fn label(self, space: Space) -> &'static str {
        match (self, space) {
            (Half::A1, Space::Discrete) => "A1",
            (Half::A2, Space::Discrete) => "A2",
            (Half::A1, Space::Continuous) => "Q+",
            (Half::A2, Space::Continuous) => "Q-",
        }
    }
}

/// The half prescribed for vertex `(n, m)` by the parity rule.
pub fn vertex_half(n: i64, m: u32) -> Half {
    debug_assert_eq!((n + i64::from(m)).rem_euclid(2), 0);
    if (i64::from(m) - n).rem_euclid(4) == 0 {
        Half::A2
    } else {
        Half::A1
    }
}

/// Per-site counts (discrete) or per-half counts (continuous) of a set of
/// particles, with the block events defined on them.
#[derive(Debug, Clone)]
pub(crate) struct Tally {
    domain: CubeDomain,
    counts: Vec<u32>,
    halves: [u32; 2],
    half_sites: [Vec<usize>; 2],
}

impl Tally {
    pub(crate) fn new(domain: &CubeDomain) -> Self {
        let (counts, half_sites) = match domain.space() {
            Space::Discrete => {
                let sites = domain.sites();
                let mut hs: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
                for (i, s) in sites.iter().enumerate() {
                    let x: Vec<f64> = s.iter().map(|&v| v as f64).collect();
                    hs[Half::of(&x).index()].push(i);
                }
                (vec![0; sites.len()], hs)
            }
            Space::Continuous => (Vec::new(), [Vec::new(), Vec::new()]),
        };
        Self {
            domain: domain.clone(),
            counts,
            halves: [0, 0],
            half_sites,
        }
    }

    pub(crate) fn clear(&mut self) {
        self.counts.fill(0);
        self.halves = [0, 0];
    }

    #[inline]
    pub(crate) fn add(&mut self, x: &[f64]) {
        self.halves[Half::of(x).index()] += 1;
        if !self.counts.is_empty() {
            self.counts[self.domain.site_index(x)] += 1;
        }
    }

    #[inline]
    pub(crate) fn remove(&mut self, x: &[f64]) {
        self.halves[Half::of(x).index()] -= 1;
        if !self.counts.is_empty() {
            self.counts[self.domain.site_index(x)] -= 1;
        }
    }

    pub(crate) fn fill_from(&mut self, state: &ParticleConfiguration, mut keep: impl FnMut(usize) -> bool) {
        self.clear();
        for i in 0..state.len() {
            if keep(i) {
                self.add(state.position(i));
            }
        }
    }

    /// Discrete: at least `quota` particles on every site of `half`.
    /// Continuous: more than `quota` particles in `half`.
    pub(crate) fn meets(&self, half: Half, quota: u32) -> bool {
        match self.domain.space() {
            Space::Discrete => self.half_sites[half.index()].iter().all(|&s| self.counts[s] >= quota),
            Space::Continuous => self.halves[half.index()] > quota,
        }
    }

    pub(crate) fn half_sites(&self, half: Half) -> &[usize] {
        &self.half_sites[half.index()]
    }

    pub(crate) fn count_at(&self, site: usize) -> u32 {
        self.counts[site]
    }

    pub(crate) fn in_half(&self, half: Half) -> u32 {
        self.halves[half.index()]
    }
}

/// The seed configuration of a block started in `half`: `M` particles on
/// every site of the half (discrete), or `M + 1` particles at the corner of
/// the half farthest from the other half (continuous).
pub fn block_seed(domain: &CubeDomain, half: Half, quota: u32) -> ParticleConfiguration {
    let dim = domain.dim();
    let mut positions = Vec::new();
    match domain.space() {
        Space::Discrete => {
            for s in domain.sites() {
                let x: Vec<f64> = s.iter().map(|&v| v as f64).collect();
                if Half::of(&x) == half {
                    for _ in 0..quota {
                        positions.push(x.clone());
                    }
                }
            }
        }
        Space::Continuous => {
            let l = domain.side();
            let corner = match half {
                Half::A1 => l / 2.0 * (1.0 - 1e-9),
                Half::A2 => -l / 2.0,
            };
            for _ in 0..=quota {
                positions.push(vec![corner; dim]);
            }
        }
    }
    ParticleConfiguration::from_positions(dim, &positions)
}
