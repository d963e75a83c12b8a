//! Oriented bond percolation on `G = {(n, m) : n + m even, m ≥ 0}`.
//!
//! Vertex `(n, m)` has two upward bonds, to `(n − 1, m + 1)` and
//! `(n + 1, m + 1)`. Bond states come from [`keyed_uniform`] indexed by the
//! bond, so a run only looks at bonds leaving reached vertices and two runs
//! with the same seed but different `p` see the same uniforms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keyed_uniform, mix64, replica_seed};
use crate::stats::{tail_from_values, Proportion, TailEstimate};

/// Direction of an upward bond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bond {
    Left,
    Right,
}

impl Bond {
    pub fn offset(self) -> i64 {
        match self {
            Bond::Left => -1,
            Bond::Right => 1,
        }
    }

    pub fn target(self, n: i64, m: u32) -> (i64, u32) {
        (n + self.offset(), m + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level", rename_all = "snake_case")]
pub enum Sigma {
    /// First level with no reached vertex.
    Finite(u32),
    /// The top level of a finite-height lattice was reached.
    Survived(u32),
}

impl Sigma {
    pub fn finite(self) -> Option<u32> {
        match self {
            Sigma::Finite(m) => Some(m),
            Sigma::Survived(_) => None,
        }
    }

    pub fn survived(self) -> bool {
        matches!(self, Sigma::Survived(_))
    }

    /// Number of levels above the origin that were reached.
    pub fn levels_reached(self) -> u32 {
        match self {
            Sigma::Finite(m) => m - 1,
            Sigma::Survived(h) => h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercolationRun {
    pub seed: u64,
    pub p: f64,
    pub height: u32,
    pub sigma: Sigma,
    /// Reached horizontal coordinates per level, when recorded.
    pub reached: Option<Vec<Vec<i64>>>,
}

/// Bond uniforms of one lattice realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BondField {
    key: u64,
}

impl BondField {
    pub fn new(seed: u64) -> Self {
        Self { key: mix64(seed ^ 0x5045_5243) }
    }

    #[inline]
    pub fn uniform(&self, n: i64, m: u32, bond: Bond) -> f64 {
        let dir = matches!(bond, Bond::Right) as u64;
        let x = (n + (1 << 30)) as u64;
        keyed_uniform(self.key, (u64::from(m) << 33) | (x << 1) | dir)
    }
}

/// Propagates the open cluster of the origin level by level. `open(n, m, b)`
/// is queried once per bond leaving a reached vertex.
pub fn propagate(height: u32, record: bool, mut open: impl FnMut(i64, u32, Bond) -> bool) -> (Sigma, Option<Vec<Vec<i64>>>) {
    let width = 2 * height as usize + 3;
    let offset = height as i64 + 1;
    let mut cur = vec![false; width];
    let mut next = vec![false; width];
    cur[offset as usize] = true;
    let (mut lo, mut hi) = (offset as usize, offset as usize);
    let mut levels = record.then(|| vec![vec![0i64]]);
    for m in 0..height {
        let (mut nlo, mut nhi) = (usize::MAX, 0usize);
        for i in lo..=hi {
            if !cur[i] {
                continue;
            }
            cur[i] = false;
            let n = i as i64 - offset;
            for bond in [Bond::Left, Bond::Right] {
                if open(n, m, bond) {
                    let j = (i as i64 + bond.offset()) as usize;
                    next[j] = true;
                    nlo = nlo.min(j);
                    nhi = nhi.max(j);
                }
            }
        }
        if nlo == usize::MAX {
            return (Sigma::Finite(m + 1), levels);
        }
        if let Some(l) = levels.as_mut() {
            l.push((nlo..=nhi).filter(|&j| next[j]).map(|j| j as i64 - offset).collect());
        }
        std::mem::swap(&mut cur, &mut next);
        lo = nlo;
        hi = nhi;
    }
    (Sigma::Survived(height), levels)
}

fn check(p: f64, height: u32) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("p", format!("must lie in [0, 1], got {p}")));
    }
    if height == 0 {
        return Err(Error::invalid("height", "must be at least 1"));
    }
    Ok(())
}

pub fn percolate(p: f64, height: u32, seed: u64) -> Result<PercolationRun> {
    percolate_with(p, height, seed, false)
}

pub fn percolate_with(p: f64, height: u32, seed: u64, record: bool) -> Result<PercolationRun> {
    check(p, height)?;
    let field = BondField::new(seed);
    let (sigma, reached) = propagate(height, record, |n, m, b| field.uniform(n, m, b) < p);
    Ok(PercolationRun {
        seed,
        p,
        height,
        sigma,
        reached,
    })
}

/// Independent runs with seeds `replica_seed(root, i)`, in replica order.
pub fn percolate_replicas(p: f64, height: u32, replicas: usize, root: u64) -> Result<Vec<PercolationRun>> {
    check(p, height)?;
    (0..replicas as u64)
        .into_par_iter()
        .map(|i| percolate(p, height, replica_seed(root, i)))
        .collect()
}

/// `P̂{r < σ < ∞}` for `r = 0..=height`; survivors count in the denominator only.
pub fn sigma_tail(p: f64, height: u32, replicas: usize, root: u64) -> Result<TailEstimate> {
    let runs = percolate_replicas(p, height, replicas, root)?;
    sigma_tail_of(&runs)
}

pub fn sigma_tail_of(runs: &[PercolationRun]) -> Result<TailEstimate> {
    let height = runs.iter().map(|r| r.height).max().ok_or(Error::EmptyInput("no percolation runs"))?;
    let values: Vec<Option<f64>> = runs.iter().map(|r| r.sigma.finite().map(f64::from)).collect();
    let grid: Vec<f64> = (0..=height).map(f64::from).collect();
    tail_from_values(&values, &grid)
}

/// Frequency of reaching the top level. This overestimates the percolation
/// probability and decreases with the height.
pub fn percolation_probability(p: f64, height: u32, replicas: usize, root: u64) -> Result<Proportion> {
    let runs = percolate_replicas(p, height, replicas, root)?;
    let survived = runs.iter().filter(|r| r.sigma.survived()).count() as u64;
    Ok(Proportion::new(survived, replicas as u64))
}
