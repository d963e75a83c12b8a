use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Proportion;
use crate::engine::{run, ParticleConfiguration, SimulationParams};
use crate::error::Result;
use crate::kernel::JumpSampler;
use crate::rng::{mix64, replica_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub position: Vec<f64>,
    /// Replicas alive at the horizon or at the population cap.
    pub survival: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalProbe {
    pub rows: Vec<ProbeRow>,
    /// Smallest survival frequency over the probed positions.
    pub delta_hat: Option<f64>,
}

/// Survival frequency from a single particle at each listed position.
/// Position `k`, replica `r` uses seed `replica_seed(mix64(seed ^ k), r)`.
pub fn survival_probe<K: JumpSampler + Clone>(
    params: &SimulationParams<K>,
    positions: &[Vec<f64>],
    replicas: usize,
) -> Result<SurvivalProbe> {
    params.validate()?;
    for p in positions {
        params.domain.check_position(p)?;
    }
    let mut rows = Vec::with_capacity(positions.len());
    for (k, pos) in positions.iter().enumerate() {
        let initial = ParticleConfiguration::single(pos);
        let root = mix64(params.seed ^ k as u64);
        let survived: Result<Vec<bool>> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| {
                let mut p = params.clone();
                p.seed = replica_seed(root, r);
                p.record_genealogy = false;
                run(&p, &initial).map(|(rec, _)| !rec.outcome.is_extinct())
            })
            .collect();
        let alive = survived?.iter().filter(|s| **s).count() as u64;
        rows.push(ProbeRow {
            position: pos.clone(),
            survival: Proportion::new(alive, replicas as u64),
        });
    }
    let delta_hat = rows.iter().map(|r| r.survival.estimate).min_by(f64::total_cmp);
    Ok(SurvivalProbe { rows, delta_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{CubeDomain, DispersalKernel, KernelFamily};

    fn params(lambda: f64) -> SimulationParams {
        let kernel = DispersalKernel::new(1, KernelFamily::LazyNearestNeighbor { laziness: 0.2 }).unwrap();
        let mut p = SimulationParams::new(lambda, kernel, CubeDomain::discrete(1, 11).unwrap());
        p.population_cap = 200;
        p.seed = 17;
        p
    }

    #[test]
    fn empty_grid() {
        let r = survival_probe(&params(3.0), &[], 10).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.delta_hat, None);
    }

    #[test]
    fn subcritical_dies() {
        let pos: Vec<Vec<f64>> = (-5..=5).map(|x| vec![x as f64]).collect();
        let r = survival_probe(&params(0.5), &pos, 2000).unwrap();
        assert!(r.rows.iter().all(|row| row.survival.estimate < 0.01));
    }

    #[test]
    fn position_outside_rejected() {
        assert!(survival_probe(&params(3.0), &[vec![6.0]], 10).is_err());
    }

    #[test]
    fn centre_survives_more_than_edge() {
        let r = survival_probe(&params(3.0), &[vec![0.0], vec![5.0]], 4000).unwrap();
        assert!(r.rows[0].survival.estimate > r.rows[1].survival.estimate);
        assert_eq!(r.delta_hat, Some(r.rows[1].survival.estimate));
    }
}
