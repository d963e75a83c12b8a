//! A continuous-space walk and a grid walk with kernel `a_n` run on one mark
//! source, so that the grid population never exceeds the continuous one.
//!
//! Every grid particle is associated with a continuous particle sitting in
//! its cell. Deaths are mirrored through the association. When an associated
//! continuous particle at `x` gives birth at `y`, its grid partner gives birth
//! at the cell of `y` with probability
//!
//! ```text
//! a_n(j^y − j^x) / (2^{-nd} · a(y − x))
//! ```
//!
//! which is at most one because `a_n` is the cell-volume times the infimum
//! of `a` over all differences of points of the two cells. The accepted
//! newborn is associated with the continuous newborn.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    run, Event, Outcome, ParticleConfiguration, ParticleId, Simulation, SimulationParams, Step,
};
use crate::error::{Error, Result};
use crate::kernel::{CubeDomain, GridKernel, Space};
use crate::rng::{replica_seed, Lane, RandomStream};
use crate::stats::Proportion;

/// Summary of one coupled run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledPair {
    pub seed: u64,
    pub grid: Outcome,
    pub continuous: Outcome,
    pub max_grid_population: usize,
    pub max_continuous_population: usize,
    /// Population domination, injectivity and cell agreement held after every event.
    pub domination_ok: bool,
    pub events: u64,
    pub candidate_births: u64,
    pub accepted_births: u64,
    /// Largest acceptance ratio seen.
    pub max_ratio: f64,
}

struct GridSide<'k> {
    kernel: &'k GridKernel,
    domain: CubeDomain,
    /// grid id → (continuous partner, grid position in grid units)
    particles: HashMap<ParticleId, (ParticleId, Vec<i64>)>,
    partner_of: HashMap<ParticleId, ParticleId>,
    next_id: u64,
    peak: usize,
    extinct_at: Option<f64>,
}

impl GridSide<'_> {
    fn len(&self) -> usize {
        self.particles.len()
    }
}

fn cells(kernel: &GridKernel, x: &[f64]) -> Vec<i64> {
    x.iter().map(|&v| kernel.cell_index(v)).collect()
}

/// Runs the pair from one particle at the origin until each run is extinct
/// or has reached `population_cap` (or the horizon passes). Once the
/// continuous run reaches the cap its outcome is fixed and its particles
/// without a grid partner are dropped, which leaves the grid run's law
/// unchanged.
pub fn run_coupled_spaces(params: &SimulationParams, grid: &GridKernel) -> Result<CoupledPair> {
    if params.kernel.space() != Space::Continuous {
        return Err(Error::Precondition("space coupling needs a continuous kernel".into()));
    }
    if grid.dim() != params.kernel.dim() {
        return Err(Error::invalid("resolution", "grid kernel dimension differs from the kernel"));
    }
    let cap = params.population_cap;
    let mut cont_params = params.clone();
    cont_params.population_cap = usize::MAX;
    cont_params.record_genealogy = false;
    let dim = params.kernel.dim();
    let origin = ParticleConfiguration::single(&vec![0.0; dim]);
    let mut sim = Simulation::new(&cont_params, &origin)?;
    let mut accept = RandomStream::new(params.seed, Lane::Coupling);
    let h_d = grid.spacing().powi(dim as i32);

    let mut side = GridSide {
        kernel: grid,
        domain: grid.grid_domain(),
        particles: HashMap::new(),
        partner_of: HashMap::new(),
        next_id: 1,
        peak: 1,
        extinct_at: None,
    };
    side.particles.insert(ParticleId(0), (ParticleId(0), vec![0; dim]));
    side.partner_of.insert(ParticleId(0), ParticleId(0));

    let mut max_cont = 1usize;
    let mut candidates = 0u64;
    let mut accepted = 0u64;
    let mut max_ratio: f64 = 0.0;
    let mut domination_ok = true;
    let mut jump = vec![0i64; dim];

    let mut cont_outcome: Option<Outcome> = None;
    loop {
        let n = sim.population();
        if cont_outcome.is_none() {
            if n == 0 {
                cont_outcome = Some(Outcome::Extinct { tau: sim.time() });
            } else if n >= cap {
                cont_outcome = Some(Outcome::CensoredCap { alive: n });
            }
        }
        if cont_outcome.is_some() && (side.len() == 0 || side.len() >= cap) {
            break;
        }
        if matches!(cont_outcome, Some(Outcome::CensoredCap { .. })) {
            // the continuous run counts as surviving; particles without a grid
            // partner can no longer influence the grid run
            sim.untrack_where(|id, _, _| !side.partner_of.contains_key(&id));
        }
        let event = match sim.step_until(cont_params.horizon) {
            Step::Event(e) => e,
            Step::Limit => {
                cont_outcome.get_or_insert(Outcome::CensoredHorizon { alive: sim.population() });
                break;
            }
            Step::Extinct => continue,
        };
        'grid: {
            match event {
                Event::Death { id, time } => {
                    if let Some(g) = side.partner_of.remove(&id) {
                        side.particles.remove(&g);
                        if side.particles.is_empty() {
                            side.extinct_at = Some(time);
                        }
                    }
                }
                Event::Birth { parent, child, retained, .. } => {
                    let Some(&g_parent) = side.partner_of.get(&parent) else {
                        break 'grid;
                    };
                    candidates += 1;
                    let x = sim.last_actor_position();
                    let y = sim.last_offspring_position();
                    let jx = &side.particles[&g_parent].1;
                    let jy = cells(grid, y);
                    for a in 0..dim {
                        jump[a] = jy[a] - jx[a];
                    }
                    let mass = grid.mass_at(&jump);
                    let u = accept.uniform();
                    if mass <= 0.0 {
                        break 'grid;
                    }
                    let diff: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
                    let density = params.kernel.density(&diff);
                    let ratio = if density > 0.0 { mass / (h_d * density) } else { f64::INFINITY };
                    max_ratio = max_ratio.max(ratio);
                    if ratio > 1.0 + 1e-9 {
                        return Err(Error::Invariant(format!(
                            "acceptance ratio {ratio} above one for jump {diff:?} (grid offset {jump:?})"
                        )));
                    }
                    if u >= ratio {
                        break 'grid;
                    }
                    accepted += 1;
                    let jy_f: Vec<f64> = jy.iter().map(|&k| k as f64).collect();
                    if side.domain.contains(&jy_f) {
                        if !retained {
                            return Err(Error::Invariant(
                                "grid birth retained while the continuous birth was suppressed".into(),
                            ));
                        }
                        let gid = ParticleId(side.next_id);
                        side.next_id += 1;
                        side.particles.insert(gid, (child, jy));
                        side.partner_of.insert(child, gid);
                        side.peak = side.peak.max(side.len());
                    }
                }
                Event::Void { .. } => {}
            }
        }
        let n_cont = sim.population();
        max_cont = max_cont.max(n_cont);
        domination_ok &= side.len() <= n_cont && side.partner_of.len() == side.len();
        domination_ok &= association_consistent(&side, sim.state());
        if !domination_ok {
            return Err(Error::Invariant(format!(
                "grid population {} not dominated by continuous population {} at t={}",
                side.len(),
                n_cont,
                sim.time()
            )));
        }
    }
    let cont_outcome = cont_outcome.expect("loop exits with a continuous outcome");
    domination_ok &= association_consistent(&side, sim.state());
    let grid_outcome = if side.len() == 0 {
        Outcome::Extinct {
            tau: side.extinct_at.unwrap_or(0.0),
        }
    } else if side.len() >= cap {
        Outcome::CensoredCap { alive: side.len() }
    } else {
        Outcome::CensoredHorizon { alive: side.len() }
    };
    if !grid_outcome.is_extinct() && cont_outcome.is_extinct() {
        return Err(Error::Invariant("grid process alive after the continuous process died".into()));
    }
    Ok(CoupledPair {
        seed: params.seed,
        grid: grid_outcome,
        continuous: cont_outcome,
        max_grid_population: side.peak,
        max_continuous_population: max_cont,
        domination_ok,
        events: sim.events(),
        candidate_births: candidates,
        accepted_births: accepted,
        max_ratio,
    })
}

/// Every grid particle has a distinct live partner located in its cell.
fn association_consistent(side: &GridSide, cont: &ParticleConfiguration) -> bool {
    let mut index = HashMap::with_capacity(cont.len());
    for i in 0..cont.len() {
        index.insert(cont.id(i), i);
    }
    let mut seen = std::collections::HashSet::with_capacity(side.len());
    side.particles.iter().all(|(gid, (partner, pos))| {
        seen.insert(*partner)
            && side.partner_of.get(partner) == Some(gid)
            && index
                .get(partner)
                .is_some_and(|&i| cells(side.kernel, cont.position(i)) == *pos)
    })
}

/// Coupled replicas `0..replicas` seeded from `params.seed`.
pub fn run_coupled_replicas(params: &SimulationParams, grid: &GridKernel, replicas: usize) -> Result<Vec<CoupledPair>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let mut p = params.clone();
            p.seed = replica_seed(params.seed, i);
            run_coupled_spaces(&p, grid)
        })
        .collect()
}

/// Survival frequencies of the coupled pair and of a standalone grid walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub replicas: usize,
    pub grid: Proportion,
    pub continuous: Proportion,
    /// The grid walk with kernel `a_n` run on its own, same cap and horizon.
    pub standalone_grid: Proportion,
    /// `λ · Σ a_n ≤ 1`.
    pub subcritical_grid: bool,
    /// Grid survival does not exceed continuous survival plus two CI half-widths.
    pub consistent: bool,
    pub domination_failures: usize,
}

/// The standalone grid walk driven by `a_n`, in grid units.
pub fn grid_params(params: &SimulationParams, grid: &GridKernel) -> SimulationParams<GridKernel> {
    let mut p = SimulationParams::new(params.branching_rate, grid.clone(), grid.grid_domain());
    p.horizon = params.horizon;
    p.population_cap = params.population_cap;
    p.seed = params.seed;
    p
}

pub fn survival_transfer_report(params: &SimulationParams, grid: &GridKernel, replicas: usize) -> Result<TransferReport> {
    let pairs = run_coupled_replicas(params, grid, replicas)?;
    let survived = |o: &Outcome| !o.is_extinct();
    let g = pairs.iter().filter(|p| survived(&p.grid)).count() as u64;
    let c = pairs.iter().filter(|p| survived(&p.continuous)).count() as u64;
    let mut standalone = grid_params(params, grid);
    standalone.seed = crate::rng::mix64(params.seed ^ 0x5354_414e_4400);
    let origin = ParticleConfiguration::single(&vec![0.0; grid.dim()]);
    let alone: Result<Vec<bool>> = (0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let mut p = standalone.clone();
            p.seed = replica_seed(standalone.seed, i);
            run(&p, &origin).map(|(r, _)| survived(&r.outcome))
        })
        .collect();
    let s = alone?.iter().filter(|b| **b).count() as u64;
    let n = replicas as u64;
    let grid_p = Proportion::new(g, n);
    let cont_p = Proportion::new(c, n);
    Ok(TransferReport {
        replicas,
        consistent: replicas == 0 || grid_p.estimate <= cont_p.estimate + 2.0 * cont_p.half_width(),
        grid: grid_p,
        continuous: cont_p,
        standalone_grid: Proportion::new(s, n),
        subcritical_grid: params.branching_rate * grid.total_mass() <= 1.0,
        domination_failures: pairs.iter().filter(|p| !p.domination_ok).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{discretize, min_resolution_supercritical, DiscretizeOptions, DispersalKernel, KernelFamily};

    fn setup(lambda: f64, n: u32) -> (SimulationParams, GridKernel) {
        let kernel = DispersalKernel::new(1, KernelFamily::UniformBall { radius: 1.0 }).unwrap();
        let domain = CubeDomain::continuous(1, 10.0).unwrap();
        let grid = discretize(&kernel, &domain, n, &DiscretizeOptions::default()).unwrap();
        let mut p = SimulationParams::new(lambda, kernel, domain);
        p.population_cap = 100;
        p.horizon = 200.0;
        (p, grid)
    }

    #[test]
    fn domination_across_replicas() {
        let (p, grid) = setup(3.0, 4);
        let pairs = run_coupled_replicas(&p, &grid, 1000).unwrap();
        let mut grid_alive = 0;
        let mut cont_alive = 0;
        for pair in &pairs {
            assert!(pair.domination_ok);
            assert!(pair.max_grid_population <= pair.max_continuous_population);
            assert!(pair.max_ratio <= 1.0 + 1e-9);
            if !pair.grid.is_extinct() {
                grid_alive += 1;
                assert!(!pair.continuous.is_extinct());
            }
            if !pair.continuous.is_extinct() {
                cont_alive += 1;
            }
        }
        assert!(grid_alive <= cont_alive);
        assert!(grid_alive > 0);
    }

    #[test]
    fn zero_mass_grid_is_pure_death() {
        let kernel = DispersalKernel::new(1, KernelFamily::UniformBall { radius: 0.1 }).unwrap();
        let domain = CubeDomain::continuous(1, 10.0).unwrap();
        let grid = discretize(&kernel, &domain, 1, &DiscretizeOptions::default()).unwrap();
        assert_eq!(grid.total_mass(), 0.0);
        let mut p = SimulationParams::new(3.0, kernel, domain);
        p.population_cap = 50;
        let mut lifetimes = Vec::new();
        for seed in 0..2000 {
            p.seed = seed;
            let pair = run_coupled_spaces(&p, &grid).unwrap();
            assert_eq!(pair.accepted_births, 0);
            assert_eq!(pair.max_grid_population, 1);
            lifetimes.push(pair.grid.extinction_time().unwrap());
        }
        assert!(crate::stats::ks_exponential(&lifetimes, 1.0) > 0.001);
    }

    #[test]
    fn transfer_report_supercritical() {
        let kernel = DispersalKernel::new(1, KernelFamily::UniformBall { radius: 1.0 }).unwrap();
        let domain = CubeDomain::continuous(1, 10.0).unwrap();
        let grid = min_resolution_supercritical(&kernel, &domain, 5.0, 12, &DiscretizeOptions::default()).unwrap();
        let mut p = SimulationParams::new(5.0, kernel, domain);
        p.population_cap = 100;
        p.horizon = 200.0;
        let r = survival_transfer_report(&p, &grid, 2000).unwrap();
        assert!(!r.subcritical_grid);
        assert!(r.grid.lower > 0.0);
        assert!(r.consistent);
        assert_eq!(r.domination_failures, 0);
        let width = r.grid.upper - r.grid.lower + r.standalone_grid.upper - r.standalone_grid.lower;
        assert!((r.grid.estimate - r.standalone_grid.estimate).abs() < width, "{r:?}");
    }

    #[test]
    fn transfer_report_subcritical_and_empty() {
        let (mut p, grid) = setup(0.5, 3);
        p.population_cap = 50;
        let r = survival_transfer_report(&p, &grid, 1000).unwrap();
        assert!(r.subcritical_grid);
        assert!(r.grid.estimate < 0.01 && r.continuous.estimate < 0.01);
        let empty = survival_transfer_report(&p, &grid, 0).unwrap();
        assert_eq!(empty.replicas, 0);
        assert!(empty.consistent);
    }

    #[test]
    fn discrete_kernel_rejected() {
        let (_, grid) = setup(3.0, 2);
        let kernel = DispersalKernel::new(1, KernelFamily::LazyNearestNeighbor { laziness: 0.5 }).unwrap();
        let p = SimulationParams::new(3.0, kernel, CubeDomain::discrete(1, 11).unwrap());
        assert!(run_coupled_spaces(&p, &grid).is_err());
    }
}
