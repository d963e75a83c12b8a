use std::collections::{HashMap, HashSet};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::kernel::JumpSampler;
use crate::rng::{Lane, RandomStream};

use super::{
    finish, Event, ExtinctionRecord, Genealogy, Outcome, ParticleConfiguration, ParticleId, Simulation,
    SimulationParams, UNTAGGED,
};

const SMALL: super::Tag = 1;

/// Result of a monotone pair run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub big: ExtinctionRecord,
    /// Outcome of the restricted process; its extinction time is the first
    /// time no descendant of the small initial set is alive.
    pub small: Outcome,
    pub small_peak: usize,
    /// Number of events at which containment was verified.
    pub checked_events: u64,
}

/// A failed containment check, reported as [`Error::Invariant`].
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingViolation {
    pub time: f64,
    pub id: ParticleId,
    pub reason: &'static str,
}

impl From<CouplingViolation> for Error {
    fn from(v: CouplingViolation) -> Self {
        Error::Invariant(format!("containment broken at t={} for particle {}: {}", v.time, v.id.0, v.reason))
    }
}

/// Runs the process from `big` and, on the same marks, the process from
/// `small`: the latter is the set of descendants of `small` inside the big
/// run. Containment is checked after every event against an independently
/// maintained copy of the small configuration.
pub fn run_coupled<K: JumpSampler>(
    params: &SimulationParams<K>,
    small: &ParticleConfiguration,
    big: &ParticleConfiguration,
) -> Result<CoupledRun> {
    let started = Instant::now();
    let mut initial = big.clone();
    initial.clear_tags();
    let mut shadow: HashMap<ParticleId, Vec<f64>> = HashMap::with_capacity(small.len());
    for i in 0..small.len() {
        let j = initial
            .index_of(small.id(i))
            .filter(|&j| initial.position(j) == small.position(i))
            .ok_or_else(|| Error::Precondition(format!("particle {} of the small set is not in the big set", small.id(i).0)))?;
        initial.set_tag(j, SMALL);
        shadow.insert(small.id(i), small.position(i).to_vec());
    }

    let mut sim = Simulation::new(params, &initial)?;
    let mut big_index: HashMap<ParticleId, usize> = HashMap::new();
    let mut small_tau = if shadow.is_empty() { Some(0.0) } else { None };
    let mut small_peak = shadow.len();
    let mut checked = 0u64;
    let mut violation = None;

    let outcome = finish(&mut sim, |event, state| {
        if violation.is_some() {
            return;
        }
        match *event {
            Event::Death { id, .. } => {
                shadow.remove(&id);
            }
            Event::Birth { parent, child, retained: true, .. } => {
                if shadow.contains_key(&parent) {
                    let pos = state.position(state.len() - 1).to_vec();
                    shadow.insert(child, pos);
                }
            }
            _ => {}
        }
        small_peak = small_peak.max(shadow.len());
        if shadow.is_empty() && small_tau.is_none() {
            small_tau = Some(event.time());
        }
        big_index.clear();
        let mut tagged = 0;
        for i in 0..state.len() {
            big_index.insert(state.id(i), i);
            if state.tag(i) != UNTAGGED {
                tagged += 1;
            }
        }
        for (id, pos) in &shadow {
            let reason = match big_index.get(id) {
                None => Some("missing from the big process"),
                Some(&i) if state.position(i) != pos.as_slice() => Some("position differs"),
                Some(&i) if state.tag(i) != SMALL => Some("lineage label lost"),
                _ => None,
            };
            if let Some(reason) = reason {
                violation = Some(CouplingViolation {
                    time: event.time(),
                    id: *id,
                    reason,
                });
                return;
            }
        }
        if tagged != shadow.len() {
            violation = Some(CouplingViolation {
                time: event.time(),
                id: ParticleId(u64::MAX),
                reason: "labelled particles outside the restricted process",
            });
            return;
        }
        checked += 1;
    });
    if let Some(v) = violation {
        return Err(v.into());
    }
    let small_outcome = match small_tau {
        Some(tau) => Outcome::Extinct { tau },
        None => match outcome {
            Outcome::CensoredCap { .. } => Outcome::CensoredCap { alive: shadow.len() },
            _ => Outcome::CensoredHorizon { alive: shadow.len() },
        },
    };
    Ok(CoupledRun {
        big: ExtinctionRecord {
            seed: params.seed,
            outcome,
            peak_population: sim.peak(),
            events: sim.events(),
            wall_time: started.elapsed(),
        },
        small: small_outcome,
        small_peak,
        checked_events: checked,
    })
}

impl<'p, K: JumpSampler> Simulation<'p, K> {
    /// Keeps only the listed particles; the others become untracked. The
    /// mark stream continues, so keeping every live particle is the identity.
    pub fn restrict_to(&mut self, ids: &[ParticleId]) -> Result<()> {
        let keep: HashSet<ParticleId> = ids.iter().copied().collect();
        let alive: HashSet<ParticleId> = self.state().ids().iter().copied().collect();
        if let Some(bad) = keep.iter().find(|id| !alive.contains(id)) {
            return Err(Error::invalid("restart collection", format!("particle {} is not alive at t={}", bad.0, self.time())));
        }
        self.untrack_where(|id, _, _| !keep.contains(&id));
        Ok(())
    }
}

impl<K: JumpSampler> Clone for Simulation<'_, K> {
    fn clone(&self) -> Self {
        Self {
            params: self.params,
            rng: self.rng.clone(),
            time: self.time,
            state: self.state.clone(),
            next_id: self.next_id,
            events: self.events,
            peak: self.peak,
            genealogy: self.genealogy.clone(),
            parent_pos: self.parent_pos.clone(),
            offspring_pos: self.offspring_pos.clone(),
            death_threshold: self.death_threshold,
        }
    }
}

/// Restarts from the particles `ids` of `state` (the configuration alive at
/// time `time`) with fresh marks drawn from `params.seed`. The horizon is
/// measured from the restart time; reported extinction times are absolute.
pub fn run_from<K: JumpSampler + Clone>(
    params: &SimulationParams<K>,
    state: &ParticleConfiguration,
    time: f64,
    ids: &[ParticleId],
    genealogy: Option<&Genealogy>,
) -> Result<(ExtinctionRecord, Option<Genealogy>)> {
    let started = Instant::now();
    let mut keep = HashSet::with_capacity(ids.len());
    for id in ids {
        if state.index_of(*id).is_none() {
            return Err(Error::invalid("restart collection", format!("particle {} is not alive at t={time}", id.0)));
        }
        if let Some(g) = genealogy {
            if !g.alive_at(*id, time) {
                return Err(Error::invalid("restart collection", format!("particle {} is not alive in the genealogy", id.0)));
            }
        }
        keep.insert(*id);
    }
    let restricted = state.restricted_to(&keep);
    let mut shifted = params.clone();
    shifted.horizon = time + params.horizon;
    let rng = RandomStream::new(params.seed, Lane::Engine);
    let mut sim = Simulation::start(&shifted, restricted, time, rng)?;
    let outcome = finish(&mut sim, |_, _| {});
    let record = ExtinctionRecord {
        seed: params.seed,
        outcome,
        peak_population: sim.peak(),
        events: sim.events(),
        wall_time: started.elapsed(),
    };
    Ok((record, sim.into_genealogy()))
}
