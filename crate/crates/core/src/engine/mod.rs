//! Event-driven simulation of the branching random walk on a cube.
//!
//! Each particle dies at rate 1 and branches at rate `λ`. The engine uses the
//! aggregate-rate form of these clocks: with `n` particles alive the next
//! event comes after an `Exp(n(1+λ))` wait, is a death with probability
//! `1/(1+λ)`, and otherwise a birth; victim and parent are picked uniformly
//! by one index draw into the live array. The live array keeps insertion
//! order and removes with `swap_remove`, which makes the pick (and therefore
//! every trajectory) a deterministic function of the seed.
//!
//! Offspring land at `parent + s` with `s` drawn from the kernel and are
//! suppressed when they land outside the cube.

mod coupled;
mod genealogy;

pub use coupled::{run_coupled, run_from, CoupledRun, CouplingViolation};
pub use genealogy::{Fate, Genealogy, GenealogyNode};

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{CubeDomain, DispersalKernel, JumpSampler, Space};
use crate::rng::{replica_seed, Lane, RandomStream};

/// Stable particle identifier, unique within one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParticleId(pub u64);

/// Label inherited by every offspring. Used to follow the descendants of a
/// chosen sub-collection inside the full process.
pub type Tag = u32;

pub const UNTAGGED: Tag = 0;

/// The set of live particles: ids, positions (flat, stride `dim`), tags.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfiguration {
    dim: usize,
    ids: Vec<ParticleId>,
    coords: Vec<f64>,
    tags: Vec<Tag>,
}

impl ParticleConfiguration {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            coords: Vec::new(),
            tags: Vec::new(),
        }
    }

    /// Particles at the given positions, with ids `0..k` and no tags.
    pub fn from_positions(dim: usize, positions: &[Vec<f64>]) -> Self {
        let mut c = Self::new(dim);
        for (i, p) in positions.iter().enumerate() {
            c.push(ParticleId(i as u64), p, UNTAGGED);
        }
        c
    }

    /// A single particle at `x`.
    pub fn single(x: &[f64]) -> Self {
        Self::from_positions(x.len(), &[x.to_vec()])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ParticleId] {
        &self.ids
    }

    #[inline]
    pub fn id(&self, i: usize) -> ParticleId {
        self.ids[i]
    }

    #[inline]
    pub fn position(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn tag(&self, i: usize) -> Tag {
        self.tags[i]
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn set_tag(&mut self, i: usize, tag: Tag) {
        self.tags[i] = tag;
    }

    pub fn clear_tags(&mut self) {
        self.tags.fill(UNTAGGED);
    }

    pub fn index_of(&self, id: ParticleId) -> Option<usize> {
        self.ids.iter().position(|x| *x == id)
    }

    pub fn push(&mut self, id: ParticleId, x: &[f64], tag: Tag) {
        debug_assert_eq!(x.len(), self.dim);
        self.ids.push(id);
        self.coords.extend_from_slice(x);
        self.tags.push(tag);
    }

    pub fn swap_remove(&mut self, i: usize) -> ParticleId {
        let last = self.ids.len() - 1;
        if i != last {
            let (head, tail) = self.coords.split_at_mut(last * self.dim);
            head[i * self.dim..(i + 1) * self.dim].copy_from_slice(&tail[..self.dim]);
        }
        self.coords.truncate(last * self.dim);
        self.tags.swap_remove(i);
        self.ids.swap_remove(i)
    }

    /// Per-site particle counts of a discrete cube, row-major.
    pub fn site_counts(&self, domain: &CubeDomain) -> Vec<u32> {
        let mut counts = vec![0u32; domain.site_count().unwrap_or(0) as usize];
        for i in 0..self.len() {
            counts[domain.site_index(self.position(i))] += 1;
        }
        counts
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.coords.chunks_exact(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// Restriction to the given ids, in the order they appear here.
    pub fn restricted_to(&self, keep: &std::collections::HashSet<ParticleId>) -> Self {
        let mut out = Self::new(self.dim);
        for i in 0..self.len() {
            if keep.contains(&self.ids[i]) {
                out.push(self.ids[i], self.position(i), self.tags[i]);
            }
        }
        out
    }
}

/// Model and run controls of a simulation.
#[derive(Debug, Clone)]
pub struct SimulationParams<K = DispersalKernel> {
    /// `λ`; zero gives a pure death process.
    pub branching_rate: f64,
    pub kernel: K,
    pub domain: CubeDomain,
    /// `T_max`.
    pub horizon: f64,
    /// Runs stop (and count as surviving) once the population reaches this size.
    pub population_cap: usize,
    pub seed: u64,
    pub record_genealogy: bool,
}

impl<K: JumpSampler> SimulationParams<K> {
    pub fn new(branching_rate: f64, kernel: K, domain: CubeDomain) -> Self {
        Self {
            branching_rate,
            kernel,
            domain,
            horizon: 1e3,
            population_cap: 1_000_000,
            seed: 0,
            record_genealogy: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if !(self.branching_rate.is_finite() && self.branching_rate >= 0.0) {
            errors.push(format!("lambda must be finite and nonnegative, got {}", self.branching_rate));
        }
        if !(self.horizon > 0.0) {
            errors.push(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.population_cap == 0 {
            errors.push("population cap must be at least 1".to_string());
        }
        if let Err(e) = self.domain.check_compatible(self.kernel.space(), self.kernel.dim()) {
            errors.push(e.to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid("simulation parameters", errors.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Death { time: f64, id: ParticleId },
    /// `retained == false` means the offspring landed outside the cube.
    Birth { time: f64, parent: ParticleId, child: ParticleId, retained: bool },
    /// A birth clock rang but the kernel's missing mass was drawn.
    Void { time: f64, parent: ParticleId },
}

impl Event {
    pub fn time(&self) -> f64 {
        match *self {
            Event::Death { time, .. } | Event::Birth { time, .. } | Event::Void { time, .. } => time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Event(Event),
    /// No event before the time limit; the clock now reads the limit.
    Limit,
    Extinct,
}

/// A running process.
pub struct Simulation<'p, K: JumpSampler = DispersalKernel> {
    params: &'p SimulationParams<K>,
    rng: RandomStream,
    time: f64,
    state: ParticleConfiguration,
    next_id: u64,
    events: u64,
    peak: usize,
    genealogy: Option<Genealogy>,
    parent_pos: Vec<f64>,
    offspring_pos: Vec<f64>,
    death_threshold: f64,
}

impl<'p, K: JumpSampler> Simulation<'p, K> {
    /// Starts at time 0 from `initial`, drawing from the engine lane of `params.seed`.
    pub fn new(params: &'p SimulationParams<K>, initial: &ParticleConfiguration) -> Result<Self> {
        Self::start(params, initial.clone(), 0.0, RandomStream::new(params.seed, Lane::Engine))
    }

    /// Starts at `time` from `state` with an explicit stream.
    pub fn start(params: &'p SimulationParams<K>, state: ParticleConfiguration, time: f64, rng: RandomStream) -> Result<Self> {
        params.validate()?;
        if state.dim() != params.domain.dim() {
            return Err(Error::invalid("initial configuration", "dimension differs from the domain"));
        }
        for i in 0..state.len() {
            params.domain.check_position(state.position(i))?;
        }
        let mut seen = std::collections::HashSet::new();
        if !state.ids().iter().all(|id| seen.insert(*id)) {
            return Err(Error::invalid("initial configuration", "duplicate particle ids"));
        }
        let next_id = state.ids().iter().map(|id| id.0 + 1).max().unwrap_or(0);
        let genealogy = params.record_genealogy.then(|| {
            let mut g = Genealogy::new();
            for i in 0..state.len() {
                g.insert(GenealogyNode {
                    id: state.id(i),
                    parent: None,
                    birth_time: time,
                    position: state.position(i).to_vec(),
                    fate: Fate::Alive,
                    children: Vec::new(),
                });
            }
            g
        });
        let dim = state.dim();
        Ok(Self {
            params,
            rng,
            time,
            peak: state.len(),
            state,
            next_id,
            events: 0,
            genealogy,
            parent_pos: vec![0.0; dim],
            offspring_pos: vec![0.0; dim],
            death_threshold: 1.0 / (1.0 + params.branching_rate),
        })
    }

    pub fn params(&self) -> &'p SimulationParams<K> {
        self.params
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn state(&self) -> &ParticleConfiguration {
        &self.state
    }

    /// Mutable access for relabelling tags. Positions and ids stay engine-owned.
    pub fn set_tag(&mut self, i: usize, tag: Tag) {
        self.state.set_tag(i, tag);
    }

    pub fn clear_tags(&mut self) {
        self.state.clear_tags();
    }

    pub fn population(&self) -> usize {
        self.state.len()
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn peak(&self) -> usize {
        self.peak
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn genealogy(&self) -> Option<&Genealogy> {
        self.genealogy.as_ref()
    }

    pub fn into_genealogy(self) -> Option<Genealogy> {
        self.genealogy
    }

    pub fn rng(&self) -> &RandomStream {
        &self.rng
    }

    /// Position of the particle that acted in the most recent event: the
    /// parent of a birth or void event, the victim of a death.
    pub fn last_actor_position(&self) -> &[f64] {
        &self.parent_pos
    }

    /// Offspring position of the most recent birth (possibly outside the cube).
    pub fn last_offspring_position(&self) -> &[f64] {
        &self.offspring_pos
    }

    /// Advances by one event, or to `limit` if the next event would come later.
    pub fn step_until(&mut self, limit: f64) -> Step {
        let n = self.state.len();
        if n == 0 {
            return Step::Extinct;
        }
        let rate = n as f64 * (1.0 + self.params.branching_rate);
        let dt = self.rng.exponential(rate);
        if self.time + dt > limit {
            // memoryless clocks: discarding the overshooting draw keeps the law
            self.time = self.time.max(limit);
            return Step::Limit;
        }
        self.time += dt;
        self.events += 1;
        let time = self.time;
        if self.rng.uniform() < self.death_threshold {
            let i = self.rng.index(n);
            self.parent_pos.copy_from_slice(self.state.position(i));
            let id = self.state.swap_remove(i);
            if let Some(g) = self.genealogy.as_mut() {
                g.set_fate(id, Fate::Died { time });
            }
            return Step::Event(Event::Death { time, id });
        }
        let i = self.rng.index(n);
        let parent = self.state.id(i);
        let tag = self.state.tag(i);
        self.parent_pos.copy_from_slice(self.state.position(i));
        if !self.params.kernel.sample_jump(&mut self.rng, &mut self.offspring_pos) {
            return Step::Event(Event::Void { time, parent });
        }
        for (o, p) in self.offspring_pos.iter_mut().zip(&self.parent_pos) {
            *o += p;
        }
        let child = ParticleId(self.next_id);
        self.next_id += 1;
        let retained = self.params.domain.contains(&self.offspring_pos);
        if retained {
            self.state.push(child, &self.offspring_pos, tag);
            self.peak = self.peak.max(self.state.len());
        }
        if let Some(g) = self.genealogy.as_mut() {
            g.insert(GenealogyNode {
                id: child,
                parent: Some(parent),
                birth_time: time,
                position: self.offspring_pos.clone(),
                fate: if retained { Fate::Alive } else { Fate::SuppressedAtBirth },
                children: Vec::new(),
            });
        }
        Step::Event(Event::Birth {
            time,
            parent,
            child,
            retained,
        })
    }

    /// Runs events until `limit`, extinction, or the population cap.
    pub fn advance_to(&mut self, limit: f64, mut on_event: impl FnMut(&Event, &Self)) -> Step {
        loop {
            if self.state.len() >= self.params.population_cap {
                return Step::Limit;
            }
            match self.step_until(limit) {
                Step::Event(e) => on_event(&e, self),
                other => return other,
            }
        }
    }

    /// Drops every live particle for which `drop` is true. Their genealogy
    /// nodes become `Untracked`.
    pub fn untrack_where(&mut self, mut drop: impl FnMut(ParticleId, &[f64], Tag) -> bool) -> usize {
        let mut i = 0;
        let mut removed = 0;
        while i < self.state.len() {
            if drop(self.state.id(i), self.state.position(i), self.state.tag(i)) {
                let id = self.state.swap_remove(i);
                if let Some(g) = self.genealogy.as_mut() {
                    g.set_fate(id, Fate::Untracked { time: self.time });
                }
                removed += 1;
            } else {
                i += 1;
            }
        }
        removed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Extinct { tau: f64 },
    /// Alive at the horizon; counts as surviving.
    CensoredHorizon { alive: usize },
    /// Reached the population cap; counts as surviving.
    CensoredCap { alive: usize },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Extinct { .. } => "extinct",
            Outcome::CensoredHorizon { .. } => "censored_horizon",
            Outcome::CensoredCap { .. } => "censored_cap",
        }
    }

    pub fn extinction_time(&self) -> Option<f64> {
        match *self {
            Outcome::Extinct { tau } => Some(tau),
            _ => None,
        }
    }

    pub fn is_extinct(&self) -> bool {
        matches!(self, Outcome::Extinct { .. })
    }
}

/// Outcome of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionRecord {
    pub seed: u64,
    pub outcome: Outcome,
    pub peak_population: usize,
    pub events: u64,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Runs the standard stopping rule on an existing simulation.
pub fn finish<K: JumpSampler>(sim: &mut Simulation<'_, K>, mut on_event: impl FnMut(&Event, &ParticleConfiguration)) -> Outcome {
    let horizon = sim.params().horizon;
    let cap = sim.params().population_cap;
    loop {
        let n = sim.population();
        if n == 0 {
            return Outcome::Extinct { tau: sim.time() };
        }
        if n >= cap {
            return Outcome::CensoredCap { alive: n };
        }
        match sim.step_until(horizon) {
            Step::Event(e) => on_event(&e, sim.state()),
            Step::Limit => return Outcome::CensoredHorizon { alive: sim.population() },
            Step::Extinct => return Outcome::Extinct { tau: sim.time() },
        }
    }
}

/// Simulates until extinction, the horizon, or the cap. The observer sees
/// every event together with the configuration right after it.
pub fn run_observed<K: JumpSampler>(
    params: &SimulationParams<K>,
    initial: &ParticleConfiguration,
    on_event: impl FnMut(&Event, &ParticleConfiguration),
) -> Result<(ExtinctionRecord, Option<Genealogy>)> {
    let started = Instant::now();
    let mut sim = Simulation::new(params, initial)?;
    let outcome = finish(&mut sim, on_event);
    let record = ExtinctionRecord {
        seed: params.seed,
        outcome,
        peak_population: sim.peak(),
        events: sim.events(),
        wall_time: started.elapsed(),
    };
    Ok((record, sim.into_genealogy()))
}

pub fn run<K: JumpSampler>(params: &SimulationParams<K>, initial: &ParticleConfiguration) -> Result<(ExtinctionRecord, Option<Genealogy>)> {
    run_observed(params, initial, |_, _| {})
}

/// Independent replicas `0..replicas`, seeded from `params.seed` as root.
/// Results are in replica order regardless of scheduling.
pub fn run_replicas<K: JumpSampler + Clone>(
    params: &SimulationParams<K>,
    initial: &ParticleConfiguration,
    replicas: usize,
) -> Result<Vec<ExtinctionRecord>> {
    params.validate()?;
    (0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let mut p = params.clone();
            p.seed = replica_seed(params.seed, i);
            p.record_genealogy = false;
            run(&p, initial).map(|(r, _)| r)
        })
        .collect()
}

/// Checks a kernel/domain pair for the discrete-space requirement of integer positions.
pub fn is_discrete<K: JumpSampler>(params: &SimulationParams<K>) -> bool {
    params.kernel.space() == Space::Discrete
}
