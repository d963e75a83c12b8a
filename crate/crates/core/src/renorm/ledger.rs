use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::block::run_block;
use super::{vertex_half, BlockParams, Half, Tally};
use crate::engine::{Event, ParticleConfiguration, ParticleId, Simulation, SimulationParams, Step, Tag, UNTAGGED};
use crate::error::{Error, Result};
use crate::kernel::{JumpSampler, Space};
use crate::percolation::{Bond, BondField, PercolationRun, Sigma};
use crate::rng::{mix64, replica_seed};
use crate::stats::Proportion;

/// When the waiting times `τ_j` are allowed to stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockRule {
    /// First event time at which the shape is met.
    Continuous,
    /// First integer time at which the shape is met, or `⌈τ⌉` on extinction.
    #[default]
    IntegerTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenormOptions {
    /// An attempt succeeds once its cluster reaches this level.
    pub height: u32,
    pub max_attempts: u32,
    /// Population at which the walk is treated as surviving; from then on
    /// only descendants of the current blocks are simulated.
    pub certify_cap: usize,
    /// Hard limit on the simulated population.
    pub max_population: usize,
    /// Hard limit on levels of one attempt.
    pub max_levels: u32,
    pub clock: ClockRule,
    /// Continuous space: replicas per threshold estimate.
    pub aux_replicas: usize,
    /// Continuous space: positions are bucketed to this mesh before
    /// estimating a threshold.
    pub aux_resolution: f64,
    /// Keep every edge decision and every chosen collection.
    pub record_edges: bool,
}

impl Default for RenormOptions {
    fn default() -> Self {
        Self {
            height: 8,
            max_attempts: 10_000,
            certify_cap: 2_000,
            max_population: 5_000_000,
            max_levels: 100_000,
            clock: ClockRule::IntegerTime,
            aux_replicas: 2_000,
            aux_resolution: 0.25,
            record_edges: true,
        }
    }
}

impl RenormOptions {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 {
            return Err(Error::invalid("renorm.height", "must be at least 1"));
        }
        if self.max_attempts == 0 {
            return Err(Error::invalid("renorm.max_attempts", "must be at least 1"));
        }
        if self.certify_cap == 0 || self.max_population < self.certify_cap {
            return Err(Error::invalid("renorm.certify_cap", "must be positive and below max_population"));
        }
        if self.max_levels < self.height {
            return Err(Error::invalid("renorm.max_levels", "must be at least the height"));
        }
        if self.aux_replicas == 0 || !(self.aux_resolution > 0.0) {
            return Err(Error::invalid("renorm.aux", "replicas and resolution must be positive"));
        }
        Ok(())
    }
}

/// One examined bond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub attempt: u32,
    pub n: i64,
    pub m: u32,
    pub bond: Bond,
    /// Whether the source vertex carried a particle collection.
    pub backed: bool,
    pub block_event: Option<bool>,
    pub u: f64,
    pub threshold: f64,
    pub open: bool,
}

/// The collection `α` chosen for a reached vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub attempt: u32,
    pub n: i64,
    pub m: u32,
    pub half: Half,
    pub ids: Vec<ParticleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub index: u32,
    /// `s_j`: end of the previous attempt.
    pub start: f64,
    /// `τ_j`.
    pub tau: f64,
    pub sigma: Sigma,
    /// False when the walk was gone and the bonds were drawn with `u < p`.
    pub backed: bool,
    /// Levels beyond the height needed before the walk was certified.
    pub extra_levels: u32,
}

impl AttemptRecord {
    pub fn wait(&self) -> f64 {
        (self.tau - self.start).max(0.0)
    }

    /// Levels spent, `σ_j`; a surviving attempt counts its top level.
    pub fn sigma_levels(&self) -> u32 {
        match self.sigma {
            Sigma::Finite(k) | Sigma::Survived(k) => k,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeCounts {
    pub examined: u64,
    pub open: u64,
}

impl EdgeCounts {
    fn add(&mut self, open: bool) {
        self.examined += 1;
        self.open += u64::from(open);
    }

    pub fn proportion(&self) -> Proportion {
        Proportion::new(self.open, self.examined)
    }
}

/// Counts of discipline checks and their failures.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disciplines {
    pub collections: u64,
    /// A chosen particle without an ancestor in the parent collection.
    pub descendant: u64,
    /// A chosen collection with the wrong shape for its vertex.
    pub parity: u64,
    /// A reached level at which a chosen particle was not alive.
    pub survival: u64,
    /// A particle chosen for two vertices of one level.
    pub overlap: u64,
}

impl Disciplines {
    pub fn ok(&self) -> bool {
        self.descendant == 0 && self.parity == 0 && self.survival == 0 && self.overlap == 0
    }
}

/// Bookkeeping of the block construction on one walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLedger {
    pub seed: u64,
    pub clock: ClockRule,
    pub quota: u32,
    pub duration: f64,
    pub p: f64,
    pub height: u32,
    pub attempts: Vec<AttemptRecord>,
    /// Index (from 1) of the first surviving attempt.
    pub g: Option<u32>,
    /// Extinction time of the walk, when observed.
    pub extinction: Option<f64>,
    pub certified_at: Option<f64>,
    /// The walk was certified, then every tracked particle died.
    pub truncated: bool,
    pub backed: EdgeCounts,
    pub unbacked: EdgeCounts,
    pub clipped_thresholds: u64,
    pub disciplines: Disciplines,
    pub events: u64,
    pub edges: Vec<EdgeRecord>,
    pub alphas: Vec<AlphaRecord>,
}

impl BlockLedger {
    pub fn tau1(&self) -> Option<f64> {
        self.attempts.first().map(|a| a.tau)
    }

    /// `τ_1, …, τ_k`.
    pub fn restart_times(&self) -> Vec<f64> {
        self.attempts.iter().map(|a| a.tau).collect()
    }

    /// `Σ_{j<g} (wait_j + σ_j T) + wait_g`.
    pub fn bound_rhs(&self) -> Option<f64> {
        let g = self.g? as usize;
        let a = &self.attempts[..g];
        let head: f64 = a[..g - 1].iter().map(|r| r.wait() + f64::from(r.sigma_levels()) * self.duration).sum();
        Some(head + a[g - 1].wait())
    }

    /// The decomposition bound on an extinct walk; `None` when the walk
    /// survived or no attempt succeeded.
    pub fn bound_ok(&self) -> Option<bool> {
        let tau = self.extinction?;
        let rhs = self.bound_rhs()?;
        Some(tau <= rhs + 1e-9 * (1.0 + rhs))
    }

    pub fn percolation_survived(&self) -> bool {
        self.g.is_some()
    }

    /// Every attempt backed by the walk ended after the walk died, when it
    /// died: blocks never outlive the particles they were built from.
    pub fn survival_consistent(&self) -> bool {
        match self.extinction {
            None => true,
            Some(tau) => self.attempts.iter().filter(|a| a.backed).all(|a| {
                let reached = a.sigma.levels_reached();
                reached == 0 || tau >= a.tau + f64::from(reached) * self.duration
            }),
        }
    }

    pub fn write_edges_jsonl<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.edges {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Runs block constructions for one model and one set of block parameters,
/// sharing the continuous-space threshold cache across replicas.
pub struct Renormalizer<'a, K = crate::kernel::DispersalKernel> {
    params: SimulationParams<K>,
    block: &'a BlockParams,
    opts: RenormOptions,
    initial: ParticleConfiguration,
    cache: Mutex<HashMap<u64, Proportion>>,
}

impl<'a, K: JumpSampler + Clone + Sync> Renormalizer<'a, K> {
    /// Fails before any simulation if a threshold `p / ĉ` exceeds one.
    pub fn new(
        params: &SimulationParams<K>,
        block: &'a BlockParams,
        initial: &ParticleConfiguration,
        opts: RenormOptions,
    ) -> Result<Self> {
        params.validate()?;
        block.validate()?;
        opts.validate()?;
        let mut params = params.clone();
        params.record_genealogy = true;
        params.population_cap = usize::MAX;
        params.horizon = f64::INFINITY;
        Ok(Self {
            params,
            block,
            opts,
            initial: initial.clone(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn options(&self) -> &RenormOptions {
        &self.opts
    }

    /// Number of distinct continuous threshold estimates computed so far.
    pub fn cached_thresholds(&self) -> usize {
        self.cache.lock().map(|c| c.len()).unwrap_or(0)
    }

    /// Attempts until one survives to the height, the walk is gone for good,
    /// or `max_attempts` runs out.
    pub fn restart(&self, seed: u64) -> Result<BlockLedger> {
        self.run(seed, self.opts.max_attempts)
    }

    /// The first attempt only, with its percolation run.
    pub fn build(&self, seed: u64) -> Result<(BlockLedger, PercolationRun)> {
        let ledger = self.run(seed, 1)?;
        let run = PercolationRun {
            seed,
            p: self.block.p,
            height: self.opts.height,
            sigma: ledger.attempts[0].sigma,
            reached: None,
        };
        Ok((ledger, run))
    }

    /// `restart` over seeds `replica_seed(root, i)`, in replica order.
    pub fn replicas(&self, replicas: usize, root: u64) -> Result<Vec<BlockLedger>> {
        (0..replicas as u64).into_par_iter().map(|i| self.restart(replica_seed(root, i))).collect()
    }

    fn run(&self, seed: u64, max_attempts: u32) -> Result<BlockLedger> {
        let mut params = self.params.clone();
        params.seed = seed;
        let sim = Simulation::new(&params, &self.initial)?;
        let mut b = Build {
            r: self,
            sim,
            tally: Tally::new(&params.domain),
            certified: false,
            ledger: BlockLedger {
                seed,
                clock: self.opts.clock,
                quota: self.block.quota,
                duration: self.block.duration,
                p: self.block.p,
                height: self.opts.height,
                attempts: Vec::new(),
                g: None,
                extinction: None,
                certified_at: None,
                truncated: false,
                backed: EdgeCounts::default(),
                unbacked: EdgeCounts::default(),
                clipped_thresholds: 0,
                disciplines: Disciplines::default(),
                events: 0,
                edges: Vec::new(),
                alphas: Vec::new(),
            },
        };
        let mut start = 0.0;
        for j in 1..=max_attempts {
            let field = BondField::new(mix64(seed ^ mix64(0xa77e_0000 + u64::from(j))));
            let attempt = match b.wait(start)? {
                Some(tau) => b.backed_attempt(j, start, tau, &field)?,
                None => b.pure_attempt(j, start, &field),
            };
            let survived = attempt.sigma.survived();
            start = attempt.tau + f64::from(attempt.sigma_levels()) * self.block.duration;
            b.ledger.attempts.push(attempt);
            if survived {
                b.ledger.g = Some(j);
                break;
            }
        }
        b.ledger.events = b.sim.events();
        Ok(b.ledger)
    }

    /// `ĉ` for a continuous block started from `positions`, bucketed.
    fn continuous_c(&self, positions: &[&[f64]], to: Half) -> Result<f64> {
        let res = self.opts.aux_resolution;
        let half_side = self.params.domain.side() / 2.0;
        let max_cell = (half_side / res).ceil() as i64;
        let mut cells: Vec<Vec<i64>> = positions
            .iter()
            .map(|x| x.iter().map(|&v| ((v / res).floor() as i64).clamp(-max_cell, max_cell - 1)).collect())
            .collect();
        cells.sort();
        let mut key = mix64(0xc0 ^ to.index() as u64 ^ (u64::from(self.block.quota) << 4) ^ self.block.duration.to_bits());
        for c in &cells {
            for &v in c {
                key = mix64(key ^ v as u64);
            }
            key = mix64(key ^ 0xff);
        }
        if let Some(p) = self.cache.lock().expect("threshold cache poisoned").get(&key) {
            return Ok(p.estimate);
        }
        // bucket centres, pulled inside the cube
        let centres: Vec<Vec<f64>> = cells
            .iter()
            .map(|c| c.iter().map(|&v| ((v as f64 + 0.5) * res).clamp(-half_side, half_side * (1.0 - 1e-12))).collect())
            .collect();
        let initial = ParticleConfiguration::from_positions(self.params.domain.dim(), &centres);
        let mut aux = self.params.clone();
        aux.record_genealogy = false;
        let outcomes: Result<Vec<Option<[bool; 2]>>> = (0..self.opts.aux_replicas as u64)
            .into_par_iter()
            .map(|i| run_block(&aux, &initial, self.block.quota, self.block.duration, self.block.block_cap, replica_seed(key, i)))
            .collect();
        let ok = outcomes?.iter().filter(|o| o.is_none_or(|h| h[to.index()])).count() as u64;
        let p = Proportion::new(ok, self.opts.aux_replicas as u64);
        self.cache.lock().expect("threshold cache poisoned").insert(key, p);
        Ok(p.estimate)
    }
}

struct Vertex {
    ids: Vec<ParticleId>,
    half: Half,
    tag: Tag,
}

struct Build<'r, 'p, 'a, K: JumpSampler> {
    r: &'r Renormalizer<'a, K>,
    sim: Simulation<'p, K>,
    tally: Tally,
    certified: bool,
    ledger: BlockLedger,
}

impl<K: JumpSampler + Clone + Sync> Build<'_, '_, '_, K> {
    fn discrete(&self) -> bool {
        self.r.params.domain.space() == Space::Discrete
    }

    /// Marks the walk as surviving once it is large, and keeps the
    /// simulated population bounded.
    fn after_event(&mut self, prune: bool) -> Result<()> {
        let pop = self.sim.population();
        if !self.certified && pop >= self.r.opts.certify_cap {
            self.certified = true;
            self.ledger.certified_at = Some(self.sim.time());
            if prune {
                self.sim.untrack_where(|_, _, tag| tag == UNTAGGED);
            }
        }
        if pop > self.r.opts.max_population {
            return Err(Error::Capacity {
                what: "block construction population",
                requested: pop as u128,
                cap: self.r.opts.max_population as u128,
            });
        }
        Ok(())
    }

    fn on_extinction(&mut self) {
        if self.certified {
            self.ledger.truncated = true;
        } else if self.ledger.extinction.is_none() {
            self.ledger.extinction = Some(self.sim.time());
        }
    }

    fn alive(&self) -> bool {
        self.sim.population() > 0
    }

    /// Runs from `start` until the origin shape is met; `None` if the walk is
    /// (or becomes) empty first, in which case `τ_j` is recorded by the caller.
    fn wait(&mut self, start: f64) -> Result<Option<f64>> {
        if !self.alive() {
            return Ok(None);
        }
        let half = vertex_half(0, 0);
        let quota = self.r.block.quota;
        let clock = self.r.opts.clock;
        self.tally.fill_from(self.sim.state(), |_| true);
        let on_grid = start.fract() == 0.0;
        if self.tally.meets(half, quota) && (clock == ClockRule::Continuous || on_grid) {
            return Ok(Some(start));
        }
        loop {
            // clocks always stop at integers, so both rules see the same path
            let next = self.sim.time().floor() + 1.0;
            match self.sim.step_until(next) {
                Step::Event(e) => {
                    match e {
                        Event::Death { .. } => self.tally.remove(self.sim.last_actor_position()),
                        Event::Birth { retained: true, .. } => self.tally.add(self.sim.last_offspring_position()),
                        _ => {}
                    }
                    self.after_event(false)?;
                    if clock == ClockRule::Continuous && self.tally.meets(half, quota) {
                        return Ok(Some(self.sim.time()));
                    }
                }
                Step::Limit => {
                    if clock == ClockRule::IntegerTime && self.tally.meets(half, quota) {
                        return Ok(Some(next));
                    }
                }
                Step::Extinct => {
                    self.on_extinction();
                    return Ok(None);
                }
            }
        }
    }

    fn pure_attempt(&mut self, j: u32, start: f64, field: &BondField) -> AttemptRecord {
        // τ_j = τ ∧ (…): the stop at extinction, rounded up under the integer clock
        let death = self.ledger.extinction.unwrap_or(start);
        let tau = match self.r.opts.clock {
            ClockRule::Continuous => death,
            ClockRule::IntegerTime => death.ceil(),
        }
        .max(start);
        let p = self.r.block.p;
        let record = self.r.opts.record_edges;
        let mut edges = Vec::new();
        let mut counts = EdgeCounts::default();
        let (sigma, _) = crate::percolation::propagate(self.r.opts.height, false, |n, m, bond| {
            let u = field.uniform(n, m, bond);
            let open = u < p;
            counts.add(open);
            if record {
                edges.push(EdgeRecord {
                    attempt: j,
                    n,
                    m,
                    bond,
                    backed: false,
                    block_event: None,
                    u,
                    threshold: p,
                    open,
                });
            }
            open
        });
        self.ledger.unbacked.examined += counts.examined;
        self.ledger.unbacked.open += counts.open;
        self.ledger.edges.extend(edges);
        AttemptRecord {
            index: j,
            start,
            tau,
            sigma,
            backed: false,
            extra_levels: 0,
        }
    }

    /// The lowest ids forming the shape of `half`: `M` per site (discrete)
    /// or `M + 1` in the half (continuous), among particles with `tag`
    /// (`None`: all particles).
    fn choose(&self, half: Half, tag: Option<Tag>) -> Option<Vec<ParticleId>> {
        let quota = self.r.block.quota as usize;
        let state = self.sim.state();
        let domain = &self.r.params.domain;
        let mut cand: Vec<(usize, ParticleId)> = (0..state.len())
            .filter(|&i| tag.is_none_or(|t| state.tag(i) == t) && Half::of(state.position(i)) == half)
            .map(|i| {
                let site = if self.discrete() { domain.site_index(state.position(i)) } else { 0 };
                (site, state.id(i))
            })
            .collect();
        cand.sort_unstable();
        let mut out = Vec::new();
        if self.discrete() {
            let sites = self.tally.half_sites(half);
            let mut k = 0;
            for &s in sites {
                while k < cand.len() && cand[k].0 < s {
                    k += 1;
                }
                let mut taken = 0;
                while k < cand.len() && cand[k].0 == s && taken < quota {
                    out.push(cand[k].1);
                    taken += 1;
                    k += 1;
                }
                if taken < quota {
                    return None;
                }
            }
        } else {
            if cand.len() <= quota {
                return None;
            }
            let mut ids: Vec<ParticleId> = cand.into_iter().map(|c| c.1).collect();
            ids.sort_unstable();
            ids.truncate(quota + 1);
            out = ids;
        }
        Some(out)
    }

    /// Checks the shape of a chosen collection against its vertex.
    fn shape_ok(&self, ids: &[ParticleId], half: Half) -> bool {
        let state = self.sim.state();
        let quota = self.r.block.quota;
        let mut t = Tally::new(&self.r.params.domain);
        for id in ids {
            match state.index_of(*id) {
                Some(i) => t.add(state.position(i)),
                None => return false,
            }
        }
        if self.discrete() {
            let other = match half {
                Half::A1 => Half::A2,
                Half::A2 => Half::A1,
            };
            t.half_sites(half).iter().all(|&s| t.count_at(s) == quota) && t.in_half(other) == 0
        } else {
            t.in_half(half) == quota + 1 && ids.len() as u32 == quota + 1
        }
    }

    /// Relabels the walk so that each collection of `level` carries its own tag.
    fn retag(&mut self, level: &BTreeMap<i64, Vertex>) {
        self.sim.clear_tags();
        let mut index = HashMap::new();
        for v in level.values() {
            for id in &v.ids {
                index.insert(*id, v.tag);
            }
        }
        for i in 0..self.sim.population() {
            if let Some(&t) = index.get(&self.sim.state().id(i)) {
                self.sim.set_tag(i, t);
            }
        }
        if self.certified {
            self.sim.untrack_where(|_, _, tag| tag == UNTAGGED);
        }
    }

    fn record_alpha(&mut self, j: u32, n: i64, m: u32, v: &Vertex) {
        self.ledger.disciplines.collections += 1;
        if !self.shape_ok(&v.ids, v.half) || v.half != vertex_half(n, m) {
            self.ledger.disciplines.parity += 1;
        }
        if self.r.opts.record_edges {
            self.ledger.alphas.push(AlphaRecord {
                attempt: j,
                n,
                m,
                half: v.half,
                ids: v.ids.clone(),
            });
        }
    }

    fn backed_attempt(&mut self, j: u32, start: f64, tau: f64, field: &BondField) -> Result<AttemptRecord> {
        let origin = vertex_half(0, 0);
        let ids = self
            .choose(origin, None)
            .ok_or_else(|| Error::Invariant("origin shape met but no collection could be chosen".into()))?;
        let mut level: BTreeMap<i64, Vertex> = BTreeMap::new();
        level.insert(
            0,
            Vertex {
                ids,
                half: origin,
                tag: 1,
            },
        );
        self.record_alpha(j, 0, 0, &level[&0]);
        self.retag(&level);
        let t_block = self.r.block.duration;
        let height = self.r.opts.height;
        let mut m: u32 = 0;
        loop {
            if m >= height && self.certified {
                return Ok(AttemptRecord {
                    index: j,
                    start,
                    tau,
                    sigma: Sigma::Survived(m),
                    backed: true,
                    extra_levels: m - height,
                });
            }
            if m >= self.r.opts.max_levels {
                return Err(Error::Capacity {
                    what: "levels of one attempt",
                    requested: u128::from(m) + 1,
                    cap: u128::from(self.r.opts.max_levels),
                });
            }
            let end = tau + f64::from(m + 1) * t_block;
            self.advance_level(end)?;
            let next = self.open_edges(j, m, &level, field)?;
            if next.is_empty() {
                return Ok(AttemptRecord {
                    index: j,
                    start,
                    tau,
                    sigma: Sigma::Finite(m + 1),
                    backed: true,
                    extra_levels: (m + 1).saturating_sub(height),
                });
            }
            self.check_level(j, m + 1, end, &level, &next);
            self.retag(&next);
            level = next;
            m += 1;
        }
    }

    fn advance_level(&mut self, end: f64) -> Result<()> {
        loop {
            match self.sim.step_until(end) {
                Step::Event(_) => self.after_event(true)?,
                Step::Limit => return Ok(()),
                Step::Extinct => {
                    self.on_extinction();
                    return Ok(());
                }
            }
        }
    }

    /// Decides the bonds leaving `level` (vertices at height `m`) and picks
    /// the collections of the reached vertices above.
    fn open_edges(&mut self, j: u32, m: u32, level: &BTreeMap<i64, Vertex>, field: &BondField) -> Result<BTreeMap<i64, Vertex>> {
        let domain = self.r.params.domain.clone();
        let mut tallies: HashMap<Tag, Tally> = level.values().map(|v| (v.tag, Tally::new(&domain))).collect();
        {
            let state = self.sim.state();
            for i in 0..state.len() {
                if let Some(t) = tallies.get_mut(&state.tag(i)) {
                    t.add(state.position(i));
                }
            }
        }
        let quota = self.r.block.quota;
        let p = self.r.block.p;
        let mut next: BTreeMap<i64, Vertex> = BTreeMap::new();
        for (&n, v) in level {
            for bond in [Bond::Left, Bond::Right] {
                let (cn, cm) = bond.target(n, m);
                let to = vertex_half(cn, cm);
                let event = tallies[&v.tag].meets(to, quota);
                let c = if self.discrete() {
                    self.r.block.c[v.half.index()][to.index()]
                } else {
                    let state = self.sim.state();
                    let pos: Vec<&[f64]> = v.ids.iter().filter_map(|id| state.index_of(*id)).map(|i| state.position(i)).collect();
                    // collection members may have died; the estimate uses
                    // where they stood when chosen, kept in the genealogy
                    let pos = if pos.len() == v.ids.len() { pos } else { self.chosen_positions(&v.ids) };
                    self.r.continuous_c(&pos, to)?
                };
                let mut threshold = p / c;
                if !(threshold <= 1.0) {
                    threshold = 1.0;
                    self.ledger.clipped_thresholds += 1;
                }
                let u = field.uniform(n, m, bond);
                let open = event && u < threshold;
                self.ledger.backed.add(open);
                if self.r.opts.record_edges {
                    self.ledger.edges.push(EdgeRecord {
                        attempt: j,
                        n,
                        m,
                        bond,
                        backed: true,
                        block_event: Some(event),
                        u,
                        threshold,
                        open,
                    });
                }
                if open && !next.contains_key(&cn) {
                    let ids = self
                        .choose(to, Some(v.tag))
                        .ok_or_else(|| Error::Invariant(format!("block event at ({n}, {m}) without a collection")))?;
                    next.insert(
                        cn,
                        Vertex {
                            ids,
                            half: to,
                            tag: next.len() as Tag + 1,
                        },
                    );
                }
            }
        }
        // tags in increasing n
        for (k, v) in next.values_mut().enumerate() {
            v.tag = k as Tag + 1;
        }
        Ok(next)
    }

    fn chosen_positions(&self, ids: &[ParticleId]) -> Vec<&[f64]> {
        let g = self.sim.genealogy().expect("genealogy is recorded");
        ids.iter().filter_map(|id| g.node(*id)).map(|n| n.position.as_slice()).collect()
    }

    /// Descendant, parity, survival and disjointness checks for a new level.
    fn check_level(&mut self, j: u32, m: u32, time: f64, parents: &BTreeMap<i64, Vertex>, children: &BTreeMap<i64, Vertex>) {
        let mut seen = HashSet::new();
        let parent_sets: BTreeMap<i64, HashSet<ParticleId>> =
            parents.iter().map(|(&n, v)| (n, v.ids.iter().copied().collect())).collect();
        let mut failures = Disciplines::default();
        {
            let g = self.sim.genealogy().expect("genealogy is recorded");
            for (&cn, v) in children {
                let from_parent = [cn - 1, cn + 1]
                    .into_iter()
                    .filter_map(|pn| parent_sets.get(&pn))
                    .any(|set| v.ids.iter().all(|id| g.ancestor_in(*id, set).is_some()));
                if !from_parent {
                    failures.descendant += 1;
                }
                if !v.ids.iter().all(|id| g.alive_at(*id, time)) {
                    failures.survival += 1;
                }
                for id in &v.ids {
                    if !seen.insert(*id) {
                        failures.overlap += 1;
                    }
                }
            }
        }
        let d = &mut self.ledger.disciplines;
        d.descendant += failures.descendant;
        d.survival += failures.survival;
        d.overlap += failures.overlap;
        for (&cn, v) in children {
            self.record_alpha(j, cn, m, v);
        }
    }
}

/// The first attempt of the block construction, with its percolation run.
/// Genealogy recording is switched on whatever `params` says.
pub fn build_percolation_from_brw<K: JumpSampler + Clone + Sync>(
    params: &SimulationParams<K>,
    block: &BlockParams,
    initial: &ParticleConfiguration,
    seed: u64,
    opts: &RenormOptions,
) -> Result<(BlockLedger, PercolationRun)> {
    Renormalizer::new(params, block, initial, opts.clone())?.build(seed)
}

/// The first attempt with waiting times stopped on integers.
pub fn integer_time_variant<K: JumpSampler + Clone + Sync>(
    params: &SimulationParams<K>,
    block: &BlockParams,
    initial: &ParticleConfiguration,
    seed: u64,
    opts: &RenormOptions,
) -> Result<BlockLedger> {
    let opts = RenormOptions {
        clock: ClockRule::IntegerTime,
        ..opts.clone()
    };
    Ok(Renormalizer::new(params, block, initial, opts)?.build(seed)?.0)
}

/// Attempts until one survives to the height or `max_attempts` runs out.
pub fn restart_until_percolation<K: JumpSampler + Clone + Sync>(
    params: &SimulationParams<K>,
    block: &BlockParams,
    initial: &ParticleConfiguration,
    seed: u64,
    opts: &RenormOptions,
) -> Result<BlockLedger> {
    Renormalizer::new(params, block, initial, opts.clone())?.restart(seed)
}
