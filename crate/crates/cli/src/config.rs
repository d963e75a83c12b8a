//! Strict TOML run configuration.
//!
//! ```toml
//! [kernel]
//! family = "lazy_nearest_neighbor"
//!
//! [kernel.params]
//! laziness = 0.2
//!
//! [domain]
//! space = "discrete"
//! dimension = 1
//! side = 11
//!
//! [run]
//! lambda = 3.0
//! horizon = 200.0
//! population_cap = 1000
//! replicas = 10000
//! seed = 7
//! ```
//!
//! Unknown sections and keys are rejected, and every problem found is
//! reported at once.

use std::path::{Path, PathBuf};

use brw_core::renorm::RenormOptions;
use brw_core::{ClockRule, CubeDomain, DispersalKernel, KernelFamily, ParticleConfiguration, SimulationParams, Space};
use serde::Serialize;
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Simulate,
    Couple,
    Percolate,
    Renorm,
    Tail,
    Fit,
    Oracle,
    Probe,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Simulate,
        Experiment::Couple,
        Experiment::Percolate,
        Experiment::Renorm,
        Experiment::Tail,
        Experiment::Fit,
        Experiment::Oracle,
        Experiment::Probe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Couple => "couple",
            Experiment::Percolate => "percolate",
            Experiment::Renorm => "renorm",
            Experiment::Tail => "tail",
            Experiment::Fit => "fit",
            Experiment::Oracle => "oracle",
            Experiment::Probe => "probe",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub lambda: f64,
    pub horizon: f64,
    pub population_cap: usize,
    pub replicas: usize,
    pub seed: u64,
    /// Starting positions; one particle at the origin by default.
    pub initial: Vec<Vec<f64>>,
    pub genealogy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenormSection {
    /// Target bond probability.
    pub p: f64,
    pub quotas: Vec<u32>,
    pub durations: Vec<f64>,
    pub search_replicas: usize,
    /// Replicas for re-estimating `ĉ` at the chosen point; 0 skips it.
    pub refine_replicas: usize,
    pub block_cap: usize,
    pub options: RenormOptions,
}

impl Default for RenormSection {
    fn default() -> Self {
        Self {
            p: 0.7,
            quotas: vec![1, 2, 4, 8, 16],
            durations: vec![4.0, 8.0, 16.0, 32.0],
            search_replicas: 4000,
            refine_replicas: 50_000,
            block_cap: 1000,
            options: RenormOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub family: KernelFamily,
    pub dim: usize,
    pub domain: CubeDomain,
    pub run: RunSection,
    pub renorm: RenormSection,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    /// Parses and validates, collecting every error found.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(vec![e.to_string()]))?;
        let mut r = Reader::default();
        r.keys("", &table, &["experiment", "kernel", "domain", "run", "renorm", "output"]);

        let experiment = r.string(&table, "", "experiment").and_then(|s| {
            let e = Experiment::ALL.into_iter().find(|e| e.name() == s);
            if e.is_none() {
                r.error(format!("experiment: unknown kind '{s}'"));
            }
            e
        });

        let empty = Table::new();
        let domain_t = r.section(&table, "domain", true).unwrap_or(&empty);
        r.keys("domain", domain_t, &["space", "dimension", "side"]);
        let dim = r.opt_uint(domain_t, "domain", "dimension").unwrap_or(1) as usize;

        let kernel = r.section(&table, "kernel", true).unwrap_or(&empty);
        r.keys("kernel", kernel, &["family", "params"]);
        let params = r.section(kernel, "kernel.params", false).unwrap_or(&empty);
        let family = match r.string(kernel, "kernel", "family") {
            Some(f) => r.family(&f, params),
            None => {
                r.error("kernel.family: missing".to_string());
                None
            }
        };

        let domain = match r.string(domain_t, "domain", "space").as_deref() {
            Some("discrete") => r.uint(domain_t, "domain", "side").and_then(|s| r.check(CubeDomain::discrete(dim, s))),
            Some("continuous") => r.float(domain_t, "domain", "side").and_then(|s| r.check(CubeDomain::continuous(dim, s))),
            Some(other) => {
                r.error(format!("domain.space: expected 'discrete' or 'continuous', got '{other}'"));
                None
            }
            None => {
                r.error("domain.space: missing".to_string());
                None
            }
        };

        let run_t = r.section(&table, "run", true).unwrap_or(&empty);
        r.keys("run", run_t, &["lambda", "horizon", "population_cap", "replicas", "seed", "initial", "genealogy"]);
        let lambda = r.float(run_t, "run", "lambda");
        if let Some(l) = lambda {
            if !(l > 0.0 && l.is_finite()) {
                r.error(format!("run.lambda: must be positive, got {l}"));
            }
        }
        if !run_t.contains_key("lambda") {
            r.error("run.lambda: missing".to_string());
        }
        let horizon = r.opt_float(run_t, "run", "horizon").unwrap_or(1e3);
        if !(horizon > 0.0) {
            r.error(format!("run.horizon: must be positive, got {horizon}"));
        }
        let population_cap = r.opt_uint(run_t, "run", "population_cap").unwrap_or(1_000_000) as usize;
        if population_cap == 0 {
            r.error("run.population_cap: must be at least 1".to_string());
        }
        let initial = match run_t.get("initial") {
            None => vec![vec![0.0; dim]],
            Some(v) => r.positions(v, "run.initial").unwrap_or_default(),
        };
        let run = RunSection {
            lambda: lambda.unwrap_or(f64::NAN),
            horizon,
            population_cap,
            replicas: r.opt_uint(run_t, "run", "replicas").unwrap_or(1000) as usize,
            seed: r.opt_uint(run_t, "run", "seed").unwrap_or(0),
            initial,
            genealogy: r.opt_bool(run_t, "run", "genealogy").unwrap_or(false),
        };

        let renorm = match r.section(&table, "renorm", false) {
            Some(t) => r.renorm(t),
            None => RenormSection::default(),
        };

        let output_dir = match r.section(&table, "output", false) {
            Some(t) => {
                r.keys("output", t, &["dir"]);
                r.string(t, "output", "dir").map(PathBuf::from)
            }
            None => None,
        };

        // cross-field checks once the pieces parsed
        if let (Some(family), Some(domain)) = (family, domain.as_ref()) {
            match DispersalKernel::new(dim, family) {
                Ok(k) => {
                    if k.space() != domain.space() {
                        r.error(format!(
                            "kernel.family: {} kernel needs a {} domain, got domain.space = {}",
                            family.name(),
                            space_name(k.space()),
                            space_name(domain.space())
                        ));
                    }
                    for (i, x) in run.initial.iter().enumerate() {
                        if x.len() != dim {
                            r.error(format!("run.initial[{i}]: expected {dim} coordinates, got {}", x.len()));
                        } else if let Err(e) = domain.check_position(x) {
                            r.error(format!("run.initial[{i}]: {e}"));
                        }
                    }
                }
                Err(e) => r.error(e.to_string()),
            }
        }

        if !r.errors.is_empty() {
            return Err(CliError::Config(r.errors));
        }
        Ok(Self {
            experiment,
            family: family.expect("checked"),
            dim,
            domain: domain.expect("checked"),
            run,
            renorm,
            output_dir,
        })
    }

    pub fn kernel(&self) -> DispersalKernel {
        DispersalKernel::new(self.dim, self.family).expect("validated at parse time")
    }

    pub fn params(&self) -> SimulationParams {
        let mut p = SimulationParams::new(self.run.lambda, self.kernel(), self.domain.clone());
        p.horizon = self.run.horizon;
        p.population_cap = self.run.population_cap;
        p.seed = self.run.seed;
        p.record_genealogy = self.run.genealogy;
        p
    }

    pub fn initial(&self) -> ParticleConfiguration {
        ParticleConfiguration::from_positions(self.dim, &self.run.initial)
    }

    /// The configuration with every default written out.
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        if let Some(e) = self.experiment {
            root.insert("experiment".into(), e.name().into());
        }
        let mut kernel = Table::new();
        kernel.insert("family".into(), self.family.name().into());
        let mut params = Table::new();
        match self.family {
            KernelFamily::LazyNearestNeighbor { laziness } => {
                params.insert("laziness".into(), laziness.into());
            }
            KernelFamily::UniformRange { radius } => {
                params.insert("radius".into(), Value::Integer(radius.into()));
            }
            KernelFamily::PointSymmetricPair { distance } => {
                params.insert("distance".into(), Value::Integer(distance.into()));
            }
            KernelFamily::UniformBall { radius } => {
                params.insert("radius".into(), radius.into());
            }
            KernelFamily::Gaussian { std, truncation } => {
                params.insert("std".into(), std.into());
                params.insert("truncation".into(), truncation.into());
            }
        }
        kernel.insert("params".into(), Value::Table(params));
        root.insert("kernel".into(), Value::Table(kernel));

        let mut domain = Table::new();
        match self.domain {
            CubeDomain::Discrete { side, .. } => {
                domain.insert("space".into(), "discrete".into());
                domain.insert("dimension".into(), Value::Integer(self.dim as i64));
                domain.insert("side".into(), Value::Integer(side as i64));
            }
            CubeDomain::Continuous { side, .. } => {
                domain.insert("space".into(), "continuous".into());
                domain.insert("dimension".into(), Value::Integer(self.dim as i64));
                domain.insert("side".into(), side.into());
            }
        }
        root.insert("domain".into(), Value::Table(domain));

        let mut run = Table::new();
        run.insert("lambda".into(), self.run.lambda.into());
        run.insert("horizon".into(), self.run.horizon.into());
        run.insert("population_cap".into(), Value::Integer(self.run.population_cap as i64));
        run.insert("replicas".into(), Value::Integer(self.run.replicas as i64));
        run.insert("seed".into(), Value::Integer(self.run.seed as i64));
        let initial: Vec<Value> = self
            .run
            .initial
            .iter()
            .map(|x| Value::Array(x.iter().map(|&v| Value::Float(v)).collect()))
            .collect();
        run.insert("initial".into(), Value::Array(initial));
        run.insert("genealogy".into(), self.run.genealogy.into());
        root.insert("run".into(), Value::Table(run));

        let rn = &self.renorm;
        let o = &rn.options;
        let mut renorm = Table::new();
        renorm.insert("p".into(), rn.p.into());
        renorm.insert("quotas".into(), Value::Array(rn.quotas.iter().map(|&q| Value::Integer(q.into())).collect()));
        renorm.insert("durations".into(), Value::Array(rn.durations.iter().map(|&t| Value::Float(t)).collect()));
        renorm.insert("search_replicas".into(), Value::Integer(rn.search_replicas as i64));
        renorm.insert("refine_replicas".into(), Value::Integer(rn.refine_replicas as i64));
        renorm.insert("block_cap".into(), Value::Integer(rn.block_cap as i64));
        renorm.insert("height".into(), Value::Integer(o.height.into()));
        renorm.insert("max_attempts".into(), Value::Integer(o.max_attempts.into()));
        renorm.insert("certify_cap".into(), Value::Integer(o.certify_cap as i64));
        renorm.insert("max_population".into(), Value::Integer(o.max_population as i64));
        renorm.insert("max_levels".into(), Value::Integer(o.max_levels.into()));
        renorm.insert("clock".into(), clock_name(o.clock).into());
        renorm.insert("aux_replicas".into(), Value::Integer(o.aux_replicas as i64));
        renorm.insert("aux_resolution".into(), o.aux_resolution.into());
        renorm.insert("record_edges".into(), o.record_edges.into());
        root.insert("renorm".into(), Value::Table(renorm));

        if let Some(dir) = &self.output_dir {
            let mut out = Table::new();
            out.insert("dir".into(), dir.display().to_string().into());
            root.insert("output".into(), Value::Table(out));
        }
        toml::to_string(&root).expect("tables always serialize")
    }
}

fn space_name(s: Space) -> &'static str {
    match s {
        Space::Discrete => "discrete",
        Space::Continuous => "continuous",
    }
}

fn clock_name(c: ClockRule) -> &'static str {
    match c {
        ClockRule::Continuous => "continuous",
        ClockRule::IntegerTime => "integer_time",
    }
}

#[derive(Default)]
struct Reader {
    errors: Vec<String>,
}

fn path(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

impl Reader {
    fn error(&mut self, e: String) {
        self.errors.push(e);
    }

    fn check<T>(&mut self, r: brw_core::Result<T>) -> Option<T> {
        r.map_err(|e| self.error(e.to_string())).ok()
    }

    fn keys(&mut self, section: &str, t: &Table, allowed: &[&str]) {
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                self.error(format!("{}: unknown key", path(section, k)));
            }
        }
    }

    fn section<'t>(&mut self, t: &'t Table, name: &str, required: bool) -> Option<&'t Table> {
        let key = name.rsplit('.').next().unwrap_or(name);
        match t.get(key) {
            Some(Value::Table(s)) => Some(s),
            Some(_) => {
                self.error(format!("{name}: expected a table"));
                None
            }
            None => {
                if required {
                    self.error(format!("[{name}]: missing section"));
                }
                None
            }
        }
    }

    fn string(&mut self, t: &Table, section: &str, key: &str) -> Option<String> {
        match t.get(key) {
            Some(Value::String(s)) => Some(s.clone()),
            Some(v) => {
                self.error(format!("{}: expected a string, got {}", path(section, key), v.type_str()));
                None
            }
            None => None,
        }
    }

    fn opt_float(&mut self, t: &Table, section: &str, key: &str) -> Option<f64> {
        match t.get(key) {
            Some(Value::Float(f)) => Some(*f),
            Some(Value::Integer(i)) => Some(*i as f64),
            Some(v) => {
                self.error(format!("{}: expected a number, got {}", path(section, key), v.type_str()));
                None
            }
            None => None,
        }
    }

    fn float(&mut self, t: &Table, section: &str, key: &str) -> Option<f64> {
        if !t.contains_key(key) {
            self.error(format!("{}: missing", path(section, key)));
        }
        self.opt_float(t, section, key)
    }

    fn opt_uint(&mut self, t: &Table, section: &str, key: &str) -> Option<u64> {
        match t.get(key) {
            Some(Value::Integer(i)) if *i >= 0 => Some(*i as u64),
            Some(v) => {
                self.error(format!("{}: expected a nonnegative integer, got {v}", path(section, key)));
                None
            }
            None => None,
        }
    }

    fn uint(&mut self, t: &Table, section: &str, key: &str) -> Option<u64> {
        if !t.contains_key(key) {
            self.error(format!("{}: missing", path(section, key)));
        }
        self.opt_uint(t, section, key)
    }

    fn opt_bool(&mut self, t: &Table, section: &str, key: &str) -> Option<bool> {
        match t.get(key) {
            Some(Value::Boolean(b)) => Some(*b),
            Some(v) => {
                self.error(format!("{}: expected a boolean, got {}", path(section, key), v.type_str()));
                None
            }
            None => None,
        }
    }

    fn numbers(&mut self, v: &Value, name: &str) -> Option<Vec<f64>> {
        let Value::Array(a) = v else {
            self.error(format!("{name}: expected an array"));
            return None;
        };
        let mut out = Vec::with_capacity(a.len());
        for x in a {
            match x {
                Value::Float(f) => out.push(*f),
                Value::Integer(i) => out.push(*i as f64),
                other => {
                    self.error(format!("{name}: expected numbers, found {}", other.type_str()));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn positions(&mut self, v: &Value, name: &str) -> Option<Vec<Vec<f64>>> {
        let Value::Array(a) = v else {
            self.error(format!("{name}: expected an array of positions"));
            return None;
        };
        a.iter().enumerate().map(|(i, x)| self.numbers(x, &format!("{name}[{i}]"))).collect()
    }

    fn family(&mut self, name: &str, params: &Table) -> Option<KernelFamily> {
        let sec = "kernel.params";
        let (family, allowed): (Option<KernelFamily>, &[&str]) = match name {
            "lazy_nearest_neighbor" => (
                self.float(params, sec, "laziness").map(|laziness| KernelFamily::LazyNearestNeighbor { laziness }),
                &["laziness"],
            ),
            "uniform_range" => (
                self.uint(params, sec, "radius").map(|r| KernelFamily::UniformRange { radius: r as u32 }),
                &["radius"],
            ),
            "point_symmetric_pair" => (
                self.uint(params, sec, "distance").map(|d| KernelFamily::PointSymmetricPair { distance: d as u32 }),
                &["distance"],
            ),
            "uniform_ball" => (
                self.float(params, sec, "radius").map(|radius| KernelFamily::UniformBall { radius }),
                &["radius"],
            ),
            "gaussian" => {
                let std = self.float(params, sec, "std");
                let truncation = self.float(params, sec, "truncation");
                (std.zip(truncation).map(|(std, truncation)| KernelFamily::Gaussian { std, truncation }), &["std", "truncation"])
            }
            other => {
                self.error(format!("kernel.family: unknown family '{other}'"));
                return None;
            }
        };
        self.keys(sec, params, allowed);
        family
    }

    fn renorm(&mut self, t: &Table) -> RenormSection {
        let sec = "renorm";
        self.keys(
            sec,
            t,
            &[
                "p",
                "quotas",
                "durations",
                "search_replicas",
                "refine_replicas",
                "block_cap",
                "height",
                "max_attempts",
                "certify_cap",
                "max_population",
                "max_levels",
                "clock",
                "aux_replicas",
                "aux_resolution",
                "record_edges",
            ],
        );
        let d = RenormSection::default();
        let o = &d.options;
        let p = self.opt_float(t, sec, "p").unwrap_or(d.p);
        if !(p > 0.0 && p < 1.0) {
            self.error(format!("renorm.p: must lie in (0, 1), got {p}"));
        }
        let quotas = match t.get("quotas") {
            Some(v) => self
                .numbers(v, "renorm.quotas")
                .map(|q| q.into_iter().map(|x| x as u32).collect())
                .unwrap_or_default(),
            None => d.quotas.clone(),
        };
        let durations = match t.get("durations") {
            Some(v) => self.numbers(v, "renorm.durations").unwrap_or_default(),
            None => d.durations.clone(),
        };
        let clock = match self.string(t, sec, "clock").as_deref() {
            None | Some("integer_time") => ClockRule::IntegerTime,
            Some("continuous") => ClockRule::Continuous,
            Some(other) => {
                self.error(format!("renorm.clock: expected 'integer_time' or 'continuous', got '{other}'"));
                ClockRule::IntegerTime
            }
        };
        let options = RenormOptions {
            height: self.opt_uint(t, sec, "height").map_or(o.height, |v| v as u32),
            max_attempts: self.opt_uint(t, sec, "max_attempts").map_or(o.max_attempts, |v| v as u32),
            certify_cap: self.opt_uint(t, sec, "certify_cap").map_or(o.certify_cap, |v| v as usize),
            max_population: self.opt_uint(t, sec, "max_population").map_or(o.max_population, |v| v as usize),
            max_levels: self.opt_uint(t, sec, "max_levels").map_or(o.max_levels, |v| v as u32),
            clock,
            aux_replicas: self.opt_uint(t, sec, "aux_replicas").map_or(o.aux_replicas, |v| v as usize),
            aux_resolution: self.opt_float(t, sec, "aux_resolution").unwrap_or(o.aux_resolution),
            record_edges: self.opt_bool(t, sec, "record_edges").unwrap_or(o.record_edges),
        };
        if let Err(e) = options.validate() {
            self.error(e.to_string());
        }
        if quotas.is_empty() || quotas.contains(&0) || durations.is_empty() || durations.iter().any(|&t| !(t > 0.0)) {
            self.error("renorm.quotas/durations: need nonempty lists of positive values".to_string());
        }
        RenormSection {
            p,
            quotas,
            durations,
            search_replicas: self.opt_uint(t, sec, "search_replicas").map_or(d.search_replicas, |v| v as usize),
            refine_replicas: self.opt_uint(t, sec, "refine_replicas").map_or(d.refine_replicas, |v| v as usize),
            block_cap: self.opt_uint(t, sec, "block_cap").map_or(d.block_cap, |v| v as usize),
            options,
        }
    }
}
