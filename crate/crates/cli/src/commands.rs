//! Command runners and artifact schemas.
//!
//! | file | columns |
//! |------|---------|
//! | simulate | `replica,seed,outcome,tau,peak_pop,events` |
//! | couple | `replica,grid_outcome,cont_outcome,max_grid_pop,max_cont_pop,domination_ok` |
//! | percolate | `replica,sigma,survived` |
//! | renorm summary | `replica,tau,g,bound_ok,perc_survived` |
//! | renorm search | `quota,duration,c11,c12,c21,c22,min_lower,cap_hits,accepted` |
//! | tail | `s,tail,lower,upper,count,total` |
//! | probe | `x_1,…,x_d,survival,lower,upper,survived,replicas` |
//! | discretize | `j_1,…,j_d,mass` |
//!
//! Infinite values (survivors) are written as `inf`, missing ones as an
//! empty field. The fit summary is one line
//! `q_hat=…, C_hat=…, r2=…, window=[a,b]`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use brw_core::coupling::run_coupled_replicas;
use brw_core::kernel::{discretize, min_resolution_supercritical, DiscretizeOptions, GridKernel};
use brw_core::percolation::percolate_replicas;
use brw_core::renorm::{search_block_params, estimate_block_matrix, EdgeRecord, Renormalizer};
use brw_core::stats::{
    chi_square_geometric, extinction_cdf, extinction_probability, fit_exponential, linear_grid, master_equation_cdf,
    survival_probe, tail_from_values, ChiSquareReport, WindowPolicy,
};
use brw_core::{
    run, run_replicas, BlockLedger, BlockParams, ClockRule, CubeDomain, DispersalKernel, KernelFamily, Proportion, Space,
    TailEstimate,
};
use serde::Serialize;

use crate::config::{RenormSection, RunConfig, RunSection};
use crate::manifest::Manifest;
use crate::{Cli, CliError, Command, Recipe};

/// Output directory plus the files written into it so far.
struct Artifacts {
    dir: PathBuf,
    manifest: Manifest,
    quiet: bool,
}

impl Artifacts {
    fn open(dir: PathBuf, quiet: bool) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        let manifest = Manifest::load(&dir);
        Ok(Self { dir, manifest, quiet })
    }

    fn path(&self, p: &Path) -> Result<PathBuf, CliError> {
        let full = self.dir.join(p);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(format!("creating {}", parent.display()), e))?;
        }
        Ok(full)
    }

    fn create(&self, p: &Path) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let full = self.path(p)?;
        let f = File::create(&full).map_err(|e| CliError::io(format!("creating {}", full.display()), e))?;
        Ok((full, BufWriter::new(f)))
    }

    fn csv(&self, p: &Path, header: &[String]) -> Result<(PathBuf, csv::Writer<File>), CliError> {
        let full = self.path(p)?;
        let mut w = csv::Writer::from_path(&full).map_err(|e| io_of(&full, e))?;
        w.write_record(header).map_err(|e| io_of(&full, e))?;
        Ok((full, w))
    }

    fn text(&mut self, p: &Path, body: &str) -> Result<PathBuf, CliError> {
        let full = self.path(p)?;
        fs::write(&full, body).map_err(|e| CliError::io(format!("writing {}", full.display()), e))?;
        self.record(&full)?;
        Ok(full)
    }

    fn record(&mut self, full: &Path) -> Result<(), CliError> {
        self.manifest.record(&self.dir, full)
    }

    fn finish_csv(&mut self, full: &Path, mut w: csv::Writer<File>) -> Result<(), CliError> {
        w.flush().map_err(|e| CliError::io(format!("writing {}", full.display()), e))?;
        drop(w);
        self.record(full)
    }

    fn finish(&mut self, full: &Path, mut w: BufWriter<File>) -> Result<(), CliError> {
        w.flush().map_err(|e| CliError::io(format!("writing {}", full.display()), e))?;
        drop(w);
        self.record(full)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn close(self) -> Result<Manifest, CliError> {
        self.manifest.write(&self.dir)?;
        Ok(self.manifest)
    }
}

fn io_of(path: &Path, e: csv::Error) -> CliError {
    CliError::io(format!("writing {}", path.display()), std::io::Error::other(e.to_string()))
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn num(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else {
        x.to_string()
    }
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn load_config(cli: &Cli, path: &Path) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

fn artifacts(cli: &Cli, cfg: Option<&RunConfig>) -> Result<Artifacts, CliError> {
    let dir = cli
        .out_dir
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    Artifacts::open(dir, cli.quiet)
}

pub(crate) fn dispatch(cli: &Cli) -> Result<Manifest, CliError> {
    match &cli.command {
        Command::Simulate(a) => {
            let cfg = load_config(cli, &a.config)?;
            let mut out = artifacts(cli, Some(&cfg))?;
            let replicas = a.replicas.unwrap_or(cfg.run.replicas);
            simulate(&mut out, &cfg, replicas, &a.out)?;
            if let Some(g) = &a.genealogy {
                genealogy(&mut out, &cfg, a.genealogy_replica, g)?;
            }
            out.close()
        }
        Command::Couple(a) => {
            let cfg = load_config(cli, &a.config)?;
            let mut out = artifacts(cli, Some(&cfg))?;
            let replicas = a.replicas.unwrap_or(cfg.run.replicas);
            let check = couple(&mut out, &cfg, &a.resolution, replicas, &a.out);
            close_after(out, check)
        }
        Command::Percolate(a) => {
            let mut out = artifacts(cli, None)?;
            percolate(&mut out, a.p, a.height, a.replicas, cli.seed.unwrap_or(0), &a.out)?;
            out.close()
        }
        Command::Renorm(a) => {
            let mut cfg = load_config(cli, &a.config)?;
            if let Some(p) = a.p {
                cfg.renorm.p = p;
            }
            let mut out = artifacts(cli, Some(&cfg))?;
            let check = match &a.block {
                Some(block) => {
                    let replicas = a.replicas.unwrap_or(cfg.run.replicas);
                    renorm_ledgers(&mut out, &cfg, block, replicas, &a.out)
                }
                None => renorm_search(&mut out, &cfg, &a.out).map(|_| ()),
            };
            close_after(out, check)
        }
        Command::Tail(a) => {
            let mut out = artifacts(cli, None)?;
            tail(&mut out, &a.input, &a.grid, &a.out)?;
            out.close()
        }
        Command::Fit(a) => {
            let mut out = artifacts(cli, None)?;
            let policy = WindowPolicy {
                tail_floor: a.tail_floor,
                tail_ceil: a.tail_ceil,
                s_max: a.s_max.unwrap_or(f64::INFINITY),
                ..WindowPolicy::default()
            };
            fit(&mut out, &a.input, &policy, &a.out)?;
            out.close()
        }
        Command::Oracle(a) => {
            let mut out = artifacts(cli, None)?;
            oracle(&mut out, a.lambda, a.t, &a.out)?;
            out.close()
        }
        Command::Probe(a) => {
            let cfg = load_config(cli, &a.config)?;
            let mut out = artifacts(cli, Some(&cfg))?;
            probe(&mut out, &cfg, a.replicas.unwrap_or(cfg.run.replicas), &a.out)?;
            out.close()
        }
        Command::Discretize(a) => {
            let cfg = load_config(cli, &a.config)?;
            let mut out = artifacts(cli, Some(&cfg))?;
            let grid = discretize(&cfg.kernel(), &cfg.domain, a.resolution, &DiscretizeOptions::default())?;
            write_grid(&mut out, &grid, &a.out)?;
            out.close()
        }
        Command::Recipe {
            recipe: Recipe::TailDemo { replicas },
        } => {
            let cfg = tail_demo_config(*replicas, cli.seed.unwrap_or(0));
            let mut out = artifacts(cli, None)?;
            tail_demo(&mut out, &cfg)?;
            out.close()
        }
    }
}

/// Writes the manifest even when a check failed, then reports the failure.
fn close_after(out: Artifacts, check: Result<(), CliError>) -> Result<Manifest, CliError> {
    match check {
        Err(e @ CliError::Violation(_)) => {
            out.close()?;
            Err(e)
        }
        Err(e) => Err(e),
        Ok(()) => out.close(),
    }
}

fn simulate(out: &mut Artifacts, cfg: &RunConfig, replicas: usize, file: &Path) -> Result<Vec<Option<f64>>, CliError> {
    let mut params = cfg.params();
    params.record_genealogy = false;
    let records = run_replicas(&params, &cfg.initial(), replicas)?;
    let (path, mut w) = out.csv(file, &header(&["replica", "seed", "outcome", "tau", "peak_pop", "events"]))?;
    for (i, r) in records.iter().enumerate() {
        let tau = r.outcome.extinction_time().unwrap_or(f64::INFINITY);
        w.write_record([
            i.to_string(),
            r.seed.to_string(),
            r.outcome.label().to_string(),
            num(tau),
            r.peak_population.to_string(),
            r.events.to_string(),
        ])
        .map_err(|e| io_of(&path, e))?;
    }
    out.finish_csv(&path, w)?;
    let extinct = records.iter().filter(|r| r.outcome.is_extinct()).count();
    out.say(format!("simulate: {replicas} replicas, {extinct} extinct -> {}", path.display()));
    Ok(records.iter().map(|r| r.outcome.extinction_time()).collect())
}

fn genealogy(out: &mut Artifacts, cfg: &RunConfig, replica: u64, file: &Path) -> Result<(), CliError> {
    let mut params = cfg.params();
    params.seed = brw_core::rng::replica_seed(cfg.run.seed, replica);
    params.record_genealogy = true;
    let (_, tree) = run(&params, &cfg.initial())?;
    let tree = tree.ok_or_else(|| brw_core::Error::Invariant("genealogy requested but not recorded".into()))?;
    let (path, mut w) = out.create(file)?;
    tree.write_jsonl(&mut w).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    out.finish(&path, w)
}

fn couple(out: &mut Artifacts, cfg: &RunConfig, resolution: &str, replicas: usize, file: &Path) -> Result<(), CliError> {
    let params = cfg.params();
    let opts = DiscretizeOptions::default();
    let grid = match resolution {
        "auto" => min_resolution_supercritical(&params.kernel, &params.domain, params.branching_rate, 16, &opts)?,
        n => {
            let n: u32 = n
                .parse()
                .map_err(|_| CliError::Usage(format!("--resolution: expected an integer or 'auto', got '{n}'")))?;
            discretize(&params.kernel, &params.domain, n, &opts)?
        }
    };
    let pairs = run_coupled_replicas(&params, &grid, replicas)?;
    let (path, mut w) = out.csv(
        file,
        &header(&["replica", "grid_outcome", "cont_outcome", "max_grid_pop", "max_cont_pop", "domination_ok"]),
    )?;
    for (i, p) in pairs.iter().enumerate() {
        w.write_record([
            i.to_string(),
            p.grid.label().to_string(),
            p.continuous.label().to_string(),
            p.max_grid_population.to_string(),
            p.max_continuous_population.to_string(),
            p.domination_ok.to_string(),
        ])
        .map_err(|e| io_of(&path, e))?;
    }
    out.finish_csv(&path, w)?;
    let failures = pairs.iter().filter(|p| !p.domination_ok).count();
    out.say(format!(
        "couple: resolution {}, mass {}, {replicas} replicas, {failures} domination failures -> {}",
        grid.resolution(),
        grid.total_mass(),
        path.display()
    ));
    if failures > 0 {
        return Err(CliError::Violation(format!("{failures} coupled replicas broke domination")));
    }
    Ok(())
}

fn percolate(out: &mut Artifacts, p: f64, height: u32, replicas: usize, seed: u64, file: &Path) -> Result<(), CliError> {
    let runs = percolate_replicas(p, height, replicas, seed)?;
    let (path, mut w) = out.csv(file, &header(&["replica", "sigma", "survived"]))?;
    for (i, r) in runs.iter().enumerate() {
        let sigma = r.sigma.finite().map_or("inf".to_string(), |m| m.to_string());
        w.write_record([i.to_string(), sigma, r.sigma.survived().to_string()])
            .map_err(|e| io_of(&path, e))?;
    }
    out.finish_csv(&path, w)?;
    let survived = runs.iter().filter(|r| r.sigma.survived()).count();
    out.say(format!("percolate: p={p}, height {height}, {survived}/{replicas} reached the top -> {}", path.display()));
    Ok(())
}

/// Reads the extinction times (`tau`) or percolation depths (`sigma`) of a
/// simulate or percolate CSV; `None` marks a survivor.
pub fn read_values(input: &Path) -> Result<Vec<Option<f64>>, CliError> {
    let mut r = csv::Reader::from_path(input).map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
    let headers = r.headers()?.clone();
    let col = ["tau", "sigma"]
        .iter()
        .find_map(|c| headers.iter().position(|h| h == *c))
        .ok_or_else(|| CliError::Usage(format!("{}: no 'tau' or 'sigma' column", input.display())))?;
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).unwrap_or("");
        let v = match field {
            "inf" => None,
            s => Some(s.parse::<f64>().map_err(|_| {
                CliError::Usage(format!("{} row {}: bad value '{s}'", input.display(), line + 1))
            })?),
        };
        values.push(v);
    }
    Ok(values)
}

/// Parses `start:stop:step`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::Usage(format!("--grid: expected start:stop:step, got '{spec}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    Ok(linear_grid(v[0], v[1], v[2])?)
}

fn write_tail(out: &mut Artifacts, t: &TailEstimate, file: &Path) -> Result<PathBuf, CliError> {
    let (path, mut w) = out.create(file)?;
    t.write_csv(&mut w).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    out.finish(&path, w)?;
    Ok(path)
}

fn tail(out: &mut Artifacts, input: &Path, grid: &str, file: &Path) -> Result<(), CliError> {
    let grid = parse_grid(grid)?;
    let values = read_values(input)?;
    let t = tail_from_values(&values, &grid)?;
    let path = write_tail(out, &t, file)?;
    out.say(format!("tail: {} samples, {} grid points -> {}", t.total, t.len(), path.display()));
    Ok(())
}

/// Reads a tail CSV back. Censoring counts are not stored and come back as zero.
pub fn read_tail(input: &Path) -> Result<TailEstimate, CliError> {
    let mut r = csv::Reader::from_path(input).map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
    let expected = ["s", "tail", "lower", "upper", "count", "total"];
    if r.headers()?.iter().ne(expected) {
        return Err(CliError::Usage(format!("{}: expected columns {}", input.display(), expected.join(","))));
    }
    let mut t = TailEstimate {
        grid: Vec::new(),
        tail: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        counts: Vec::new(),
        total: 0,
        extinct: 0,
        censored_horizon: 0,
        censored_cap: 0,
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || CliError::Usage(format!("{} row {}: malformed", input.display(), line + 1));
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad());
        t.grid.push(f(0)?);
        t.tail.push(f(1)?);
        t.lower.push(f(2)?);
        t.upper.push(f(3)?);
        t.counts.push(rec[4].parse().map_err(|_| bad())?);
        t.total = rec[5].parse().map_err(|_| bad())?;
    }
    if t.is_empty() {
        return Err(brw_core::Error::EmptyInput("tail file has no rows").into());
    }
    Ok(t)
}

fn fit(out: &mut Artifacts, input: &Path, policy: &WindowPolicy, file: &Path) -> Result<(), CliError> {
    let t = read_tail(input)?;
    let f = fit_exponential(&t, policy)?;
    let path = out.text(file, &format!("{}\n", f.summary_line()))?;
    out.say(format!("fit: {} -> {}", f.summary_line(), path.display()));
    Ok(())
}

fn oracle(out: &mut Artifacts, lambda: f64, t: f64, file: &Path) -> Result<(), CliError> {
    let cdf = extinction_cdf(lambda, t)?;
    let master = master_equation_cdf(lambda, t)?;
    let q = extinction_probability(lambda)?;
    let body = format!(
        "lambda={lambda}\nt={t}\nextinction_cdf={cdf}\nmaster_equation_cdf={master}\nextinction_probability={q}\n"
    );
    out.text(file, &body)?;
    out.say(body.trim_end());
    Ok(())
}

/// Every site in discrete space; ten cell centres per axis in continuous space.
fn probe_positions(domain: &CubeDomain) -> Vec<Vec<f64>> {
    match domain.space() {
        Space::Discrete => domain.sites().into_iter().map(|s| s.into_iter().map(|v| v as f64).collect()).collect(),
        Space::Continuous => {
            let (d, l) = (domain.dim(), domain.side());
            let axis: Vec<f64> = (0..10).map(|k| -l / 2.0 + (k as f64 + 0.5) * l / 10.0).collect();
            let mut out = vec![Vec::new()];
            for _ in 0..d {
                out = out
                    .into_iter()
                    .flat_map(|p: Vec<f64>| {
                        axis.iter().map(move |&a| {
                            let mut q = p.clone();
                            q.push(a);
                            q
                        })
                    })
                    .collect();
            }
            out
        }
    }
}

fn probe(out: &mut Artifacts, cfg: &RunConfig, replicas: usize, file: &Path) -> Result<(), CliError> {
    let positions = probe_positions(&cfg.domain);
    let report = survival_probe(&cfg.params(), &positions, replicas)?;
    let mut cols: Vec<String> = (1..=cfg.dim).map(|i| format!("x_{i}")).collect();
    cols.extend(header(&["survival", "lower", "upper", "survived", "replicas"]));
    let (path, mut w) = out.csv(file, &cols)?;
    for row in &report.rows {
        let s = &row.survival;
        let mut rec: Vec<String> = row.position.iter().map(|x| x.to_string()).collect();
        rec.extend([
            s.estimate.to_string(),
            s.lower.to_string(),
            s.upper.to_string(),
            s.successes.to_string(),
            s.trials.to_string(),
        ]);
        w.write_record(&rec).map_err(|e| io_of(&path, e))?;
    }
    out.finish_csv(&path, w)?;
    out.say(format!("probe: {} positions, min survival {} -> {}", positions.len(), opt(report.delta_hat), path.display()));
    Ok(())
}

fn write_grid(out: &mut Artifacts, grid: &GridKernel, file: &Path) -> Result<(), CliError> {
    let (path, mut w) = out.create(file)?;
    grid.write_csv(&mut w).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    out.finish(&path, w)?;
    out.say(format!("discretize: resolution {}, total mass {} -> {}", grid.resolution(), grid.total_mass(), path.display()));
    Ok(())
}

/// Searches the grid, re-estimates `ĉ` at the accepted point, and writes
/// `search.csv` and `block.toml` under `dir`.
fn renorm_search(out: &mut Artifacts, cfg: &RunConfig, dir: &Path) -> Result<BlockParams, CliError> {
    let rn = &cfg.renorm;
    let params = cfg.params();
    let points = search_block_params(&params, rn.p, &rn.quotas, &rn.durations, rn.search_replicas, rn.block_cap)?;
    let (path, mut w) = out.csv(
        &dir.join("search.csv"),
        &header(&["quota", "duration", "c11", "c12", "c21", "c22", "min_lower", "cap_hits", "accepted"]),
    )?;
    for pt in &points {
        let m = &pt.matrix;
        w.write_record([
            m.quota.to_string(),
            m.duration.to_string(),
            m.c[0][0].estimate.to_string(),
            m.c[0][1].estimate.to_string(),
            m.c[1][0].estimate.to_string(),
            m.c[1][1].estimate.to_string(),
            m.min_lower().to_string(),
            m.cap_hits.to_string(),
            pt.accepted.to_string(),
        ])
        .map_err(|e| io_of(&path, e))?;
    }
    out.finish_csv(&path, w)?;
    let Some(found) = points.iter().find(|p| p.accepted) else {
        let best = points.iter().map(|p| p.matrix.min_lower()).fold(0.0, f64::max);
        return Err(brw_core::Error::NotFound {
            what: "block parameters",
            best,
        }
        .into());
    };
    let matrix = if rn.refine_replicas > 0 {
        estimate_block_matrix(&params, found.matrix.quota, found.matrix.duration, rn.refine_replicas, rn.block_cap)?
    } else {
        found.matrix.clone()
    };
    let block = BlockParams::from_matrix(&matrix, rn.p, rn.block_cap);
    block.validate()?;
    let text = toml::to_string(&block).map_err(|e| CliError::Usage(format!("serializing block parameters: {e}")))?;
    let bpath = out.text(&dir.join("block.toml"), &text)?;
    out.say(format!(
        "renorm search: M={}, T={}, c={:?} -> {}",
        block.quota,
        block.duration,
        block.c,
        bpath.display()
    ));
    Ok(block)
}

pub fn read_block(path: &Path) -> Result<BlockParams, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))
}

#[derive(Debug, Clone, Serialize)]
pub struct RenormReport {
    pub replicas: usize,
    pub p: f64,
    pub quota: u32,
    pub duration: f64,
    pub height: u32,
    pub clock: ClockRule,
    pub extinct: usize,
    /// Ledgers where some attempt reached the height.
    pub percolating: usize,
    pub truncated: usize,
    pub discipline_failures: usize,
    pub survival_failures: usize,
    pub bound_failures: usize,
    pub bound_checked: usize,
    pub backed: Proportion,
    pub unbacked: Proportion,
    pub clipped_thresholds: u64,
    pub g_mean: Option<f64>,
    pub g_max: Option<u32>,
    pub chi_square: Option<ChiSquareReport>,
}

impl RenormReport {
    pub fn from_ledgers(ledgers: &[BlockLedger], block: &BlockParams, opts_height: u32, clock: ClockRule) -> Self {
        let count = |f: &dyn Fn(&BlockLedger) -> bool| ledgers.iter().filter(|l| f(l)).count();
        let (mut be, mut bo, mut ue, mut uo) = (0, 0, 0, 0);
        for l in ledgers {
            be += l.backed.examined;
            bo += l.backed.open;
            ue += l.unbacked.examined;
            uo += l.unbacked.open;
        }
        let gs: Vec<u64> = ledgers.iter().filter_map(|l| l.g.map(u64::from)).collect();
        Self {
            replicas: ledgers.len(),
            p: block.p,
            quota: block.quota,
            duration: block.duration,
            height: opts_height,
            clock,
            extinct: count(&|l| l.extinction.is_some()),
            percolating: gs.len(),
            truncated: count(&|l| l.truncated),
            discipline_failures: count(&|l| !l.disciplines.ok()),
            survival_failures: count(&|l| !l.survival_consistent()),
            bound_failures: count(&|l| l.bound_ok() == Some(false)),
            bound_checked: count(&|l| l.bound_ok().is_some()),
            backed: Proportion::new(bo, be),
            unbacked: Proportion::new(uo, ue),
            clipped_thresholds: ledgers.iter().map(|l| l.clipped_thresholds).sum(),
            g_mean: (!gs.is_empty()).then(|| gs.iter().sum::<u64>() as f64 / gs.len() as f64),
            g_max: gs.iter().max().map(|&g| g as u32),
            chi_square: chi_square_geometric(&gs).ok(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.discipline_failures > 0 {
            v.push(format!("{} ledgers broke a collection discipline", self.discipline_failures));
        }
        if self.survival_failures > 0 {
            v.push(format!("{} ledgers percolated past the walk's extinction", self.survival_failures));
        }
        if self.bound_failures > 0 {
            v.push(format!("{} extinct ledgers broke the decomposition bound", self.bound_failures));
        }
        v
    }
}

#[derive(Serialize)]
struct EdgeLine<'a> {
    replica: usize,
    #[serde(flatten)]
    edge: &'a EdgeRecord,
}

fn renorm_ledgers(out: &mut Artifacts, cfg: &RunConfig, block: &Path, replicas: usize, dir: &Path) -> Result<(), CliError> {
    let block = read_block(block)?;
    let opts = cfg.renorm.options.clone();
    let r = Renormalizer::new(&cfg.params(), &block, &cfg.initial(), opts.clone())?;
    let ledgers = r.replicas(replicas, cfg.run.seed)?;

    let (path, mut w) = out.csv(&dir.join("summary.csv"), &header(&["replica", "tau", "g", "bound_ok", "perc_survived"]))?;
    for (i, l) in ledgers.iter().enumerate() {
        w.write_record([
            i.to_string(),
            num(l.extinction.unwrap_or(f64::INFINITY)),
            opt(l.g),
            opt(l.bound_ok()),
            l.percolation_survived().to_string(),
        ])
        .map_err(|e| io_of(&path, e))?;
    }
    out.finish_csv(&path, w)?;

    if opts.record_edges {
        let (epath, mut w) = out.create(&dir.join("edges.jsonl"))?;
        for (i, l) in ledgers.iter().enumerate() {
            for edge in &l.edges {
                serde_json::to_writer(&mut w, &EdgeLine { replica: i, edge })
                    .map_err(|e| CliError::io(format!("writing {}", epath.display()), e.into()))?;
                writeln!(w).map_err(|e| CliError::io(format!("writing {}", epath.display()), e))?;
            }
        }
        out.finish(&epath, w)?;
    }

    let report = RenormReport::from_ledgers(&ledgers, &block, opts.height, opts.clock);
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    out.text(&dir.join("report.json"), &json)?;
    out.say(format!(
        "renorm: {} ledgers, {} extinct, backed edges open {:.4} (n={}), g mean {}",
        report.replicas,
        report.extinct,
        report.backed.estimate,
        report.backed.trials,
        opt(report.g_mean)
    ));
    let v = report.violations();
    if v.is_empty() {
        Ok(())
    } else {
        Err(CliError::Violation(v.join("; ")))
    }
}

/// `λ = 3` on `{−5..5}`, lazy walk holding with probability 0.2, `T_max = 200`.
pub fn tail_demo_config(replicas: usize, seed: u64) -> RunConfig {
    RunConfig {
        experiment: Some(crate::Experiment::Simulate),
        family: KernelFamily::LazyNearestNeighbor { laziness: 0.2 },
        dim: 1,
        domain: CubeDomain::discrete(1, 11).expect("valid domain"),
        run: RunSection {
            lambda: 3.0,
            horizon: 200.0,
            population_cap: 1000,
            replicas,
            seed,
            initial: vec![vec![0.0]],
            genealogy: false,
        },
        renorm: RenormSection::default(),
        output_dir: None,
    }
}

fn tail_demo(out: &mut Artifacts, cfg: &RunConfig) -> Result<(), CliError> {
    DispersalKernel::new(cfg.dim, cfg.family)?;
    out.text(Path::new("config.toml"), &cfg.to_toml())?;
    let values = simulate(out, cfg, cfg.run.replicas, Path::new("simulate.csv"))?;
    let t = tail_from_values(&values, &linear_grid(0.0, 150.0, 0.05)?)?;
    write_tail(out, &t, Path::new("tail.csv"))?;
    let f = fit_exponential(&t, &WindowPolicy::for_horizon(cfg.run.horizon))?;
    out.text(Path::new("fit.txt"), &format!("{}\n", f.summary_line()))?;
    out.say(format!("tail-demo: {}", f.summary_line()));
    Ok(())
}
