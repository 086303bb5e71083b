//! Command implementations behind the `smartho-sim` binary.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::pipeline::{self, ParseResult, ProgramKind, SwitchProgram};
use crate::qmodel::{self, PathTopology};
use crate::sim::forwarding::{self, ForwardingConfig};
use crate::sim::metrics::SCHEMA_VERSION;
use crate::sim::{self, Mode, ScenarioConfig, SimError};
use crate::wire::{self, PortBits};

#[derive(Debug, Parser)]
#[command(name = "smartho-sim", version, about = "Intra-CU handover simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario (optionally in both modes) and write its metrics.
    Run(RunArgs),
    /// Run a grid of scenarios and the forwarding experiment.
    Sweep(SweepArgs),
    /// Print the delay budget of a path topology.
    Qmodel(QmodelArgs),
    /// Parse a hex-encoded frame with a switch program and print it.
    WireParse(WireParseArgs),
    /// Check a scenario, sweep, topology or program file.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Traditional,
    Smartho,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Traditional => vec![Mode::Traditional],
            ModeArg::Smartho => vec![Mode::Smartho],
            ModeArg::Both => vec![Mode::Traditional, Mode::Smartho],
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario JSON. Built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub tandem: Option<u16>,
    /// Parallel ping processes per DU path.
    #[arg(long)]
    pub load: Option<u32>,
    /// Write trace.log.
    #[arg(long)]
    pub trace: bool,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep JSON. Built-in grid when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "sweep-out")]
    pub out: PathBuf,
    /// First seed; repetition r uses seed + r.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_delimiter = ',')]
    pub tandem: Option<Vec<u16>>,
    #[arg(long, value_delimiter = ',')]
    pub load: Option<Vec<u32>>,
    /// Seeds per grid point.
    #[arg(long)]
    pub reps: Option<u32>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Keep finished rows of an earlier sweep into the same directory.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub force: bool,
    /// Skip the forwarding experiment.
    #[arg(long)]
    pub no_forwarding: bool,
}

#[derive(Debug, Args)]
pub struct QmodelArgs {
    /// Path topology JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Measurement-report interval in milliseconds.
    #[arg(long, default_value_t = 100.0)]
    pub t_mr_ms: f64,
    /// Also write budget.csv here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProgramArg {
    Cu,
    Du,
    TagForward,
    IpBaseline,
}

impl From<ProgramArg> for ProgramKind {
    fn from(p: ProgramArg) -> Self {
        match p {
            ProgramArg::Cu => ProgramKind::Cu,
            ProgramArg::Du => ProgramKind::Du,
            ProgramArg::TagForward => ProgramKind::TagForward,
            ProgramArg::IpBaseline => ProgramKind::IpBaseline,
        }
    }
}

#[derive(Debug, Args)]
pub struct WireParseArgs {
    /// Frame bytes as hex (spaces and colons allowed).
    pub hex: String,
    #[arg(long, value_enum, default_value = "du")]
    pub program: ProgramArg,
    /// Program JSON to use instead of the built-in one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ingress port index.
    #[arg(long, default_value_t = 0)]
    pub port: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileKind {
    Scenario,
    Sweep,
    Topology,
    Program,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "scenario")]
    pub kind: FileKind,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Sim(e) if !e.is_config() => 2,
            CliError::Sim(_) | CliError::Usage(_) => 1,
            CliError::Io { .. } | CliError::Csv(_) => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| {
        CliError::Sim(SimError::ConfigParse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    })
}

/// Refuses to overwrite any of `files` in `dir` unless `force` is set.
fn guard_outputs(dir: &Path, files: &[&str], force: bool) -> Result<(), CliError> {
    if force {
        return Ok(());
    }
    for f in files {
        let p = dir.join(f);
        if p.exists() {
            return Err(CliError::Usage(format!(
                "{} exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    Ok(())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Run(a) => cmd_run(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Qmodel(a) => cmd_qmodel(&a, out),
        Command::WireParse(a) => cmd_wire_parse(&a, out),
        Command::Validate(a) => cmd_validate(&a, out),
    }
}

fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig, CliError> {
    match path {
        Some(p) => Ok(ScenarioConfig::from_json(&read(p)?)?),
        None => Ok(ScenarioConfig::default()),
    }
}

fn improvement_pct(baseline: f64, candidate: f64) -> f64 {
    100.0 * (baseline - candidate) / baseline
}

pub fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_scenario(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.tandem {
        cfg.tandem = t;
    }
    if let Some(l) = a.load {
        cfg.parallel_pings = l;
    }
    if a.trace {
        cfg.trace = true;
    }
    let modes = a.mode.map_or_else(|| vec![cfg.mode], ModeArg::modes);
    cfg.validate()?;
    let mut files = vec!["metrics.csv", "summary.txt"];
    if cfg.trace {
        files.push("trace.log");
    }
    guard_outputs(&a.out, &files, a.force)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;

    let mut csv_out = Vec::new();
    let mut summary = String::new();
    let mut trace_out = Vec::new();
    let mut totals = BTreeMap::new();
    for (i, mode) in modes.iter().enumerate() {
        let run_cfg = ScenarioConfig {
            mode: *mode,
            ..cfg.clone()
        };
        let (report, trace) = sim::run_scenario(&run_cfg)?;
        if !report.conservation.balanced() {
            return Err(CliError::Sim(SimError::Runtime(format!(
                "packet conservation violated at {:?}",
                report.conservation.unbalanced_nodes()
            ))));
        }
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        if i > 0 {
            // one header for the whole file
            let first_nl = buf.iter().position(|&b| b == b'\n').map_or(0, |p| p + 1);
            buf.drain(..first_nl);
        }
        csv_out.extend_from_slice(&buf);
        summary.push_str(&report.summary());
        summary.push('\n');
        if cfg.trace {
            writeln!(trace_out, "# mode {}", mode.as_str()).expect("in-memory write");
            trace.write_to(&mut trace_out).expect("in-memory write");
        }
        totals.insert(*mode, report.aggregates().mean_total_ho_time_us);
    }
    if let (Some(t), Some(s)) = (totals.get(&Mode::Traditional), totals.get(&Mode::Smartho)) {
        summary.push_str(&format!("improvement_pct: {:.2}\n", improvement_pct(*t, *s)));
    }
    write_file(&a.out.join("metrics.csv"), &csv_out)?;
    write_file(&a.out.join("summary.txt"), summary.as_bytes())?;
    if cfg.trace {
        write_file(&a.out.join("trace.log"), &trace_out)?;
    }
    out.write_all(summary.as_bytes()).map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

/// Sweep grid file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub scenario: ScenarioConfig,
    pub modes: Vec<Mode>,
    pub tandems: Vec<u16>,
    pub loads: Vec<u32>,
    pub first_seed: u64,
    pub reps: u32,
    pub forwarding: ForwardingSweep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardingSweep {
    pub enabled: bool,
    pub base: ForwardingConfig,
    pub switches: Vec<usize>,
    pub loads: Vec<u32>,
}

impl Default for ForwardingSweep {
    fn default() -> Self {
        ForwardingSweep {
            enabled: true,
            base: ForwardingConfig::default(),
            switches: forwarding::DEFAULT_SWITCHES.to_vec(),
            loads: forwarding::DEFAULT_LOADS.to_vec(),
        }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            scenario: ScenarioConfig::default(),
            modes: vec![Mode::Traditional, Mode::Smartho],
            tandems: vec![1, 2, 3, 4],
            loads: vec![0, 20, 40, 60],
            first_seed: 1,
            reps: 5,
            forwarding: ForwardingSweep::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.reps == 0 {
            return Err(SimError::Config("reps must be at least 1".into()));
        }
        if self.modes.is_empty() || self.tandems.is_empty() || self.loads.is_empty() {
            return Err(SimError::Config("modes, tandems and loads must be non-empty".into()));
        }
        for &t in &self.tandems {
            ScenarioConfig {
                tandem: t,
                ..self.scenario.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    /// Grid points in output order.
    pub fn points(&self) -> Vec<RunKey> {
        let mut v = Vec::new();
        for &mode in &self.modes {
            for &tandem in &self.tandems {
                for &load in &self.loads {
                    for r in 0..self.reps {
                        v.push(RunKey {
                            mode,
                            tandem,
                            load,
                            seed: self.first_seed + r as u64,
                        });
                    }
                }
            }
        }
        v.sort();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RunKey {
    pub mode: Mode,
    pub tandem: u16,
    pub load: u32,
    pub seed: u64,
}

/// One row of runs.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub schema_version: u32,
    pub config_hash: String,
    pub mode: Mode,
    pub tandem: u16,
    pub load: u32,
    pub seed: u64,
    pub status: String,
    pub error: String,
    pub n_ho: usize,
    pub completed: usize,
    pub mean_ho_time_us: f64,
    pub p95_ho_time_us: f64,
    pub mean_total_ho_time_us: f64,
    pub drop_pct: f64,
    pub drop_threshold_us: u64,
    pub replays: u64,
    pub wasted_preallocations: u64,
    pub router_drops: u64,
}

impl RunRow {
    fn key(&self) -> RunKey {
        RunKey {
            mode: self.mode,
            tandem: self.tandem,
            load: self.load,
            seed: self.seed,
        }
    }

    fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Runs one grid point. Failures become a flagged row.
pub fn run_point(base: &ScenarioConfig, k: RunKey) -> RunRow {
    let cfg = ScenarioConfig {
        mode: k.mode,
        tandem: k.tandem,
        parallel_pings: k.load,
        seed: k.seed,
        trace: false,
        ..base.clone()
    };
    let mut row = RunRow {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        mode: k.mode,
        tandem: k.tandem,
        load: k.load,
        seed: k.seed,
        status: "ok".into(),
        error: String::new(),
        n_ho: 0,
        completed: 0,
        mean_ho_time_us: f64::NAN,
        p95_ho_time_us: f64::NAN,
        mean_total_ho_time_us: f64::NAN,
        drop_pct: f64::NAN,
        drop_threshold_us: 0,
        replays: 0,
        wasted_preallocations: 0,
        router_drops: 0,
    };
    match sim::run_scenario(&cfg) {
        Ok((r, _)) if !r.conservation.balanced() => {
            row.status = "failed".into();
            row.error = "packet conservation violated".into();
        }
        Ok((r, _)) => {
            let a = r.aggregates();
            row.n_ho = a.n_ho;
            row.completed = a.completed;
            row.mean_ho_time_us = a.mean_ho_time_us;
            row.p95_ho_time_us = a.p95_ho_time_us;
            row.mean_total_ho_time_us = a.mean_total_ho_time_us;
            row.drop_pct = a.drop_pct;
            row.drop_threshold_us = r.drop_threshold_us;
            row.replays = r.replays;
            row.wasted_preallocations = r.wasted_preallocations;
            row.router_drops = r.router_drops;
        }
        Err(e) => {
            row.status = "failed".into();
            row.error = e.to_string();
        }
    }
    row
}

/// Mean and 95% confidence half-width (Student t).
pub fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CiRow {
    pub schema_version: u32,
    pub mode: Mode,
    pub tandem: u16,
    pub load: u32,
    pub reps: usize,
    pub mean_total_ho_time_us: f64,
    pub mean_total_ho_time_ci95: f64,
    pub mean_ho_time_us: f64,
    pub mean_ho_time_ci95: f64,
    pub drop_pct: f64,
    pub drop_pct_ci95: f64,
    /// Against traditional at the same tandem and load; empty for
    /// traditional rows.
    pub improvement_pct: Option<f64>,
}

pub fn ci_rows(rows: &[RunRow]) -> Vec<CiRow> {
    let mut groups: BTreeMap<(Mode, u16, u32), Vec<&RunRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.ok()) {
        groups.entry((r.mode, r.tandem, r.load)).or_default().push(r);
    }
    let mut out: Vec<CiRow> = groups
        .iter()
        .map(|(&(mode, tandem, load), rs)| {
            let col = |f: fn(&RunRow) -> f64| -> Vec<f64> {
                rs.iter().map(|r| f(r)).filter(|v| v.is_finite()).collect()
            };
            let (tt, tt_ci) = mean_ci(&col(|r| r.mean_total_ho_time_us));
            let (ht, ht_ci) = mean_ci(&col(|r| r.mean_ho_time_us));
            let (dp, dp_ci) = mean_ci(&col(|r| r.drop_pct));
            CiRow {
                schema_version: SCHEMA_VERSION,
                mode,
                tandem,
                load,
                reps: rs.len(),
                mean_total_ho_time_us: tt,
                mean_total_ho_time_ci95: tt_ci,
                mean_ho_time_us: ht,
                mean_ho_time_ci95: ht_ci,
                drop_pct: dp,
                drop_pct_ci95: dp_ci,
                improvement_pct: None,
            }
        })
        .collect();
    let baseline: BTreeMap<(u16, u32), f64> = out
        .iter()
        .filter(|r| r.mode == Mode::Traditional)
        .map(|r| ((r.tandem, r.load), r.mean_total_ho_time_us))
        .collect();
    for r in out.iter_mut().filter(|r| r.mode == Mode::Smartho) {
        r.improvement_pct = baseline
            .get(&(r.tandem, r.load))
            .map(|b| improvement_pct(*b, r.mean_total_ho_time_us));
    }
    out
}

fn read_rows(path: &Path) -> Result<Vec<RunRow>, CliError> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for r in rd.deserialize() {
        match r {
            Ok(row) => rows.push(row),
            // a row cut short by an interrupted sweep
            Err(e) => log::warn!("{}: skipping unreadable row: {e}", path.display()),
        }
    }
    Ok(rows)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut sc: SweepConfig = match &a.config {
        Some(p) => parse_json(&read(p)?)?,
        None => SweepConfig::default(),
    };
    if let Some(m) = a.mode {
        sc.modes = m.modes();
    }
    if let Some(t) = &a.tandem {
        sc.tandems = t.clone();
    }
    if let Some(l) = &a.load {
        sc.loads = l.clone();
    }
    if let Some(r) = a.reps {
        sc.reps = r;
    }
    if let Some(s) = a.seed {
        sc.first_seed = s;
    }
    if a.no_forwarding {
        sc.forwarding.enabled = false;
    }
    sc.validate()?;
    if a.resume && a.force {
        return Err(CliError::Usage("--resume and --force are exclusive".into()));
    }
    let runs_path = a.out.join("runs.csv");
    let outputs = ["runs.csv", "runs_ci.csv", "forwarding.csv"];
    if !a.resume {
        guard_outputs(&a.out, &outputs, a.force)?;
    }
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;

    let points = sc.points();
    let mut done: BTreeMap<RunKey, RunRow> = BTreeMap::new();
    if a.resume && runs_path.exists() {
        let want: std::collections::BTreeSet<RunKey> = points.iter().copied().collect();
        for r in read_rows(&runs_path)? {
            if r.ok() && want.contains(&r.key()) && r.config_hash == run_point_hash(&sc.scenario, r.key()) {
                done.insert(r.key(), r);
            }
        }
        log::info!("resuming: {} of {} runs already done", done.len(), points.len());
    }
    // rewrite the kept rows, then append as runs finish
    write_rows(&runs_path, &done.values().cloned().collect::<Vec<_>>())?;
    let todo: Vec<RunKey> = points.iter().filter(|k| !done.contains_key(k)).copied().collect();
    let file = OpenOptions::new().append(true).open(&runs_path).map_err(io_err(&runs_path))?;
    let need_header = done.is_empty();
    let writer = Mutex::new(
        csv::WriterBuilder::new()
            .has_headers(need_header)
            .from_writer(file),
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let base = &sc.scenario;
    let new_rows: Vec<RunRow> = pool.install(|| {
        todo.par_iter()
            .map(|&k| {
                let row = run_point(base, k);
                let mut w = writer.lock().expect("writer lock");
                if let Err(e) = w.serialize(&row).and_then(|_| w.flush().map_err(Into::into)) {
                    log::error!("writing runs.csv: {e}");
                }
                row
            })
            .collect()
    });
    drop(writer);
    for r in new_rows {
        done.insert(r.key(), r);
    }
    let rows: Vec<RunRow> = done.into_values().collect();
    write_rows(&runs_path, &rows)?;
    write_rows(&a.out.join("runs_ci.csv"), &ci_rows(&rows))?;
    let failed = rows.iter().filter(|r| !r.ok()).count();

    if sc.forwarding.enabled {
        let f = &sc.forwarding;
        let mut recs = Vec::new();
        for r in 0..sc.reps {
            let base = ForwardingConfig {
                seed: sc.first_seed + r as u64,
                ..f.base.clone()
            };
            recs.extend(forwarding::sweep(&base, &f.switches, &f.loads)?);
        }
        let mut buf = Vec::new();
        forwarding::write_csv(&recs, &mut buf)?;
        write_file(&a.out.join("forwarding.csv"), &buf)?;
    }
    writeln!(
        out,
        "{} runs ({} failed) written to {}",
        rows.len(),
        failed,
        a.out.display()
    )
    .map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

fn run_point_hash(base: &ScenarioConfig, k: RunKey) -> String {
    ScenarioConfig {
        mode: k.mode,
        tandem: k.tandem,
        parallel_pings: k.load,
        seed: k.seed,
        trace: false,
        ..base.clone()
    }
    .hash()
}

pub fn cmd_qmodel(a: &QmodelArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let topo: PathTopology = parse_json(&read(&a.config)?)?;
    let b = qmodel::budget(a.t_mr_ms * 1e-3, &topo).map_err(SimError::from)?;
    let mut csv_buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut csv_buf);
        w.write_record(["t_mr_ms", "t_proc_rt_ms", "t_proc_cd_ms", "t_prep_ho_ms", "t_trig_ms", "t_delay_ms", "t_delay_raw_ms"])?;
        w.write_record(
            [a.t_mr_ms, b.t_proc_rt * 1e3, b.t_proc_cd * 1e3, b.t_prep_ho * 1e3, b.t_trig * 1e3, b.t_delay * 1e3, b.t_delay_raw * 1e3]
                .map(|v| format!("{v:.6}")),
        )?;
        w.flush().map_err(io_err(Path::new("<buffer>")))?;
    }
    if let Some(dir) = &a.out {
        guard_outputs(dir, &["budget.csv"], a.force)?;
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_file(&dir.join("budget.csv"), &csv_buf)?;
    }
    let stdout = Path::new("<stdout>");
    write!(out, "{b}").map_err(io_err(stdout))?;
    out.write_all(&csv_buf).map_err(io_err(stdout))?;
    Ok(())
}

fn load_program(kind: ProgramKind, path: Option<&Path>) -> Result<SwitchProgram, CliError> {
    match path {
        Some(p) => Ok(SwitchProgram::from_json(&read(p)?).map_err(SimError::from)?),
        None => Ok(pipeline::builtin(kind)),
    }
}

pub fn cmd_wire_parse(a: &WireParseArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let clean: String = a.hex.chars().filter(|c| !c.is_whitespace() && *c != ':').collect();
    let bytes = hex::decode(&clean).map_err(|e| CliError::Usage(format!("bad hex: {e}")))?;
    let prog = load_program(a.program.into(), a.config.as_deref())?;
    let stdout = Path::new("<stdout>");
    match prog.parser().run(&bytes) {
        ParseResult::Accept(p) => {
            write!(out, "{}", wire::describe(&p.packet)).map_err(io_err(stdout))?;
            if let Some(ip) = p.ipv4 {
                writeln!(out, "ipv4 src={:#010x} dst={:#010x} ttl={}", ip.src, ip.dst, ip.ttl).map_err(io_err(stdout))?;
            }
        }
        ParseResult::Reject(r) => writeln!(out, "parser rejected frame: {r:?}").map_err(io_err(stdout))?,
    }
    let ingress = PortBits::physical(a.port).map_err(|e| CliError::Usage(e.to_string()))?;
    let res = prog
        .process(&bytes, ingress, &pipeline::CostModel::default())
        .map_err(SimError::from)?;
    writeln!(
        out,
        "verdict {:?} lookups={} actions={} cost_us={:.3}",
        res.verdict, res.lookups, res.actions, res.cost_us
    )
    .map_err(io_err(stdout))?;
    Ok(())
}

pub fn cmd_validate(a: &ValidateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read(&a.config)?;
    let what = match a.kind {
        FileKind::Scenario => {
            let c = ScenarioConfig::from_json(&text)?;
            c.validate()?;
            c.mobility_rows()?;
            format!("scenario ok (hash {})", c.hash())
        }
        FileKind::Sweep => {
            let s: SweepConfig = parse_json(&text)?;
            s.validate()?;
            format!("sweep ok ({} runs)", s.points().len())
        }
        FileKind::Topology => {
            let t: PathTopology = parse_json(&text)?;
            qmodel::prep_ho_time(&t).map_err(SimError::from)?;
            qmodel::trig_time(&t).map_err(SimError::from)?;
            "topology ok".to_string()
        }
        FileKind::Program => {
            let p = SwitchProgram::from_json(&text).map_err(SimError::from)?;
            format!("program ok ({:?})", p.kind())
        }
    };
    writeln!(out, "{what}").map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_of_constant_sample_is_zero() {
        let (m, h) = mean_ci(&[2.0, 2.0, 2.0]);
        assert_eq!(m, 2.0);
        assert_eq!(h, 0.0);
        assert!(mean_ci(&[1.0]).1.is_nan());
    }

    #[test]
    fn ci_matches_t_table() {
        // n = 5, s = 1: t(0.975, 4) = 2.776445
        let xs = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let s = (2.5f64 / 4.0).sqrt();
        let (_, h) = mean_ci(&xs);
        assert!((h - 2.776445 * s / 5f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn grid_cardinality() {
        let sc = SweepConfig {
            tandems: vec![1, 2, 3],
            loads: vec![0, 20],
            reps: 5,
            ..Default::default()
        };
        assert_eq!(sc.points().len(), 60);
    }

    #[test]
    fn exit_codes() {
        let parse = CliError::Sim(SimError::ConfigParse {
            line: 1,
            column: 2,
            msg: String::new(),
        });
        assert_eq!(parse.exit_code(), 1);
        assert_eq!(CliError::Sim(SimError::Runtime("x".into())).exit_code(), 2);
    }
}
