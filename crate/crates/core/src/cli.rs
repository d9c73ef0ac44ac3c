//! The `stefan` command line: `run`, `spectrum`, `verify` and `sweep`.
//!
//! Exit status is 0 on success, 2 for configuration or usage errors (nothing
//! is written), 1 for solver failures and failed verification checks.

use std::fmt::{self, Write as _};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::energy::{decay_fit, trajectory_distance, DecayFit, EnergyReport, Snapshot, CSV_HEADER};
use crate::error::{Result, StefanError};
use crate::fields::InterfaceField;
use crate::io::{self, StagedDir};
use crate::oracle::linearized_spectrum;
use crate::scenario::{InterfaceInit, Scenario};
use crate::solver::{Observer, SolverConfig, State};
use crate::verify::{run_suite, Suite};

/// Overrides the default `output/` root for runs without `--out`.
pub const OUTPUT_ROOT_VAR: &str = "STEFAN_OUTPUT_ROOT";

/// Tolerance of the "steady within tolerance" verdict.
pub const STEADY_TOL: f64 = 1e-8;
/// Relative slack of the energy monotonicity verdict.
pub const MONOTONE_SLACK: f64 = 1e-6;
/// Dense oracle resolution used by run summaries.
pub const ORACLE_CELLS: usize = 256;

#[derive(Debug, Parser)]
#[command(name = "stefan", version, about = "Two-phase Stefan problem with surface tension near a flat interface")]
pub struct Cli {
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write energy history, final snapshot and summary.
    Run(RunArgs),
    /// Dense linearized spectrum for a range of wavenumbers.
    Spectrum(SpectrumArgs),
    /// Two-level refinement study: identity, mms, conservation or norms.
    Verify(VerifyArgs),
    /// Cartesian sweep over the scenario's [sweep] axes.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in scenario: flat, decay-k1 or generic.
    #[arg(long)]
    pub scenario: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: Source,
    /// Output directory; replaced only when the run succeeds.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed of a random initial interface.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint directory (such as `<out>/final`).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also write a checkpoint to `<out>.checkpoint` every N steps.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    #[arg(long, default_value_t = 0)]
    pub k_min: u32,
    #[arg(long, default_value_t = 8)]
    pub k_max: u32,
    /// Regularization strengths; repeat or separate with commas.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub epsilon: Vec<f64>,
    /// Cells per half of the dense discretization (at least 64).
    #[arg(long, default_value_t = ORACLE_CELLS)]
    pub cells: usize,
    /// Number of leading eigenvalues per row.
    #[arg(long, default_value_t = 4)]
    pub modes: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// identity, mms, conservation or norms.
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report to `<out>/verify-<suite>.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Steps between trajectory samples used for E-distances.
    #[arg(long, default_value_t = 10)]
    pub sample_every: usize,
}

/// A failure and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(StefanError),
    Runtime(StefanError),
    /// Verification ran but a check failed.
    Checks,
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) | Failure::Checks => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(e) => write!(f, "configuration error: {e}"),
            Failure::Runtime(e) => write!(f, "run failed: {e}"),
            Failure::Checks => f.write_str("verification checks failed"),
        }
    }
}

fn usage(e: StefanError) -> Failure {
    Failure::Usage(e)
}

fn runtime(e: StefanError) -> Failure {
    match e {
        StefanError::Config(_) | StefanError::Parse { .. } => Failure::Usage(e),
        e => Failure::Runtime(e),
    }
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            if !matches!(f, Failure::Checks) {
                eprintln!("stefan: {f}");
            }
            f.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    match &cli.command {
        Command::Run(a) => cmd_run(a, cli.quiet),
        Command::Spectrum(a) => cmd_spectrum(a, cli.quiet),
        Command::Verify(a) => cmd_verify(a, cli.quiet),
        Command::Sweep(a) => cmd_sweep(a, cli.quiet),
    }
}

fn load_source(source: &Source, seed: Option<u64>) -> Result<Scenario> {
    let sc = match (&source.config, &source.scenario) {
        (Some(path), _) => Scenario::load(path).map_err(|e| match e {
            StefanError::Io(io) => StefanError::Config(format!("cannot read {}: {io}", path.display())),
            e => e,
        })?,
        (None, Some(name)) => Scenario::builtin(name)?,
        (None, None) => return Err(StefanError::Config("no scenario given".into())),
    };
    Ok(match seed {
        Some(s) => sc.with_seed(s),
        None => sc,
    })
}

/// `--out`, else the scenario's `output`, else `$STEFAN_OUTPUT_ROOT/<name>`.
pub fn output_dir(out: Option<&Path>, scenario: Option<&Scenario>, default_name: &str) -> PathBuf {
    if let Some(p) = out {
        return p.to_path_buf();
    }
    if let Some(p) = scenario.and_then(|s| s.output.clone()) {
        return p;
    }
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("output"));
    root.join(scenario.map_or(default_name, |s| s.name.as_str()))
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn metadata(started: f64, wall: f64, extra: &[(&str, String)]) -> String {
    let mut s = String::new();
    writeln!(s, "version = {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(s, "started_unix = {started:.3}").unwrap();
    writeln!(s, "finished_unix = {:.3}", unix_now()).unwrap();
    writeln!(s, "wall_seconds = {wall:.3}").unwrap();
    let args: Vec<String> = std::env::args().collect();
    writeln!(s, "command = {}", args.join(" ")).unwrap();
    for (k, v) in extra {
        writeln!(s, "{k} = {v}").unwrap();
    }
    s
}

/// What a finished run reports about itself.
#[derive(Debug, Clone)]
pub struct Summary {
    pub scenario: String,
    pub config_hash: String,
    pub steps: usize,
    pub t_final: f64,
    pub max_inner_iters: usize,
    pub halved_steps: usize,
    pub max_cons_residual: f64,
    /// First report index whose energy exceeds its predecessor's.
    pub monotone_violation: Option<usize>,
    pub first_energy_t: Option<f64>,
    pub fit: DecayFit,
    /// `(k, K₂)` of the dense oracle for single-mode data.
    pub oracle: Option<(u32, f64)>,
    /// Max over states of `‖u‖∞ + ‖ρ − ρ₀‖∞`.
    pub steady_deviation: f64,
    pub mean_rho: f64,
    pub steady_mean: f64,
}

impl Summary {
    pub fn is_steady(&self) -> bool {
        self.steady_deviation <= STEADY_TOL
    }

    pub fn oracle_gap(&self) -> Option<f64> {
        let (_, k2) = self.oracle?;
        let rate = self.fit.rate()?;
        Some((rate - k2).abs() / k2)
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario = {}", self.scenario)?;
        writeln!(f, "config_hash = {}", self.config_hash)?;
        writeln!(f, "steps = {}", self.steps)?;
        writeln!(f, "t_final = {:.6}", self.t_final)?;
        writeln!(f, "max_inner_iters = {}", self.max_inner_iters)?;
        writeln!(f, "halved_steps = {}", self.halved_steps)?;
        writeln!(f, "max_cons_residual = {:.6e}", self.max_cons_residual)?;
        writeln!(f, "steady_deviation = {:.6e}", self.steady_deviation)?;
        writeln!(f, "mean_rho = {:.12e}", self.mean_rho)?;
        writeln!(f, "steady_mean = {:.12e}", self.steady_mean)?;
        match self.fit {
            DecayFit::Fitted { rate, r_squared, samples } => {
                writeln!(f, "decay_rate = {rate:.6e}")?;
                writeln!(f, "decay_r_squared = {r_squared:.6}")?;
                writeln!(f, "decay_samples = {samples}")?;
            }
            DecayFit::Degenerate => writeln!(f, "decay_rate = NA")?,
        }
        if let Some((k, k2)) = self.oracle {
            writeln!(f, "oracle_k = {k}")?;
            writeln!(f, "oracle_decay_rate = {k2:.6e}")?;
        }
        if self.is_steady() {
            writeln!(f, "verdict: steady within tolerance")?;
        }
        match (self.monotone_violation, self.first_energy_t) {
            (None, Some(_)) => writeln!(f, "verdict: energy monotone")?,
            (Some(i), _) => writeln!(f, "verdict: energy increased at report {i}")?,
            (None, None) => writeln!(f, "verdict: energy unavailable")?,
        }
        if let Some(gap) = self.oracle_gap() {
            let inside = if gap <= 0.10 { "within" } else { "outside" };
            writeln!(f, "verdict: decay rate {inside} 10% of oracle (relative gap {gap:.4})")?;
        }
        Ok(())
    }
}

/// Collects the extra run-time statistics the reports do not carry.
struct Tracker<'a> {
    rho0: InterfaceField,
    deviation: f64,
    sample_every: usize,
    samples: Vec<Snapshot>,
    count: usize,
    checkpoint: Option<(usize, PathBuf, &'a SolverConfig, crate::fields::Grid)>,
    error: Option<StefanError>,
}

impl Observer for Tracker<'_> {
    fn observe(&mut self, state: &State, _report: &EnergyReport) -> ControlFlow<()> {
        let dev = state.u.max_abs() + state.rho.sub(&self.rho0).max_abs();
        self.deviation = self.deviation.max(dev);
        if self.sample_every > 0 && self.count.is_multiple_of(self.sample_every) {
            self.samples.push(state.snapshot());
        }
        if let Some((every, dir, cfg, grid)) = &self.checkpoint {
            if self.count > 0 && self.count.is_multiple_of(*every) {
                if let Err(e) = io::write_checkpoint(dir, grid, state, cfg) {
                    self.error = Some(e);
                    return ControlFlow::Break(());
                }
            }
        }
        self.count += 1;
        ControlFlow::Continue(())
    }
}

/// Everything a single run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub cfg: SolverConfig,
    pub reports: Vec<EnergyReport>,
    pub final_state: State,
    pub summary: Summary,
    /// States every `sample_every` steps, starting with the initial one.
    pub samples: Vec<Snapshot>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: Option<PathBuf>,
    pub checkpoint: Option<(usize, PathBuf)>,
    pub sample_every: usize,
}

fn single_mode(sc: &Scenario) -> Option<u32> {
    match &sc.initial.interface {
        InterfaceInit::Modes { mean, modes } if *mean == 0.0 && modes.len() == 1 => Some(modes[0].k),
        _ => None,
    }
}

pub fn execute_run(sc: &Scenario, cfg: &SolverConfig, opts: &RunOptions) -> Result<RunArtifacts> {
    let (solver, fresh) = sc.prepare(cfg)?;
    let initial = match &opts.resume {
        Some(dir) => io::read_checkpoint(dir, cfg)?,
        None => fresh,
    };
    let rho0 = initial.rho.clone();
    let mut tracker = Tracker {
        rho0: rho0.clone(),
        deviation: 0.0,
        sample_every: opts.sample_every,
        samples: Vec::new(),
        count: 0,
        checkpoint: opts.checkpoint.clone().map(|(n, d)| (n.max(1), d, cfg, solver.grid().clone())),
        error: None,
    };
    let out = solver.run(initial, sc.t_end, &mut tracker)?;
    if let Some(e) = tracker.error.take() {
        return Err(e);
    }
    let reports = out.reports;
    let energies: Vec<(usize, f64)> =
        reports.iter().enumerate().filter_map(|(i, r)| r.energy_eps.map(|e| (i, e))).collect();
    let monotone_violation = energies
        .windows(2)
        .skip(1)
        .find(|w| w[1].1 > w[0].1 * (1.0 + MONOTONE_SLACK))
        .map(|w| w[1].0);
    let times: Vec<f64> = reports.iter().map(|r| r.t).collect();
    let values: Vec<f64> = reports
        .iter()
        .map(|r| r.energy_eps.map_or(f64::NAN, |e| e + r.rho_dev_l2 * r.rho_dev_l2))
        .collect();
    let oracle = match single_mode(sc) {
        Some(k) => Some((k, linearized_spectrum(k, ORACLE_CELLS, cfg.epsilon)?.energy_decay_rate())),
        None => None,
    };
    let summary = Summary {
        scenario: sc.name.clone(),
        config_hash: cfg.hash(),
        steps: out.steps.len(),
        t_final: out.final_state.t,
        max_inner_iters: out.steps.iter().map(|s| s.inner_iters).max().unwrap_or(0),
        halved_steps: out.steps.iter().filter(|s| s.halvings > 0).count(),
        max_cons_residual: reports.iter().filter_map(|r| r.cons_residual).fold(0.0, f64::max),
        monotone_violation,
        first_energy_t: energies.first().map(|&(i, _)| reports[i].t),
        fit: decay_fit(&times, &values),
        oracle,
        steady_deviation: tracker.deviation,
        mean_rho: out.final_state.rho.mean(),
        steady_mean: out.rho_bar,
    };
    Ok(RunArtifacts { cfg: cfg.clone(), reports, final_state: out.final_state, summary, samples: tracker.samples })
}

fn report_meta(sc: &Scenario, cfg: &SolverConfig) -> Vec<(&'static str, String)> {
    vec![
        ("scenario", sc.name.clone()),
        ("config_hash", cfg.hash()),
        ("epsilon", format!("{:e}", cfg.epsilon)),
        ("dt", format!("{:e}", cfg.dt)),
        ("n_x", cfg.n_x.to_string()),
        ("n_z", cfg.n_z.to_string()),
    ]
}

/// Writes `energy.csv`, `summary.txt`, `final/` and `scenario.toml` below `prefix`.
fn write_artifacts(staged: &StagedDir, prefix: &str, sc: &Scenario, art: &RunArtifacts) -> Result<()> {
    let grid = crate::fields::Grid::new(art.cfg.n_x, art.cfg.n_z)?;
    staged.write(&format!("{prefix}energy.csv"), &io::reports_csv(&art.reports, &report_meta(sc, &art.cfg)))?;
    staged.write(&format!("{prefix}summary.txt"), &art.summary.to_string())?;
    io::write_checkpoint(&staged.path().join(format!("{prefix}final")), &grid, &art.final_state, &art.cfg)?;
    let single = Scenario { solver: art.cfg.clone(), sweep: None, output: None, ..sc.clone() };
    let toml = toml::to_string(&single).map_err(|e| StefanError::Config(e.to_string()))?;
    staged.write(&format!("{prefix}scenario.toml"), &toml)?;
    Ok(())
}

fn cmd_run(a: &RunArgs, quiet: bool) -> std::result::Result<(), Failure> {
    let sc = load_source(&a.source, a.seed).map_err(usage)?;
    let cfg = sc.solver.clone();
    let dir = output_dir(a.out.as_deref(), Some(&sc), "run");
    let started = unix_now();
    let clock = Instant::now();
    let checkpoint = a.checkpoint_every.map(|n| {
        let mut p = dir.clone().into_os_string();
        p.push(".checkpoint");
        (n, PathBuf::from(p))
    });
    let opts = RunOptions { resume: a.resume.clone(), checkpoint, sample_every: 0 };
    let art = execute_run(&sc, &cfg, &opts).map_err(runtime)?;
    let staged = StagedDir::new(&dir).map_err(Failure::Runtime)?;
    write_artifacts(&staged, "", &sc, &art).map_err(Failure::Runtime)?;
    let extra = [
        ("config_hash", cfg.hash()),
        ("seed", a.seed.map_or("none".into(), |s| s.to_string())),
        ("resumed_from", a.resume.as_ref().map_or("none".into(), |p| p.display().to_string())),
    ];
    staged
        .write("metadata.txt", &metadata(started, clock.elapsed().as_secs_f64(), &extra))
        .map_err(Failure::Runtime)?;
    let dir = staged.commit().map_err(Failure::Runtime)?;
    if !quiet {
        print!("{}", art.summary);
        println!("output = {}", dir.display());
    }
    Ok(())
}

/// One CSV row per `(k, ε)` with the `modes` leading eigenvalues.
pub fn spectrum_csv(ks: &[u32], epsilons: &[f64], cells: usize, modes: usize) -> Result<String> {
    let pairs: Vec<(u32, f64)> = ks.iter().flat_map(|&k| epsilons.iter().map(move |&e| (k, e))).collect();
    let rows: Vec<Result<String>> = pairs
        .par_iter()
        .map(|&(k, eps)| {
            let m = linearized_spectrum(k, cells, eps)?;
            let mut row = format!("{k},{eps:e}");
            for l in m.eigenvalues.iter().take(modes) {
                write!(row, ",{:.17e},{:.17e}", l.re, l.im).unwrap();
            }
            Ok(row)
        })
        .collect();
    let mut s = String::from("k,epsilon");
    for i in 1..=modes {
        write!(s, ",re_{i},im_{i}").unwrap();
    }
    s.push('\n');
    for r in rows {
        s.push_str(&r?);
        s.push('\n');
    }
    Ok(s)
}

fn pool(jobs: Option<usize>) -> std::result::Result<rayon::ThreadPool, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(usage(StefanError::Config("--jobs must be at least 1".into())));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Failure::Runtime(StefanError::Config(e.to_string())))
}

fn cmd_spectrum(a: &SpectrumArgs, quiet: bool) -> std::result::Result<(), Failure> {
    if a.k_min > a.k_max {
        return Err(usage(StefanError::Config(format!("empty k range {}..={}", a.k_min, a.k_max))));
    }
    if a.epsilon.is_empty() || a.epsilon.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(usage(StefanError::Config("epsilon values must be finite and >= 0".into())));
    }
    if a.cells < 64 || a.modes == 0 {
        return Err(usage(StefanError::Config("need --cells >= 64 and --modes >= 1".into())));
    }
    let ks: Vec<u32> = (a.k_min..=a.k_max).collect();
    let started = unix_now();
    let clock = Instant::now();
    let csv = pool(a.jobs)?.install(|| spectrum_csv(&ks, &a.epsilon, a.cells, a.modes)).map_err(runtime)?;
    let dir = output_dir(a.out.as_deref(), None, "spectrum");
    let staged = StagedDir::new(&dir).map_err(Failure::Runtime)?;
    staged.write("spectrum.csv", &csv).map_err(Failure::Runtime)?;
    staged
        .write("metadata.txt", &metadata(started, clock.elapsed().as_secs_f64(), &[("cells", a.cells.to_string())]))
        .map_err(Failure::Runtime)?;
    staged.commit().map_err(Failure::Runtime)?;
    if !quiet {
        print!("{csv}");
    }
    Ok(())
}

fn cmd_verify(a: &VerifyArgs, quiet: bool) -> std::result::Result<(), Failure> {
    let suite: Suite = a.suite.parse().map_err(usage)?;
    let report = run_suite(suite, a.seed).map_err(runtime)?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(e.into()))?;
        std::fs::write(dir.join(format!("verify-{suite}.txt")), report.to_string())
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    if !quiet || !report.passed() {
        print!("{report}");
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

/// One row of the ε-convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonStep {
    pub dt: f64,
    pub n_x: usize,
    pub n_z: usize,
    pub from: f64,
    pub to: f64,
    pub distance: f64,
    pub relative: f64,
}

/// Distances between consecutive ε levels (largest first) among jobs that
/// share a grid and time step.
pub fn epsilon_table(jobs: &[RunArtifacts]) -> Result<Vec<EpsilonStep>> {
    let mut rows = Vec::new();
    let mut seen: Vec<(u64, usize, usize)> = Vec::new();
    for job in jobs {
        let key = (job.cfg.dt.to_bits(), job.cfg.n_x, job.cfg.n_z);
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let mut group: Vec<&RunArtifacts> = jobs
            .iter()
            .filter(|j| (j.cfg.dt.to_bits(), j.cfg.n_x, j.cfg.n_z) == key)
            .collect();
        group.sort_by(|a, b| b.cfg.epsilon.total_cmp(&a.cfg.epsilon));
        let grid = crate::fields::Grid::new(job.cfg.n_x, job.cfg.n_z)?;
        let cutoff = crate::hanzawa::Cutoff::new(job.cfg.alpha, job.cfg.cutoff)?;
        for w in group.windows(2) {
            let (distance, relative) = trajectory_distance(&w[0].samples, &w[1].samples, &cutoff, &grid)?;
            rows.push(EpsilonStep {
                dt: job.cfg.dt,
                n_x: job.cfg.n_x,
                n_z: job.cfg.n_z,
                from: w[0].cfg.epsilon,
                to: w[1].cfg.epsilon,
                distance,
                relative,
            });
        }
    }
    Ok(rows)
}

fn cmd_sweep(a: &SweepArgs, quiet: bool) -> std::result::Result<(), Failure> {
    let sc = load_source(&a.source, a.seed).map_err(usage)?;
    let configs = sc.sweep_configs();
    let dir = output_dir(a.out.as_deref(), Some(&sc), "sweep");
    let started = unix_now();
    let clock = Instant::now();
    let opts = RunOptions { sample_every: a.sample_every.max(1), ..RunOptions::default() };
    let results: Vec<Result<RunArtifacts>> =
        pool(a.jobs)?.install(|| configs.par_iter().map(|cfg| execute_run(&sc, cfg, &opts)).collect());
    let jobs: Vec<RunArtifacts> = results.into_iter().collect::<Result<_>>().map_err(runtime)?;
    let table = epsilon_table(&jobs).map_err(Failure::Runtime)?;

    let staged = StagedDir::new(&dir).map_err(Failure::Runtime)?;
    let mut combined = String::new();
    writeln!(combined, "# scenario = {}", sc.name).unwrap();
    writeln!(combined, "job,epsilon,dt,n_x,n_z,{CSV_HEADER}").unwrap();
    for (i, job) in jobs.iter().enumerate() {
        write_artifacts(&staged, &format!("job-{i:03}/"), &sc, job).map_err(Failure::Runtime)?;
        for r in &job.reports {
            writeln!(
                combined,
                "{i},{:e},{:e},{},{},{}",
                job.cfg.epsilon,
                job.cfg.dt,
                job.cfg.n_x,
                job.cfg.n_z,
                r.csv_row()
            )
            .unwrap();
        }
    }
    staged.write("combined.csv", &combined).map_err(Failure::Runtime)?;
    let mut eps = String::from("dt,n_x,n_z,epsilon_from,epsilon_to,e_distance,relative_e_distance\n");
    for r in &table {
        writeln!(eps, "{:e},{},{},{:e},{:e},{:.17e},{:.17e}", r.dt, r.n_x, r.n_z, r.from, r.to, r.distance, r.relative)
            .unwrap();
    }
    staged.write("epsilon_convergence.csv", &eps).map_err(Failure::Runtime)?;
    let extra = [("jobs", jobs.len().to_string()), ("sample_every", opts.sample_every.to_string())];
    staged
        .write("metadata.txt", &metadata(started, clock.elapsed().as_secs_f64(), &extra))
        .map_err(Failure::Runtime)?;
    let dir = staged.commit().map_err(Failure::Runtime)?;
    if !quiet {
        for (i, job) in jobs.iter().enumerate() {
            println!(
                "job {i:3}: eps = {:e}, dt = {:e}, n_x = {}, n_z = {}, max cons residual = {:.3e}",
                job.cfg.epsilon, job.cfg.dt, job.cfg.n_x, job.cfg.n_z, job.summary.max_cons_residual
            );
        }
        print!("{eps}");
        println!("output = {}", dir.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_verbs() {
        let c = Cli::try_parse_from(["stefan", "run", "--scenario", "flat", "--out", "x", "--seed", "3"]).unwrap();
        assert!(matches!(c.command, Command::Run(RunArgs { seed: Some(3), .. })));
        let c = Cli::try_parse_from(["stefan", "--quiet", "spectrum", "--epsilon", "0,1e-4"]).unwrap();
        match c.command {
            Command::Spectrum(s) => assert_eq!(s.epsilon, vec![0.0, 1e-4]),
            _ => panic!(),
        }
        assert!(Cli::try_parse_from(["stefan", "verify", "mms", "--seed", "2"]).is_ok());
        assert!(Cli::try_parse_from(["stefan", "sweep", "--config", "a.toml", "--jobs", "2"]).is_ok());
        assert!(Cli::try_parse_from(["stefan", "run"]).is_err());
        assert!(Cli::try_parse_from(["stefan", "run", "--config", "a", "--scenario", "flat"]).is_err());
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(runtime(StefanError::Config("x".into())).exit_code(), 2);
        assert_eq!(runtime(StefanError::Eigen("x".into())).exit_code(), 1);
        assert_eq!(Failure::Checks.exit_code(), 1);
    }

    #[test]
    fn explicit_output_wins() {
        let sc = Scenario::builtin("flat").unwrap();
        assert_eq!(output_dir(Some(Path::new("a/b")), Some(&sc), "run"), PathBuf::from("a/b"));
        let named = Scenario { output: Some("c".into()), ..sc.clone() };
        assert_eq!(output_dir(None, Some(&named), "run"), PathBuf::from("c"));
        assert!(output_dir(None, Some(&sc), "run").ends_with("flat"));
    }

    #[test]
    fn spectrum_rows_have_a_zero_mode_at_k0() {
        let csv = spectrum_csv(&[0, 1], &[0.0], 64, 2).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "k,epsilon,re_1,im_1,re_2,im_2");
        let re: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
        assert!(re.abs() < 1e-10);
        let re1: f64 = lines[2].split(',').nth(2).unwrap().parse().unwrap();
        assert!(re1 < 0.0);
    }
}
