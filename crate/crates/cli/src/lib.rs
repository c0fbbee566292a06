//! Command-line front end: load trace generation, calibration, grid
//! simulation, trace comparison and the experiment drivers.
//!
//! Exit status is 0 on success, 1 for invalid input (including unknown flags)
//! and 2 for numerical failures, including a collapsed grid simulation, which
//! still writes its partial results.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lelsim::calibration::{
    random_inits, robustness, simulate_subsystem, tcl_sweep, Bounds, CalibrationConfig,
    ObjectiveMode, Problem, Subsystem,
};
use lelsim::grid::{
    penetration_sweep, resolve_case, run_simulation_partial, sweep::random_fault_bus,
    EventSchedule, FaultScenario, SimConfig,
};
use lelsim::io::{
    load_scenario, read_trace, trace_to_string, write_rows, write_sim_result, MetricRow,
};
use lelsim::lel::{archetype_defaults, from_exchange_str};
use lelsim::metrics::metric_report;
use lelsim::tcl::TclConfig;
use lelsim::thermal_aux::{simulate_aux, simulate_cooling};
use lelsim::workload::simulate_workload;
use lelsim::{Archetype, LelParams, Trace};

#[derive(Debug, Parser)]
#[command(
    name = "lelsim",
    version,
    about = "Large electronic load modeling, calibration and grid simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate workload, cooling or auxiliary load traces.
    SimulateLoad(SimulateLoad),
    /// Calibrate one parameter set against a data trace.
    Calibrate(Calibrate),
    /// Run a transient grid simulation.
    GridSim(GridSim),
    /// Compare two traces channel by channel (DTW, cross-correlation, cosine).
    Metrics(Metrics),
    /// Median post-fault metrics against the number of LELs.
    SweepK(SweepK),
    /// Calibration quality over a grid of window lengths and embedding sizes.
    SweepTcl(SweepTcl),
    /// Spread of calibrated pattern vectors over many initial guesses.
    Robustness(Robustness),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LoadBlock {
    Workload,
    Cooling,
    Aux,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SubsystemArg {
    Workload,
    Cooling,
    Aux,
}

impl From<SubsystemArg> for Subsystem {
    fn from(s: SubsystemArg) -> Self {
        match s {
            SubsystemArg::Workload => Subsystem::Workload,
            SubsystemArg::Cooling => Subsystem::Cooling,
            SubsystemArg::Aux => Subsystem::Aux,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Pattern,
    Mse,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ArchetypeArg {
    Datacenter,
    CryptoMining,
    Electrolyzer,
}

impl From<ArchetypeArg> for Archetype {
    fn from(a: ArchetypeArg) -> Self {
        match a {
            ArchetypeArg::Datacenter => Archetype::Datacenter,
            ArchetypeArg::CryptoMining => Archetype::CryptoMining,
            ArchetypeArg::Electrolyzer => Archetype::Electrolyzer,
        }
    }
}

/// Parameter source shared by the load and calibration commands.
#[derive(Debug, Args)]
struct ParamSource {
    /// Archetype whose default parameters are used.
    #[arg(long, value_enum, default_value = "datacenter")]
    archetype: ArchetypeArg,
    /// Parameter-exchange file; overrides --archetype.
    #[arg(long)]
    params: Option<PathBuf>,
}

impl ParamSource {
    fn load(&self) -> Result<LelParams> {
        match &self.params {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                Ok(from_exchange_str(&text)?)
            }
            None => Ok(archetype_defaults(self.archetype.into())),
        }
    }
}

/// Encoder settings.
#[derive(Debug, Args)]
struct TclArgs {
    /// Window length L.
    #[arg(long = "window", default_value_t = 5)]
    window_len: usize,
    /// Embedding dimension d.
    #[arg(long = "dim", default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    temperature: f64,
}

impl TclArgs {
    fn config(&self) -> TclConfig {
        TclConfig {
            window_len: self.window_len,
            dim: self.dim,
            hidden: self.hidden,
            epochs: self.epochs,
            temperature: self.temperature,
            ..TclConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct SimulateLoad {
    #[arg(long, value_enum, default_value = "workload")]
    block: LoadBlock,
    #[command(flatten)]
    source: ParamSource,
    #[arg(long, default_value_t = 3600.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace with a `v` channel driving the cooling and auxiliary blocks
    /// (flat 1 pu when omitted).
    #[arg(long)]
    voltage: Option<PathBuf>,
    /// Output CSV (stdout when omitted).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Calibrate {
    /// Data trace carrying the subsystem's channel (p_work, p_cool or p_aux).
    data: PathBuf,
    #[arg(long, value_enum, default_value = "workload")]
    subsystem: SubsystemArg,
    /// Base parameters; also the initial guess unless --init is given.
    #[command(flatten)]
    source: ParamSource,
    /// Parameter-exchange file holding the initial guess.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pattern")]
    mode: ModeArg,
    /// Relative half-width of the search box around the base parameters.
    #[arg(long, default_value_t = 0.5)]
    bound_frac: f64,
    #[arg(long, default_value_t = 300)]
    max_evals: usize,
    /// Seed of the simulation noise, encoder and optimizer (individually
    /// overridable).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    sim_seed: Option<u64>,
    #[arg(long)]
    encoder_seed: Option<u64>,
    #[arg(long)]
    optimizer_seed: Option<u64>,
    #[command(flatten)]
    tcl: TclArgs,
    /// Directory for `calibrated.toml` and `objective.csv`.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct GridSim {
    /// Scenario file (.toml), bundled case name (ieee39, toy9, toy2) or case file.
    target: String,
    /// Run without any grid event (case targets only).
    #[arg(long)]
    no_events: bool,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Place this many LELs on the case (case targets only).
    #[arg(long)]
    k: Option<usize>,
    /// Faulted bus; chosen from the seed when omitted (case targets only).
    #[arg(long)]
    fault_bus: Option<usize>,
    #[arg(long, default_value_t = 5.0)]
    t_fault: f64,
    #[arg(long, default_value_t = 0.1)]
    fault_duration: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// File stem: writes `<stem>.csv` and `<stem>_events.csv`.
    #[arg(long, default_value = "sim")]
    stem: String,
}

#[derive(Debug, Args)]
struct Metrics {
    a: PathBuf,
    b: PathBuf,
    /// Channels to compare (default: every channel present in both).
    #[arg(long, value_delimiter = ',')]
    channels: Vec<String>,
    /// Accepted for interface uniformity; the metrics are deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepK {
    #[arg(long, default_value = "ieee39")]
    case: String,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 5, 10])]
    k: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// First trial seed; trials use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.005)]
    dt: f64,
    #[arg(long, default_value_t = 20.0)]
    horizon: f64,
    #[arg(long, default_value_t = 5.0)]
    t_fault: f64,
    #[arg(long, default_value_t = 0.1)]
    fault_duration: f64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

/// Data and calibration settings shared by the experiment drivers.
#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Workload data trace (p_work); a synthetic trace from the base
    /// parameters and --seed is used when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    source: ParamSource,
    #[arg(long, default_value_t = 7200.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    #[arg(long, default_value_t = 0.5)]
    bound_frac: f64,
    #[arg(long, default_value_t = 300)]
    max_evals: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ExperimentArgs {
    /// Data trace, config and the seed of a held-out realization.
    fn setup(&self, tcl: TclConfig) -> Result<(Trace, CalibrationConfig, LelParams)> {
        let base = self.source.load()?;
        let data = match &self.data {
            Some(path) => read_trace(path, &["p_work"])?,
            None => simulate_workload(&base.work, self.horizon, self.dt, self.seed)?,
        };
        let horizon = data.len() as f64 * data.sample_period;
        let mut cfg =
            CalibrationConfig::new(Subsystem::Workload, base, horizon, data.sample_period)?;
        cfg.bounds = Bounds::around(
            Subsystem::Workload,
            &Subsystem::Workload.theta(&base),
            self.bound_frac,
        )?;
        cfg.max_evals = self.max_evals;
        cfg.sim_seed = self.seed.wrapping_add(1);
        cfg.encoder_seed = self.seed;
        cfg.optimizer_seed = self.seed;
        cfg.tcl = tcl;
        Ok((data, cfg, base))
    }
}

#[derive(Debug, Args)]
struct SweepTcl {
    #[command(flatten)]
    common: ExperimentArgs,
    #[arg(long = "L", value_delimiter = ',', default_values_t = [3usize, 5, 10])]
    window_lens: Vec<usize>,
    #[arg(long = "d", value_delimiter = ',', default_values_t = [16usize, 64, 256])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Robustness {
    #[command(flatten)]
    common: ExperimentArgs,
    /// Number of random initial guesses.
    #[arg(long, default_value_t = 20)]
    inits: usize,
    #[command(flatten)]
    tcl: TclArgs,
    /// Per-run CSV (stdout when omitted); the summary goes to stderr.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Numerical(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit status. Command output that is not written to a file goes to
/// `stdout`; diagnostics go to standard error.
pub fn run<I, S>(argv: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Usage(_) => 1,
                Failure::Numerical(_) => 2,
            };
        }
        if let Some(err) = cause.downcast_ref::<lelsim::Error>() {
            return if err.is_numerical() { 2 } else { 1 };
        }
    }
    1
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::SimulateLoad(a) => simulate_load(a, stdout),
        Command::Calibrate(a) => calibrate(a, stdout),
        Command::GridSim(a) => grid_sim(a, stdout),
        Command::Metrics(a) => metrics(a, stdout),
        Command::SweepK(a) => sweep_k(a, stdout),
        Command::SweepTcl(a) => sweep_tcl(a, stdout),
        Command::Robustness(a) => robustness_cmd(a, stdout),
    }
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => stdout
            .write_all(text.as_bytes())
            .context("writing to stdout"),
    }
}

fn rows_to_string<S: serde::Serialize>(rows: &[S]) -> Result<String> {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows)?;
    Ok(String::from_utf8(buf)?)
}

fn simulate_load(a: SimulateLoad, stdout: &mut dyn Write) -> Result<()> {
    let params = a.source.load()?;
    let mut trace = simulate_workload(&params.work, a.horizon, a.dt, a.seed)?;
    let n = trace.len();
    let voltage = match &a.voltage {
        Some(path) => {
            let v = read_trace(path, &["v"])?;
            if (v.sample_period - a.dt).abs() > 1e-9 * a.dt || v.len() < n {
                return Err(anyhow::Error::new(Failure::Usage(format!(
                    "voltage trace must have dt = {} and at least {n} samples",
                    a.dt
                ))));
            }
            v.require("v")?[..n].to_vec()
        }
        None => vec![1.0; n],
    };
    let mut out = Trace::new(a.dt)?;
    out.metadata = trace.metadata.clone();
    out.metadata
        .insert("archetype".into(), params.archetype.to_string());
    let (work, cool, aux) = match a.block {
        LoadBlock::Workload => (true, false, false),
        LoadBlock::Cooling => (false, true, false),
        LoadBlock::Aux => (false, false, true),
        LoadBlock::All => (true, true, true),
    };
    if cool || aux {
        out.push_channel("v", voltage.clone())?;
    }
    if work {
        let eta = trace.require("eta")?.to_vec();
        let p = std::mem::take(&mut trace.channels[0].values);
        out.push_channel("p_work", p)?;
        out.push_channel("eta", eta)?;
    }
    if cool {
        let run = simulate_cooling(&voltage, a.dt, &params.cool)?;
        out.push_channel("p_cool", run.p)?;
        out.push_channel("q_cool", run.q)?;
    }
    if aux {
        let (p, q) = simulate_aux(&voltage, &params.aux)?;
        out.push_channel("p_aux", p)?;
        out.push_channel("q_aux", q)?;
    }
    emit(a.out.as_deref(), &trace_to_string(&out), stdout)
}

fn calibrate(a: Calibrate, stdout: &mut dyn Write) -> Result<()> {
    let subsystem: Subsystem = a.subsystem.into();
    let base = a.source.load()?;
    let data = read_trace(&a.data, &[subsystem.channel()])?;
    let horizon = data.len() as f64 * data.sample_period;
    let mut cfg = CalibrationConfig::new(subsystem, base, horizon, data.sample_period)?;
    cfg.bounds = Bounds::around(subsystem, &subsystem.theta(&base), a.bound_frac)?;
    cfg.max_evals = a.max_evals;
    cfg.mode = match a.mode {
        ModeArg::Pattern => ObjectiveMode::Pattern,
        ModeArg::Mse => ObjectiveMode::Mse,
    };
    cfg.sim_seed = a.sim_seed.unwrap_or(a.seed);
    cfg.encoder_seed = a.encoder_seed.unwrap_or(a.seed);
    cfg.optimizer_seed = a.optimizer_seed.unwrap_or(a.seed);
    cfg.tcl = a.tcl.config();
    let init = match &a.init {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            subsystem.theta(&from_exchange_str(&text)?)
        }
        None => subsystem.theta(&base),
    };
    if !cfg.bounds.contains(&init) {
        return Err(anyhow::Error::new(Failure::Usage(
            "initial guess lies outside the search box".into(),
        )));
    }
    let result = Problem::new(&data, &cfg)?.calibrate(&init)?;
    fs::create_dir_all(&a.out_dir)?;
    fs::write(
        a.out_dir.join("calibrated.toml"),
        result.to_exchange_string()?,
    )?;
    fs::write(a.out_dir.join("objective.csv"), result.objective_csv())?;
    let mut summary = String::from("parameter,initial,calibrated\n");
    for ((name, x0), x) in subsystem
        .parameter_names()
        .iter()
        .zip(&init)
        .zip(&result.theta_star)
    {
        summary.push_str(&format!("{name},{x0},{x}\n"));
    }
    summary.push_str(&format!(
        "# pattern_distance={} -> {}\n# evaluations={} budget_exhausted={}\n",
        result.initial_pattern_distance,
        result.final_pattern_distance,
        result.evaluations,
        result.budget_exhausted
    ));
    emit(None, &summary, stdout)
}

fn grid_sim(a: GridSim, stdout: &mut dyn Write) -> Result<()> {
    let is_scenario = Path::new(&a.target)
        .extension()
        .is_some_and(|e| e == "toml");
    let (case, events, mut cfg) = if is_scenario {
        if a.k.is_some() || a.fault_bus.is_some() || a.no_events {
            return Err(anyhow::Error::new(Failure::Usage(
                "--k, --fault-bus and --no-events apply to case targets, not scenario files".into(),
            )));
        }
        let s = load_scenario(Path::new(&a.target))?;
        (s.case, s.events, s.cfg)
    } else {
        let mut case = resolve_case(&a.target)?;
        let seed = a.seed.unwrap_or(0);
        if let Some(k) = a.k {
            case = lelsim::grid::place_lels(&case, k, seed, &Archetype::ALL)?;
        }
        let events = if a.no_events {
            EventSchedule::default()
        } else {
            let bus = match a.fault_bus {
                Some(b) => b,
                None => random_fault_bus(&case, seed)?,
            };
            EventSchedule::fault(bus, a.t_fault, a.fault_duration)
        };
        (case, events, SimConfig::default())
    };
    if let Some(dt) = a.dt {
        cfg.dt = dt;
    }
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    events.validate(cfg.horizon)?;
    let result = run_simulation_partial(&case, &events, &cfg)?;
    let (series, log) = write_sim_result(&a.out_dir, &a.stem, &result)?;
    writeln!(stdout, "wrote {} and {}", series.display(), log.display())?;
    if let Some(c) = &result.collapse {
        return Err(anyhow::Error::new(Failure::Numerical(format!(
            "simulation collapsed ({}); partial results written",
            c.to_error()
        ))));
    }
    Ok(())
}

fn metrics(a: Metrics, stdout: &mut dyn Write) -> Result<()> {
    let ta = read_trace(&a.a, &[])?;
    let tb = read_trace(&a.b, &[])?;
    let names: Vec<String> = if a.channels.is_empty() {
        ta.channel_names()
            .filter(|n| tb.channel(n).is_some())
            .map(str::to_string)
            .collect()
    } else {
        a.channels.clone()
    };
    if names.is_empty() {
        return Err(anyhow::Error::new(Failure::Usage(
            "the traces share no channel".into(),
        )));
    }
    let rows = names
        .iter()
        .map(|n| {
            Ok(MetricRow::new(
                n,
                metric_report(ta.require(n)?, tb.require(n)?)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    emit(a.out.as_deref(), &rows_to_string(&rows)?, stdout)
}

fn sweep_k(a: SweepK, stdout: &mut dyn Write) -> Result<()> {
    let case = resolve_case(&a.case)?;
    let scenario = FaultScenario {
        t_fault: a.t_fault,
        duration: a.fault_duration,
        ..FaultScenario::default()
    };
    let cfg = SimConfig {
        dt: a.dt,
        horizon: a.horizon,
        ..SimConfig::default()
    };
    cfg.validate()?;
    let rows = penetration_sweep(&case, &a.k, a.trials, a.seed, &scenario, &cfg)?;
    emit(a.out.as_deref(), &rows_to_string(&rows)?, stdout)
}

fn sweep_tcl(a: SweepTcl, stdout: &mut dyn Write) -> Result<()> {
    let tcl = TclConfig {
        hidden: a.hidden,
        epochs: a.epochs,
        ..TclConfig::default()
    };
    let (data, cfg, base) = a.common.setup(tcl)?;
    let heldout_seed = a.common.seed.wrapping_add(2);
    let truth = Subsystem::Workload.theta(&base);
    let heldout = simulate_subsystem(&truth, &cfg, heldout_seed)?;
    let init = random_inits(Subsystem::Workload, &cfg.bounds, 1, a.common.seed)?.remove(0);
    let rows = tcl_sweep(
        &data,
        &init,
        &cfg,
        &a.window_lens,
        &a.dims,
        &heldout,
        heldout_seed.wrapping_add(1),
    )?;
    emit(a.out.as_deref(), &rows_to_string(&rows)?, stdout)
}

#[derive(serde::Serialize)]
struct RobustnessRow {
    run: usize,
    initial_pattern_distance: f64,
    final_pattern_distance: f64,
    evaluations: usize,
}

fn robustness_cmd(a: Robustness, stdout: &mut dyn Write) -> Result<()> {
    let (data, cfg, _) = a.common.setup(a.tcl.config())?;
    let problem = Problem::new(&data, &cfg)?;
    let inits = random_inits(Subsystem::Workload, &cfg.bounds, a.inits, a.common.seed)?;
    let report = robustness(&problem, &inits)?;
    let rows: Vec<RobustnessRow> = report
        .results
        .iter()
        .enumerate()
        .map(|(run, r)| RobustnessRow {
            run,
            initial_pattern_distance: r.initial_pattern_distance,
            final_pattern_distance: r.final_pattern_distance,
            evaluations: r.evaluations,
        })
        .collect();
    let mut text = rows_to_string(&rows)?;
    text.push_str(&format!(
        "# uncalibrated_spread={}\n# calibrated_spread={}\n",
        report.uncalibrated_spread, report.calibrated_spread
    ));
    emit(a.out.as_deref(), &text, stdout)?;
    eprintln!(
        "pattern-vector spread: uncalibrated {:.6e}, calibrated {:.6e}",
        report.uncalibrated_spread, report.calibrated_spread
    );
    Ok(())
}
