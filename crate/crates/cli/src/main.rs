//! Command-line front end: load system documents or built-in scenarios, run
//! classical and extended simulations, compose interconnections, and run the
//! stability checkers. Outputs are deterministic for fixed flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use zenosim_core::extend::{simulate_extended, ExtendConfig};
use zenosim_core::interconnect::{
    interconnect, load_output_map, load_subsystem, OutputMap, OutputMapSpec, SubsystemSpec,
};
use zenosim_core::sample::GridSpec;
use zenosim_core::sim::{simulate, SimConfig, SimError, Termination};
use zenosim_core::stability::{
    check_attractivity, check_attractivity_extended, check_lyapunov, check_ugs_envelope,
    sequential_narrowing, AttractivityOutcome, ClosedSetSpec, ComparisonFn, ComparisonKind,
    ExtendedAttractivityOutcome, LyapunovCertificate, NarrowingOptions, NarrowingVerdict,
    DEFAULT_EPS_SLACK,
};
use zenosim_core::system::{builtin_scenario, load_system, ScenarioParams, SystemSpec};
use zenosim_core::trajectory::{
    classical_doc, classical_records, extended_doc, extended_records, write_csv,
};
use zenosim_core::SystemData;

// exit codes shared by the subcommands
const EXIT_OK: u8 = 0;
const EXIT_SPEC: u8 = 1;
const EXIT_BAD_X0: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_BRANCH_BUDGET: u8 = 4;
const EXIT_CHECK_FAILED: u8 = 5;

#[derive(Parser)]
#[command(name = "zenosim", version, about = "Hybrid system simulation with Zeno continuation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one classical (fixed Zeno index) simulation
    Simulate(SimulateArgs),
    /// Run an extended simulation that continues past accumulation times
    SimulateExtended(SimulateExtendedArgs),
    /// Stability checks (certificates, narrowing, attractivity, bounds)
    Check(CheckArgs),
    /// Compose two subsystem documents into one system document
    Interconnect(InterconnectArgs),
    /// Built-in scenario utilities
    Scenario(ScenarioArgs),
}

#[derive(Args, Clone)]
struct SystemSel {
    /// Path to a system document (JSON)
    #[arg(long, conflicts_with = "scenario")]
    system: Option<PathBuf>,
    /// Name of a built-in scenario
    #[arg(long)]
    scenario: Option<String>,
    /// Restitution coefficient for built-in scenarios
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Gravitational acceleration for built-in scenarios
    #[arg(long, default_value_t = 9.81)]
    gravity: f64,
}

#[derive(Args, Clone)]
struct SimFlags {
    /// Ordinary-time horizon in seconds
    #[arg(long, default_value_t = 10.0)]
    horizon: f64,
    /// Integration step in seconds
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 10_000)]
    max_jumps: u32,
    /// Trailing inter-jump gaps inspected by the accumulation detector
    #[arg(long, default_value_t = 8)]
    zeno_window: usize,
}

impl SimFlags {
    fn config(&self) -> SimConfig {
        SimConfig {
            step: self.step,
            horizon: self.horizon,
            max_jumps: self.max_jumps,
            zeno_window: self.zeno_window,
            ..SimConfig::default()
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    sel: SystemSel,
    /// Initial state as comma-separated values
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    #[command(flatten)]
    sim: SimFlags,
    /// Trajectory output path
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output sample spacing in seconds (defaults to the integration step)
    #[arg(long)]
    sample_dt: Option<f64>,
}

#[derive(Args)]
struct SimulateExtendedArgs {
    #[command(flatten)]
    base: SimulateArgs,
    /// Largest Zeno index to simulate
    #[arg(long, default_value_t = 3)]
    max_zeno: u32,
    /// Total branch budget
    #[arg(long, default_value_t = 16)]
    branch_budget: usize,
}

#[derive(Args)]
struct CheckArgs {
    #[command(subcommand)]
    kind: CheckKind,
}

#[derive(Subcommand)]
enum CheckKind {
    /// Verify a certificate document against a system on a sampled grid
    Lyapunov(LyapunovArgs),
    /// Run the sequential narrowing harness over a chain document
    Narrowing(NarrowingArgs),
    /// Attractivity sweep from sampled initial states
    Attractivity(AttractivityArgs),
    /// Uniform-bound envelope over a radii grid
    Ugs(UgsArgs),
}

#[derive(Args)]
struct LyapunovArgs {
    #[command(flatten)]
    sel: SystemSel,
    /// Certificate document (JSON)
    #[arg(long)]
    cert: PathBuf,
    /// Report output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Deterministic offset into the sample sequence
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct NarrowingArgs {
    #[command(flatten)]
    sel: SystemSel,
    /// Chain document (JSON)
    #[arg(long)]
    chain: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Deterministic offset into the sample sequence
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    sim: SimFlags,
}

#[derive(Args)]
struct AttractivityArgs {
    #[command(flatten)]
    sel: SystemSel,
    /// Set document (JSON with `set_membership` and `set_distance`)
    #[arg(long)]
    cert: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    radius: f64,
    /// Initial states (repeatable), comma-separated values each
    #[arg(long = "x0", allow_hyphen_values = true)]
    x0: Vec<String>,
    /// Sweep extended solutions instead of classical runs
    #[arg(long)]
    extended: bool,
    #[arg(long, default_value_t = 3)]
    max_zeno: u32,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    sim: SimFlags,
}

#[derive(Args)]
struct UgsArgs {
    #[command(flatten)]
    sel: SystemSel,
    /// Set document (JSON with `set_membership` and `set_distance`)
    #[arg(long)]
    cert: PathBuf,
    /// Radii grid, comma-separated and increasing
    #[arg(long)]
    radii: String,
    /// Unit-distance directions (repeatable), comma-separated values each;
    /// defaults to the positive and negative coordinate axes
    #[arg(long = "dir", allow_hyphen_values = true)]
    dirs: Vec<String>,
    #[arg(long)]
    extended: bool,
    #[arg(long, default_value_t = 3)]
    max_zeno: u32,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    sim: SimFlags,
}

#[derive(Args)]
struct InterconnectArgs {
    /// First subsystem document
    #[arg(long)]
    sub1: PathBuf,
    /// Second subsystem document
    #[arg(long)]
    sub2: PathBuf,
    /// Output map from subsystem 1's state to subsystem 2's inputs
    #[arg(long)]
    h1: Option<PathBuf>,
    /// Output map from subsystem 2's state to subsystem 1's inputs
    #[arg(long)]
    h2: Option<PathBuf>,
    /// Composed system document output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    #[command(subcommand)]
    action: ScenarioAction,
}

#[derive(Subcommand)]
enum ScenarioAction {
    /// List the built-in scenarios
    List,
}

// ---------------------------------------------------------------------------
// Check documents
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PinSpec {
    /// 1-based state axis
    axis: usize,
    value: f64,
}

/// Certificate/set document: the certificate fields are optional so the same
/// format serves the set-only sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CertFile {
    #[serde(rename = "V", default)]
    v: Option<String>,
    #[serde(default)]
    alpha1: Option<String>,
    #[serde(default)]
    alpha2: Option<String>,
    #[serde(default)]
    rho: Option<String>,
    set_membership: String,
    set_distance: String,
    #[serde(default)]
    set_project: Option<Vec<String>>,
    #[serde(default)]
    box_lo: Option<Vec<f64>>,
    #[serde(default)]
    box_hi: Option<Vec<f64>>,
    #[serde(default)]
    grid_points: Option<usize>,
    #[serde(default)]
    pins: Option<Vec<PinSpec>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChainStageFile {
    #[serde(rename = "V")]
    v: String,
    alpha1: String,
    alpha2: String,
    rho: String,
    set_membership: String,
    set_distance: String,
    #[serde(default)]
    set_project: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChainFile {
    box_lo: Vec<f64>,
    box_hi: Vec<f64>,
    #[serde(default)]
    grid_points: Option<usize>,
    #[serde(default)]
    pins: Option<Vec<PinSpec>>,
    stages: Vec<ChainStageFile>,
}

impl CertFile {
    fn set(&self) -> Result<ClosedSetSpec, String> {
        ClosedSetSpec::from_strings(
            &self.set_membership,
            &self.set_distance,
            self.set_project.as_deref(),
        )
        .map_err(|e| e.to_string())
    }

    fn certificate(&self) -> Result<LyapunovCertificate, String> {
        let field = |name: &str, value: &Option<String>| {
            value
                .clone()
                .ok_or_else(|| format!("certificate document is missing `{name}`"))
        };
        Ok(LyapunovCertificate {
            v: zenosim_core::parse_expr(&field("V", &self.v)?).map_err(|e| e.to_string())?,
            alpha1: ComparisonFn::from_string(
                &field("alpha1", &self.alpha1)?,
                ComparisonKind::ClassKInfinity,
            )
            .map_err(|e| e.to_string())?,
            alpha2: ComparisonFn::from_string(
                &field("alpha2", &self.alpha2)?,
                ComparisonKind::ClassKInfinity,
            )
            .map_err(|e| e.to_string())?,
            rho: ComparisonFn::from_string(
                &field("rho", &self.rho)?,
                ComparisonKind::PositiveDefinite,
            )
            .map_err(|e| e.to_string())?,
        })
    }

    fn grid(&self, dim: usize) -> Result<GridSpec, String> {
        let lo = self
            .box_lo
            .clone()
            .ok_or_else(|| "certificate document is missing `box_lo`".to_string())?;
        let hi = self
            .box_hi
            .clone()
            .ok_or_else(|| "certificate document is missing `box_hi`".to_string())?;
        if lo.len() != dim || hi.len() != dim {
            return Err(format!("box bounds must have dim = {dim} entries"));
        }
        let mut grid = GridSpec::new(lo, hi, self.grid_points.unwrap_or(10_000));
        for pin in self.pins.clone().unwrap_or_default() {
            if pin.axis == 0 || pin.axis > dim {
                return Err(format!("pin axis {} out of range", pin.axis));
            }
            grid = grid.with_pin(pin.axis - 1, pin.value);
        }
        Ok(grid)
    }
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

fn fail(code: u8, message: impl AsRef<str>) -> ExitCode {
    eprintln!("error: {}", message.as_ref());
    ExitCode::from(code)
}

fn parse_x0(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("invalid number `{}` in state vector", p.trim()))
        })
        .collect()
}

fn load_selected_system(sel: &SystemSel) -> Result<SystemData, String> {
    match (&sel.system, &sel.scenario) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let spec: SystemSpec =
                serde_json::from_str(&text).map_err(|e| format!("invalid system document: {e}"))?;
            load_system(&spec).map_err(|e| e.to_string())
        }
        (None, Some(name)) => builtin_scenario(
            name,
            &ScenarioParams {
                lambda: sel.lambda,
                gravity: sel.gravity,
            },
        )
        .map_err(|e| e.to_string()),
        _ => Err("exactly one of --system or --scenario is required".into()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("invalid {what}: {e}"))
}

fn write_report<T: Serialize>(out: &Option<PathBuf>, report: &T) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|e| e.to_string()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn termination_summary(t: &Termination, jumps: usize) -> String {
    match t {
        Termination::Horizon => format!("horizon ({jumps} jumps)"),
        Termination::Zeno(cert) => format!(
            "zeno tau_hat={} ratio={} ({jumps} jumps)",
            cert.tau_hat, cert.ratio
        ),
        Termination::MaxJumps => format!("max_jumps ({jumps} jumps)"),
        Termination::Deadlock { state } => format!("deadlock at {state:?}"),
        Termination::EvalFailure { message } => format!("evaluation failure: {message}"),
    }
}

fn write_trajectory(args: &SimulateArgs, doc_json: String, csv: Vec<u8>) -> Result<(), String> {
    if let Some(path) = &args.out {
        let bytes = match args.format {
            Format::Csv => csv,
            Format::Json => doc_json.into_bytes(),
        };
        fs::write(path, bytes).map_err(|e| e.to_string())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_simulate(args: &SimulateArgs) -> ExitCode {
    let sys = match load_selected_system(&args.sel) {
        Ok(sys) => sys,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let x0 = match parse_x0(&args.x0) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_BAD_X0, e),
    };
    let cfg = args.sim.config();
    let run = match simulate(&sys, &x0, &cfg) {
        Ok(run) => run,
        Err(e @ (SimError::InvalidInitialCondition(_) | SimError::DimensionMismatch { .. })) => {
            return fail(EXIT_BAD_X0, e.to_string())
        }
        Err(e) => return fail(EXIT_RUNTIME, e.to_string()),
    };
    let sample_dt = args.sample_dt.unwrap_or(cfg.step);
    let records = classical_records(&run, sample_dt);
    let mut csv = Vec::new();
    if write_csv(&mut csv, sys.dim, &records).is_err() {
        return fail(EXIT_RUNTIME, "failed to encode trajectory");
    }
    let doc = classical_doc(&sys.name, sys.dim, &x0, &run, sample_dt);
    let mut doc_json = serde_json::to_string_pretty(&doc).unwrap();
    doc_json.push('\n');
    if let Err(e) = write_trajectory(args, doc_json, csv) {
        return fail(EXIT_RUNTIME, e);
    }
    println!(
        "termination: {}",
        termination_summary(&run.termination, run.jumps.len())
    );
    match run.termination {
        Termination::EvalFailure { .. } => ExitCode::from(EXIT_RUNTIME),
        _ => ExitCode::from(EXIT_OK),
    }
}

fn cmd_simulate_extended(args: &SimulateExtendedArgs) -> ExitCode {
    let sys = match load_selected_system(&args.base.sel) {
        Ok(sys) => sys,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let x0 = match parse_x0(&args.base.x0) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_BAD_X0, e),
    };
    let cfg = args.base.sim.config();
    let ext = ExtendConfig {
        max_zeno: args.max_zeno,
        branch_budget: args.branch_budget,
        ..ExtendConfig::default()
    };
    let sol = match simulate_extended(&sys, &x0, &cfg, &ext) {
        Ok(sol) => sol,
        Err(e @ (SimError::InvalidInitialCondition(_) | SimError::DimensionMismatch { .. })) => {
            return fail(EXIT_BAD_X0, e.to_string())
        }
        Err(e) => return fail(EXIT_RUNTIME, e.to_string()),
    };
    let sample_dt = args.base.sample_dt.unwrap_or(cfg.step);
    let records = extended_records(&sol, sample_dt);
    let mut csv = Vec::new();
    if write_csv(&mut csv, sys.dim, &records).is_err() {
        return fail(EXIT_RUNTIME, "failed to encode trajectory");
    }
    let doc = extended_doc(&sys.name, sys.dim, &x0, &sol, sample_dt);
    let mut doc_json = serde_json::to_string_pretty(&doc).unwrap();
    doc_json.push('\n');
    if let Err(e) = write_trajectory(&args.base, doc_json, csv) {
        return fail(EXIT_RUNTIME, e);
    }
    for branch in &sol.branches {
        println!(
            "branch {} (k={}): {}",
            branch.id,
            branch.k,
            termination_summary(&branch.run.termination, branch.run.jumps.len())
        );
    }
    let events = sol.zeno_events();
    if events.is_empty() {
        println!("zeno events: none");
    } else {
        let listing: Vec<String> = events
            .iter()
            .map(|(k, tau)| format!("k={k} tau_hat={tau}"))
            .collect();
        println!("zeno events: {}", listing.join("; "));
    }
    if sol.budget_exceeded {
        return fail(EXIT_BRANCH_BUDGET, "branch budget exceeded; tree is partial");
    }
    ExitCode::from(EXIT_OK)
}

fn cmd_check_lyapunov(args: &LyapunovArgs) -> ExitCode {
    let sys = match load_selected_system(&args.sel) {
        Ok(sys) => sys,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let file: CertFile = match read_json(&args.cert, "certificate document") {
        Ok(f) => f,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let (set, cert, grid) = match (file.set(), file.certificate(), file.grid(sys.dim)) {
        (Ok(s), Ok(c), Ok(g)) => (s, c, g),
        (s, c, g) => {
            let e = s.err().or(c.err()).or(g.err()).unwrap();
            return fail(EXIT_SPEC, e);
        }
    };
    let report = match check_lyapunov(&sys, &cert, &set, &grid, DEFAULT_EPS_SLACK, args.seed) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_SPEC, e.to_string()),
    };
    if let Err(e) = write_report(&args.out, &report) {
        return fail(EXIT_RUNTIME, e);
    }
    if report.pass {
        println!("lyapunov: pass");
        ExitCode::from(EXIT_OK)
    } else {
        println!("lyapunov: fail ({} counterexamples)", report.counterexamples.len());
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}

fn cmd_check_narrowing(args: &NarrowingArgs) -> ExitCode {
    let sys = match load_selected_system(&args.sel) {
        Ok(sys) => sys,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let file: ChainFile = match read_json(&args.chain, "chain document") {
        Ok(f) => f,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    if file.box_lo.len() != sys.dim || file.box_hi.len() != sys.dim {
        return fail(EXIT_SPEC, format!("box bounds must have dim = {}", sys.dim));
    }
    let mut grid = GridSpec::new(file.box_lo.clone(), file.box_hi.clone(), file.grid_points.unwrap_or(10_000));
    for pin in file.pins.clone().unwrap_or_default() {
        if pin.axis == 0 || pin.axis > sys.dim {
            return fail(EXIT_SPEC, format!("pin axis {} out of range", pin.axis));
        }
        grid = grid.with_pin(pin.axis - 1, pin.value);
    }
    let mut chain = Vec::new();
    for stage in &file.stages {
        let set = match ClosedSetSpec::from_strings(
            &stage.set_membership,
            &stage.set_distance,
            stage.set_project.as_deref(),
        ) {
            Ok(s) => s,
            Err(e) => return fail(EXIT_SPEC, e.to_string()),
        };
        let cert_file = CertFile {
            v: Some(stage.v.clone()),
            alpha1: Some(stage.alpha1.clone()),
            alpha2: Some(stage.alpha2.clone()),
            rho: Some(stage.rho.clone()),
            set_membership: stage.set_membership.clone(),
            set_distance: stage.set_distance.clone(),
            set_project: None,
            box_lo: None,
            box_hi: None,
            grid_points: None,
            pins: None,
        };
        let cert = match cert_file.certificate() {
            Ok(c) => c,
            Err(e) => return fail(EXIT_SPEC, e),
        };
        chain.push((set, cert));
    }
    let report = match sequential_narrowing(
        &sys,
        &chain,
        &grid,
        &args.sim.config(),
        &NarrowingOptions {
            seed: args.seed,
            ..NarrowingOptions::default()
        },
    ) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_SPEC, e.to_string()),
    };
    if let Err(e) = write_report(&args.out, &report) {
        return fail(EXIT_RUNTIME, e);
    }
    match &report.verdict {
        NarrowingVerdict::Ugpasoz => {
            println!("narrowing: UGpASoZ-consistent");
            ExitCode::from(EXIT_OK)
        }
        NarrowingVerdict::UgsozGpaoz => {
            println!("narrowing: UGSoZ+GpAoZ-consistent");
            ExitCode::from(EXIT_OK)
        }
        NarrowingVerdict::Fail { stage, detail } => {
            println!("narrowing: fail at stage {stage}: {detail}");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
    }
}

fn cmd_check_attractivity(args: &AttractivityArgs) -> ExitCode {
    let sys = match load_selected_system(&args.sel) {
        Ok(sys) => sys,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let file: CertFile = match read_json(&args.cert, "set document") {
        Ok(f) => f,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let set = match file.set() {
        Ok(s) => s,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let mut samples = Vec::new();
    for text in &args.x0 {
        match parse_x0(text) {
            Ok(v) => samples.push(v),
            Err(e) => return fail(EXIT_BAD_X0, e),
        }
    }
    if samples.is_empty() {
        return fail(EXIT_BAD_X0, "at least one --x0 sample is required");
    }
    let cfg = args.sim.config();
    if args.extended {
        let ext = ExtendConfig {
            max_zeno: args.max_zeno,
            ..ExtendConfig::default()
        };
        let report = match check_attractivity_extended(
            &sys, &set, args.eps, args.radius, &samples, &cfg, &ext,
        ) {
            Ok(r) => r,
            Err(e) => return fail(EXIT_SPEC, e.to_string()),
        };
        if let Err(e) = write_report(&args.out, &report) {
            return fail(EXIT_RUNTIME, e);
        }
        match &report.outcome {
            ExtendedAttractivityOutcome::Satisfied {
                k_uniform,
                t_uniform,
            } => {
                println!("attractivity: satisfied with K={k_uniform} T={t_uniform}");
                ExitCode::from(EXIT_OK)
            }
            ExtendedAttractivityOutcome::Failed { witness } => {
                println!(
                    "attractivity: fail, witness from {:?} at distance {}",
                    witness.x0, witness.distance
                );
                ExitCode::from(EXIT_CHECK_FAILED)
            }
            ExtendedAttractivityOutcome::BudgetExceeded { detail } => {
                println!("attractivity: undecided ({detail})");
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    } else {
        let report =
            match check_attractivity(&sys, &set, args.eps, args.radius, &samples, &cfg) {
                Ok(r) => r,
                Err(e) => return fail(EXIT_SPEC, e.to_string()),
            };
        if let Err(e) = write_report(&args.out, &report) {
            return fail(EXIT_RUNTIME, e);
        }
        match &report.outcome {
            AttractivityOutcome::Satisfied { t_uniform } => {
                println!("attractivity: satisfied with T={t_uniform}");
                ExitCode::from(EXIT_OK)
            }
            AttractivityOutcome::Failed { witness } => {
                println!(
                    "attractivity: fail, witness from {:?} at distance {}",
                    witness.x0, witness.distance
                );
                ExitCode::from(EXIT_CHECK_FAILED)
            }
            AttractivityOutcome::BudgetExceeded { witness } => {
                println!(
                    "attractivity: undecided, run from {:?} still at distance {}",
                    witness.x0, witness.distance
                );
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

fn cmd_check_ugs(args: &UgsArgs) -> ExitCode {
    let sys = match load_selected_system(&args.sel) {
        Ok(sys) => sys,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let file: CertFile = match read_json(&args.cert, "set document") {
        Ok(f) => f,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let set = match file.set() {
        Ok(s) => s,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let radii = match parse_x0(&args.radii) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let mut dirs = Vec::new();
    for text in &args.dirs {
        match parse_x0(text) {
            Ok(v) => dirs.push(v),
            Err(e) => return fail(EXIT_SPEC, e),
        }
    }
    if dirs.is_empty() {
        for axis in 0..sys.dim {
            for sign in [1.0, -1.0] {
                let mut d = vec![0.0; sys.dim];
                d[axis] = sign;
                dirs.push(d);
            }
        }
    }
    let cfg = args.sim.config();
    let ext = ExtendConfig {
        max_zeno: args.max_zeno,
        ..ExtendConfig::default()
    };
    let report = match check_ugs_envelope(
        &sys,
        &set,
        &radii,
        &dirs,
        &cfg,
        args.extended.then_some(&ext),
        0.75,
    ) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_SPEC, e.to_string()),
    };
    if let Err(e) = write_report(&args.out, &report) {
        return fail(EXIT_RUNTIME, e);
    }
    if report.pass {
        println!("ugs envelope: pass (fitted c = {})", report.fitted_c);
        ExitCode::from(EXIT_OK)
    } else {
        println!("ugs envelope: fail");
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}

fn cmd_interconnect(args: &InterconnectArgs) -> ExitCode {
    let sub1: SubsystemSpec = match read_json(&args.sub1, "subsystem document") {
        Ok(s) => s,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let sub2: SubsystemSpec = match read_json(&args.sub2, "subsystem document") {
        Ok(s) => s,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let sub1 = match load_subsystem(&sub1) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_SPEC, e.to_string()),
    };
    let sub2 = match load_subsystem(&sub2) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_SPEC, e.to_string()),
    };
    let load_map = |path: &Option<PathBuf>, owner_dim: usize| -> Result<OutputMap, String> {
        match path {
            None => Ok(OutputMap::default()),
            Some(p) => {
                let spec: OutputMapSpec = read_json(p, "output map document")?;
                load_output_map(&spec, owner_dim).map_err(|e| e.to_string())
            }
        }
    };
    let h1 = match load_map(&args.h1, sub1.dim) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let h2 = match load_map(&args.h2, sub2.dim) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_SPEC, e),
    };
    let composed = match interconnect(&sub1, &sub2, &h1, &h2) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_SPEC, e.to_string()),
    };
    let spec = composed.to_spec();
    let mut text = serde_json::to_string_pretty(&spec).unwrap();
    text.push('\n');
    if let Err(e) = fs::write(&args.out, text) {
        return fail(EXIT_RUNTIME, e.to_string());
    }
    println!(
        "wrote {} (dim {} system `{}`)",
        args.out.display(),
        spec.dim,
        spec.name
    );
    ExitCode::from(EXIT_OK)
}

fn cmd_scenario(args: &ScenarioArgs) -> ExitCode {
    match args.action {
        ScenarioAction::List => {
            for name in zenosim_core::system::SCENARIO_NAMES {
                let sys = builtin_scenario(name, &ScenarioParams::default()).unwrap();
                println!("{name} (dim {})", sys.dim);
            }
            ExitCode::from(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::SimulateExtended(args) => cmd_simulate_extended(args),
        Command::Check(check) => match &check.kind {
            CheckKind::Lyapunov(args) => cmd_check_lyapunov(args),
            CheckKind::Narrowing(args) => cmd_check_narrowing(args),
            CheckKind::Attractivity(args) => cmd_check_attractivity(args),
            CheckKind::Ugs(args) => cmd_check_ugs(args),
        },
        Command::Interconnect(args) => cmd_interconnect(args),
        Command::Scenario(args) => cmd_scenario(args),
    }
}
