use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use twrelay::experiment::{self, ExperimentSpec};
use twrelay::markov::{analyze_fading, analyze_static, AnalysisOptions, QueueAnalysis, Truncation};
use twrelay::sim::{run_eersp, FallbackGain, SimConfig, SimReport, TRACE_EVERY};
use twrelay::{ArrivalRates, Policy, Scenario, Scheme, Solved};

#[derive(Parser)]
#[command(name = "twrelay", version, about = "Energy-minimal scheduling for network-coded two-way relaying")]
struct Cli {
    /// Write results into this directory instead of printing them.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal time fractions, rates and powers for fixed link gains.
    SolveStatic(SolveArgs),
    /// Water-filling allocation for fading links.
    SolveErgodic(SolveArgs),
    /// Stationary queue lengths and actual energy of a solved allocation.
    QueueAnalysis(QueueArgs),
    /// Slot-level simulation of the scheduling protocol.
    Simulate(SimArgs),
    /// Parameter sweep from a preset or a spec file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's back-off.
    #[arg(long)]
    eps: Option<f64>,
    /// Solve with the broadcast mode disabled.
    #[arg(long)]
    conventional: bool,
}

#[derive(Args)]
struct QueueArgs {
    /// Allocation JSON written by solve-static or solve-ergodic.
    #[arg(long)]
    allocation: PathBuf,
    /// Re-solve at this back-off before analysing.
    #[arg(long)]
    eps: Option<f64>,
    /// Initial truncation of both queues.
    #[arg(long, default_value_t = 64)]
    trunc: usize,
    /// Keep the truncation fixed instead of growing it.
    #[arg(long)]
    fixed_trunc: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fallback {
    Receiver,
    Broadcast,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    allocation: Option<PathBuf>,
    /// Solve this scenario first (static channel: static solve, otherwise ergodic).
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = twrelay::sim::DEFAULT_SLOTS)]
    slots: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "receiver")]
    fallback: Fallback,
    /// Abort when a queue exceeds this many packets.
    #[arg(long, default_value_t = twrelay::sim::DEFAULT_GUARD)]
    guard: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    preset: Option<String>,
    /// Spec or manifest JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long)]
    trunc: Option<usize>,
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn print_json(value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a closed reader (`| head`) is not an error
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn out_dir(out: &Option<PathBuf>) -> anyhow::Result<Option<&Path>> {
    match out {
        Some(d) => {
            std::fs::create_dir_all(d).with_context(|| format!("cannot create {}", d.display()))?;
            Ok(Some(d.as_path()))
        }
        None => Ok(None),
    }
}

/// Writes `value` to `<out>/<name>` or prints it.
fn emit(out: &Option<PathBuf>, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
    match out_dir(out)? {
        Some(d) => {
            let p = d.join(name);
            write_json(&p, value)?;
            print_json(&serde_json::json!({ "written": [p] }))
        }
        None => print_json(value),
    }
}

fn load_scenario(path: &Path, eps: Option<f64>, conventional: bool) -> anyhow::Result<Scenario> {
    let mut s = Scenario::load(path)?;
    if let Some(e) = eps {
        s.rates = ArrivalRates::new(s.rates.lambda1, s.rates.lambda2, e)?;
    }
    if conventional {
        s.scheme = Scheme::Conventional;
    }
    Ok(s)
}

fn load_allocation(path: &Path, eps: Option<f64>) -> anyhow::Result<Solved> {
    let solved = Solved::load(path)?;
    Ok(match eps {
        Some(e) if e != solved.rates.epsilon => solved.with_epsilon(e)?,
        _ => solved,
    })
}

#[derive(Serialize)]
struct QueueReport<'a> {
    policy: &'static str,
    rates: ArrivalRates,
    design_energy: f64,
    #[serde(flatten)]
    analysis: &'a QueueAnalysis,
    warnings: Vec<String>,
}

fn queue_analysis(args: &QueueArgs, out: &Option<PathBuf>) -> anyhow::Result<()> {
    let solved = load_allocation(&args.allocation, args.eps)?;
    let opts = AnalysisOptions {
        truncation: Truncation::square(args.trunc),
        auto_truncate: !args.fixed_trunc,
        slot_duration: solved.slot_duration,
        ..Default::default()
    };
    let (kind, analysis) = match &solved.policy {
        Policy::Static { solution } => ("static", analyze_static(solution, &solved.rates, &opts)?),
        Policy::Fading { solution, .. } => ("fading", analyze_fading(solution, &solved.rates, &opts)?),
    };
    for w in analysis.warnings() {
        eprintln!("warning: {w}");
    }
    let report = QueueReport {
        policy: kind,
        rates: solved.rates,
        design_energy: solved.policy.design_energy(),
        analysis: &analysis,
        warnings: analysis.warnings(),
    };
    let Some(dir) = out_dir(out)? else {
        return print_json(&report);
    };
    let json = dir.join("queue_analysis.json");
    write_json(&json, &report)?;
    let csv_path = dir.join("queue_analysis.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record([
        "pair",
        "source_max",
        "relay_max",
        "mean_source",
        "mean_relay",
        "boundary_mass",
        "residual",
    ])?;
    for (name, m) in [("Q1,Qr2", &analysis.first), ("Q2,Qr1", &analysis.second)] {
        w.write_record([
            name.to_string(),
            m.truncation.source_max.to_string(),
            m.truncation.relay_max.to_string(),
            m.mean_source.to_string(),
            m.mean_relay.to_string(),
            m.boundary_mass.to_string(),
            m.residual.to_string(),
        ])?;
    }
    w.flush()?;
    print_json(&serde_json::json!({ "written": [json, csv_path] }))
}

fn simulate(args: &SimArgs, out: &Option<PathBuf>) -> anyhow::Result<()> {
    let solved = match (&args.allocation, &args.scenario) {
        (Some(a), _) => load_allocation(a, args.eps)?,
        (None, Some(s)) => load_scenario(s, args.eps, false)?.solve()?,
        (None, None) => bail!("one of --allocation or --scenario is required"),
    };
    let actual = ArrivalRates::new(solved.rates.lambda1, solved.rates.lambda2, 0.0)?;
    let mut config = SimConfig::new(solved.policy, actual);
    config.slots = args.slots;
    config.seed = args.seed;
    config.guard = args.guard;
    config.slot_duration = solved.slot_duration;
    config.fallback = match args.fallback {
        Fallback::Receiver => FallbackGain::Receiver,
        Fallback::Broadcast => FallbackGain::Broadcast,
    };
    let Some(dir) = out_dir(out)? else {
        return print_json(&run_eersp(&config)?);
    };
    config.trace_every = TRACE_EVERY;
    let mut report: SimReport = run_eersp(&config)?;
    let trace = std::mem::take(&mut report.trace);
    let json = dir.join("sim_report.json");
    write_json(&json, &report)?;
    let csv_path = dir.join("sim_trace.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["slot", "q1", "q2", "qr1", "qr2", "energy_per_slot"])?;
    for row in &trace {
        let [a, b, c, d] = row.queues;
        w.write_record([
            row.slot.to_string(),
            a.to_string(),
            b.to_string(),
            c.to_string(),
            d.to_string(),
            row.energy_per_slot.to_string(),
        ])?;
    }
    w.flush()?;
    print_json(&serde_json::json!({ "written": [json, csv_path] }))
}

fn run_experiment(args: &ExperimentArgs, out: &Option<PathBuf>) -> anyhow::Result<()> {
    let mut spec: ExperimentSpec = match (&args.preset, &args.spec) {
        (Some(p), _) => experiment::preset(p)?,
        (None, Some(path)) => experiment::load_spec(path)?,
        (None, None) => bail!("one of --preset or --spec is required"),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.slots {
        spec.slots = n;
    }
    if let Some(t) = args.trunc {
        spec.truncation = t;
    }
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("results"));
    let (rows, csv_path, manifest) = experiment::run_to_dir(&spec, &dir)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    print_json(&serde_json::json!({
        "written": [csv_path, manifest],
        "rows": rows.len(),
        "failed_rows": failed,
    }))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::SolveStatic(a) => {
            let solved = load_scenario(&a.scenario, a.eps, a.conventional)?.solve_static()?;
            emit(&cli.out, "allocation.json", &solved)
        }
        Command::SolveErgodic(a) => {
            let solved = load_scenario(&a.scenario, a.eps, a.conventional)?.solve_ergodic()?;
            emit(&cli.out, "allocation.json", &solved)
        }
        Command::QueueAnalysis(a) => queue_analysis(a, &cli.out),
        Command::Simulate(a) => simulate(a, &cli.out),
        Command::Experiment(a) => run_experiment(a, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<twrelay::Error>().map_or("io", |e| e.kind());
            let body = serde_json::json!({ "error": { "kind": kind, "message": format!("{e:#}") } });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
