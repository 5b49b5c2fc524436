use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use valley::gillespie::{self, Condition, PopulationState, RunConfig, StopRule, Watch};
use valley::harness::{
    self, ExperimentKind, ExperimentPlan, ExperimentReport, HorizonPolicy, Sweep, TropicalSweep,
};
use valley::model::{derive_landscape, Kernel, ModelParams, DEFAULT_DISTINCT_TOL};
use valley::ode;
use valley::oracle;
use valley::rng::Seed;
use valley::theory;
use valley::tropical::CascadeSpec;

const AFTER_HELP: &str = "Exit status: 0 success, 1 usage, 2 invalid model, 3 runtime failure. \
Failures print one JSON line {\"error\":{\"code\",\"kind\",\"message\"}} on stderr. \
Set VC_LOG=info|debug|trace for diagnostics. `valley man` prints the manual page.";

/// Fitness-valley crossing: stochastic simulation, deterministic limits and predictions.
#[derive(Debug, Parser)]
#[command(name = "valley", version, about, arg_required_else_help = true, after_help = AFTER_HELP)]
struct Cli {
    /// Master seed; fixes every stochastic output.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for ensembles.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Directory for output files; without it results go to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelArg {
    OneSided,
    TwoSided,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::OneSided => Kernel::OneSided,
            KernelArg::TwoSided => Kernel::TwoSided,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StopArg {
    /// Run to the horizon or extinction.
    Never,
    /// Stop when any watched level is hit.
    Any,
    /// Stop when every watched level is hit.
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the fitness-valley conditions of a model file.
    Validate { model: PathBuf },
    /// Run the stochastic individual-based model.
    Simulate(SimulateArgs),
    /// Integrate the deterministic large-population limit.
    Ode(OdeArgs),
    /// Limit paths of the log-rescaled dynamics and their distance to the ODE.
    Tropical(TropicalArgs),
    /// Classify the regime and print the closed-form predictions.
    Predict { model: PathBuf },
    /// Run experiment plans.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Brute-force Monte Carlo and exhaustive references.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Print the manual page (roff) to stdout.
    #[command(hide = true)]
    Man,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    model: PathBuf,
    #[arg(long)]
    horizon: f64,
    /// Watched level as `trait:level`, the level in units of K.
    #[arg(long, value_parser = parse_watch)]
    watch: Vec<Watch>,
    #[arg(long, value_enum, default_value_t = StopArg::Never)]
    stop: StopArg,
    /// Independent replicas; more than one prints per-replica records.
    #[arg(long, default_value_t = 1)]
    replicas: u64,
    /// Largest number of recorded trajectory points.
    #[arg(long, default_value_t = 2000)]
    max_points: usize,
}

#[derive(Debug, Args)]
struct OdeArgs {
    model: PathBuf,
    #[arg(long)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Output grid points, uniform on `[0, t_end]`.
    #[arg(long, default_value_t = 201)]
    points: usize,
    /// Initial densities, comma separated; defaults to the resident equilibrium.
    #[arg(long, value_delimiter = ',')]
    initial: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct TropicalArgs {
    model: PathBuf,
    /// Strictly decreasing mutation probabilities.
    #[arg(long, value_delimiter = ',', required = true)]
    mu_list: Vec<f64>,
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
}

#[derive(Debug, Subcommand)]
enum ExperimentCommand {
    /// Execute a plan file and write report.json, summary.csv and plotdata/.
    Run { plan: PathBuf },
}

#[derive(Debug, Subcommand)]
enum OracleCommand {
    /// Birth counts of simulated subcritical excursions, binned with the tail pooled.
    Excursion {
        #[arg(long)]
        b: f64,
        #[arg(long)]
        d: f64,
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        #[arg(long, default_value_t = 20)]
        max_bin: usize,
    },
    /// Frequency of reaching `k` before `i` from `j`.
    Ruin {
        #[arg(long)]
        b: f64,
        #[arg(long)]
        d: f64,
        #[arg(long)]
        i: u64,
        #[arg(long)]
        j: u64,
        #[arg(long)]
        k: u64,
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
    },
    /// Exhaustive minimization for the limiting exponents of a linear cascade.
    Tropical {
        spec: PathBuf,
        #[arg(long)]
        t: f64,
    },
}

fn parse_watch(s: &str) -> Result<Watch, String> {
    let (t, level) = s.split_once(':').ok_or("expected trait:level")?;
    let t = t.parse().map_err(|e| format!("trait: {e}"))?;
    let level = level.parse().map_err(|e| format!("level: {e}"))?;
    Ok(Watch::new(t, level))
}

/// Failure classes and their exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    InvalidModel(String),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::InvalidModel(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::InvalidModel(_) => "invalid_model",
            Failure::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::InvalidModel(m) => m.clone(),
            Failure::Runtime(e) => format!("{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = Result<(), Failure>;

fn load_model(path: &Path) -> Result<ModelParams, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Runtime)?;
    ModelParams::from_json(&text)
        .map_err(|e| Failure::InvalidModel(format!("{}: {e}", path.display())))
}

struct Output<'a> {
    cli: &'a Cli,
}

impl Output<'_> {
    /// Writes `name` under `--out`, or prints it.
    fn emit(&self, name: &str, contents: &str) -> anyhow::Result<()> {
        match &self.cli.out {
            Some(dir) => {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join(name);
                fs::write(&path, contents)
                    .with_context(|| format!("writing {}", path.display()))?;
                log::info!("wrote {}", path.display());
            }
            None => {
                print!("{contents}");
                if !contents.ends_with('\n') {
                    println!();
                }
            }
        }
        Ok(())
    }

    fn json(&self, name: &str, value: &Value) -> anyhow::Result<()> {
        self.emit(name, &serde_json::to_string_pretty(value)?)
    }
}

/// The resolved invocation, printed to stderr before any output.
fn announce(cli: &Cli, extra: Value) {
    let record = json!({
        "command": format!("{:?}", cli.command).split([' ', '(', '{']).next().unwrap_or_default().to_lowercase(),
        "seed": cli.seed,
        "threads": cli.threads,
        "out": cli.out,
        "format": format!("{:?}", cli.format).to_lowercase(),
        "version": valley::VERSION,
        "resolved": extra,
    });
    eprintln!("config: {record}");
}

fn validate(cli: &Cli, model: &Path) -> Outcome {
    let params = load_model(model)?;
    announce(
        cli,
        json!({ "model": model, "model_hash": params.model_hash() }),
    );
    let land = derive_landscape(&params)
        .map_err(|e| Failure::InvalidModel(e.to_string()))?
        .validated(DEFAULT_DISTINCT_TOL);
    let report = land.validity.clone().expect("validated");
    let out = Output { cli };
    match cli.format {
        Format::Json => out.json(
            "validity.json",
            &json!({ "model_hash": params.model_hash(), "report": report, "xbar": land.xbar }),
        )?,
        Format::Csv => {
            let mut csv = String::from("clause,passed,offenders\n");
            for c in &report.checks {
                let offenders: Vec<String> = c.offenders.iter().map(|i| i.to_string()).collect();
                csv.push_str(&format!(
                    "{:?},{},{}\n",
                    c.clause,
                    c.passed,
                    offenders.join(" ")
                ));
            }
            out.emit("validity.csv", &csv)?;
        }
    }
    if report.valid {
        Ok(())
    } else {
        let failed: Vec<String> = report.failed().map(|c| format!("{c:?}")).collect();
        Err(Failure::InvalidModel(format!(
            "clauses failed: {}",
            failed.join(", ")
        )))
    }
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Outcome {
    let params = load_model(&args.model)?;
    let mut config = RunConfig::new(args.horizon);
    config.max_points = args.max_points;
    for w in &args.watch {
        config = config.watch(*w);
    }
    let hits: Vec<Condition> = (0..args.watch.len()).map(Condition::Hit).collect();
    config = config.stop(match args.stop {
        StopArg::Never => StopRule::Horizon,
        StopArg::Any => StopRule::AnyOf(hits),
        StopArg::All => StopRule::AllOf(hits),
    });
    announce(
        cli,
        json!({ "model": args.model, "model_hash": params.model_hash(), "run": config, "replicas": args.replicas, "rng": valley::rng::RNG_ALGORITHM }),
    );
    let init = PopulationState::resident(&params);
    let out = Output { cli };
    if args.replicas > 1 {
        let ens = gillespie::run_ensemble(
            &params,
            &init,
            &config,
            args.replicas,
            cli.seed,
            cli.threads,
        )
        .context("ensemble")?;
        out.emit("ensemble.jsonl", &ens.to_jsonl())?;
        return Ok(());
    }
    let outcome = gillespie::run(&params, init, &config, &mut Seed::new(cli.seed).rng())
        .context("simulation")?;
    match cli.format {
        Format::Json => out.json(
            "simulation.json",
            &json!({
                "model_hash": params.model_hash(),
                "seed": cli.seed,
                "terminal": outcome.terminal,
                "stopping_times": outcome.stopping_times,
                "events": outcome.events,
                "final_state": outcome.final_state,
                "trajectory": outcome.trajectory,
            }),
        )?,
        Format::Csv => {
            out.emit(
                "trajectory.csv",
                &outcome.trajectory.to_csv(params.n_traits()),
            )?;
            if cli.out.is_some() {
                out.json(
                    "stopping_times.json",
                    &serde_json::to_value(&outcome.stopping_times).context("stopping times")?,
                )?;
            } else {
                eprintln!(
                    "stopping_times: {}",
                    serde_json::to_string(&outcome.stopping_times).context("stopping times")?
                );
            }
        }
    }
    Ok(())
}

fn run_ode(cli: &Cli, args: &OdeArgs) -> Outcome {
    let params = load_model(&args.model)?;
    let land = derive_landscape(&params).map_err(|e| Failure::InvalidModel(e.to_string()))?;
    let x0 = args.initial.clone().unwrap_or_else(|| {
        let mut x = vec![0.0; params.n_traits()];
        x[0] = land.xbar[0];
        x
    });
    if args.points < 2 {
        return Err(Failure::Usage("--points must be at least 2".into()));
    }
    announce(
        cli,
        json!({ "model": args.model, "model_hash": params.model_hash(), "t_end": args.t_end, "tol": args.tol, "points": args.points, "initial": x0 }),
    );
    let grid = ode::uniform_grid(args.t_end, args.points - 1);
    let sol = ode::integrate(&params, &x0, &grid, args.tol).context("integration")?;
    let out = Output { cli };
    match cli.format {
        Format::Csv => out.emit("ode.csv", &sol.to_csv())?,
        Format::Json => out.json(
            "ode.json",
            &json!({
                "model_hash": params.model_hash(),
                "times": sol.times,
                "states": sol.states,
                "accepted": sol.accepted,
                "rejected": sol.rejected,
                "clamped": sol.clamped,
            }),
        )?,
    }
    Ok(())
}

fn run_tropical(cli: &Cli, args: &TropicalArgs) -> Outcome {
    let params = load_model(&args.model)?;
    let plan = ExperimentPlan {
        kind: ExperimentKind::Tropical,
        model: params,
        sweep: Sweep::default(),
        replicas: 1,
        horizon: HorizonPolicy::default(),
        epsilons: vec![harness::DEFAULT_EPSILON],
        watches: Vec::new(),
        master_seed: cli.seed,
        threads: cli.threads,
        output_dir: cli.out.clone(),
        tropical: Some(TropicalSweep {
            mu: args.mu_list.clone(),
            t_end: args.t_end,
            step: args.step,
            kernel: args.kernel.map(Kernel::from),
        }),
    };
    plan.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    announce(cli, serde_json::to_value(&plan).context("plan")?);
    let report = harness::run_tropical_experiment(&plan).map_err(classify_harness)?;
    let report = ExperimentReport::Tropical(report);
    write_report(cli, &report)
}

fn write_report(cli: &Cli, report: &ExperimentReport) -> Outcome {
    match &cli.out {
        Some(dir) => {
            let files = harness::emit_report(report, dir).map_err(classify_harness)?;
            for f in files {
                log::info!("wrote {}", f.display());
            }
        }
        None => match cli.format {
            Format::Json => println!("{}", report.body_json()),
            Format::Csv => print!("{}", report.summary_csv()),
        },
    }
    Ok(())
}

fn classify_harness(e: harness::HarnessError) -> Failure {
    use harness::HarnessError as H;
    match e {
        H::Model(_) | H::Theory(valley::theory::TheoryError::InvalidLandscape(_)) => {
            Failure::InvalidModel(e.to_string())
        }
        H::Parse { .. } | H::Plan(_) | H::HorizonTooShort { .. } | H::NoHorizon { .. } => {
            Failure::Usage(e.to_string())
        }
        other => Failure::Runtime(other.into()),
    }
}

fn predict(cli: &Cli, model: &Path) -> Outcome {
    let params = load_model(model)?;
    announce(
        cli,
        json!({ "model": model, "model_hash": params.model_hash() }),
    );
    let pred = theory::classify_regime(&params).map_err(|e| match e {
        theory::TheoryError::InvalidLandscape(_) | theory::TheoryError::Model(_) => {
            Failure::InvalidModel(e.to_string())
        }
        other => Failure::Runtime(other.into()),
    })?;
    let out = Output { cli };
    match cli.format {
        Format::Json => out.json(
            "prediction.json",
            &serde_json::to_value(&pred).context("prediction")?,
        )?,
        Format::Csv => {
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
            let csv = format!(
                "regime,alpha,t_l_alpha,bottleneck,rate,mean_crossing_time\n{:?},{},{},{},{},{}\n",
                pred.regime,
                opt(pred.alpha),
                opt(pred.t_l_alpha),
                pred.bottleneck.map_or(String::new(), |b| b.to_string()),
                opt(pred.rate),
                opt(pred.mean_crossing_time),
            );
            out.emit("prediction.csv", &csv)?;
        }
    }
    Ok(())
}

fn experiment(cli: &Cli, cmd: &ExperimentCommand) -> Outcome {
    let ExperimentCommand::Run { plan } = cmd;
    let mut plan = ExperimentPlan::load(plan).map_err(classify_harness)?;
    plan.master_seed = cli.seed_override().unwrap_or(plan.master_seed);
    if cli.threads_given() {
        plan.threads = cli.threads;
    }
    announce(cli, serde_json::to_value(&plan).context("plan")?);
    let report = harness::run_plan(&plan).map_err(classify_harness)?;
    let out_dir = cli.out.clone().or_else(|| plan.output_dir.clone());
    match out_dir {
        Some(dir) => {
            let files = harness::emit_report(&report, &dir).map_err(classify_harness)?;
            for f in files {
                log::info!("wrote {}", f.display());
            }
            Ok(())
        }
        None => write_report(cli, &report),
    }
}

impl Cli {
    /// `--seed` given explicitly on the command line.
    fn seed_override(&self) -> Option<u64> {
        std::env::args()
            .any(|a| a == "--seed" || a.starts_with("--seed="))
            .then_some(self.seed)
    }

    fn threads_given(&self) -> bool {
        std::env::args().any(|a| a == "--threads" || a.starts_with("--threads="))
    }
}

fn run_oracle(cli: &Cli, cmd: &OracleCommand) -> Outcome {
    let out = Output { cli };
    match cmd {
        OracleCommand::Excursion { b, d, n, max_bin } => {
            announce(
                cli,
                json!({ "oracle": "excursion", "b": b, "d": d, "n": n, "max_bin": max_bin }),
            );
            let census = oracle::excursion_census(*b, *d, *n, *max_bin, cli.seed, cli.threads)
                .map_err(Failure::Usage)?;
            match cli.format {
                Format::Json => out.json(
                    "excursion.json",
                    &serde_json::to_value(&census).context("census")?,
                )?,
                Format::Csv => {
                    let mut csv = String::from("births,count\n");
                    for (k, c) in census.histogram.iter().enumerate() {
                        csv.push_str(&format!(
                            "{}{k},{c}\n",
                            if k == *max_bin { ">=" } else { "" }
                        ));
                    }
                    out.emit("excursion.csv", &csv)?;
                }
            }
        }
        OracleCommand::Ruin { b, d, i, j, k, n } => {
            announce(
                cli,
                json!({ "oracle": "ruin", "b": b, "d": d, "i": i, "j": j, "k": k, "n": n }),
            );
            let est = oracle::ruin_trials(*b, *d, (*i, *j, *k), *n, cli.seed, cli.threads)
                .map_err(Failure::Usage)?;
            match cli.format {
                Format::Json => out.json(
                    "ruin.json",
                    &serde_json::to_value(&est).context("estimate")?,
                )?,
                Format::Csv => out.emit(
                    "ruin.csv",
                    &format!(
                        "trials,hits,frequency,std_error\n{},{},{},{}\n",
                        est.trials, est.hits, est.frequency, est.std_error
                    ),
                )?,
            }
        }
        OracleCommand::Tropical { spec, t } => {
            let text = fs::read_to_string(spec)
                .with_context(|| format!("reading {}", spec.display()))
                .map_err(Failure::Runtime)?;
            let parsed: CascadeSpec = serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", spec.display())))?;
            parsed
                .validate()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            announce(cli, json!({ "oracle": "tropical", "spec": parsed, "t": t }));
            let exps = oracle::exhaustive_exponent(&parsed, *t);
            let finite: Vec<Value> = exps
                .iter()
                .map(|v| if v.is_finite() { json!(v) } else { Value::Null })
                .collect();
            match cli.format {
                Format::Json => {
                    out.json("exponents.json", &json!({ "t": t, "exponents": finite }))?
                }
                Format::Csv => {
                    let mut csv = String::from("trait,exponent\n");
                    for (i, v) in exps.iter().enumerate() {
                        csv.push_str(&format!("{i},{v}\n"));
                    }
                    out.emit("exponents.csv", &csv)?;
                }
            }
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Outcome {
    if cli.threads == 0 {
        return Err(Failure::Usage("--threads must be positive".into()));
    }
    match &cli.command {
        Command::Validate { model } => validate(cli, model),
        Command::Simulate(args) => simulate(cli, args),
        Command::Ode(args) => run_ode(cli, args),
        Command::Tropical(args) => run_tropical(cli, args),
        Command::Predict { model } => predict(cli, model),
        Command::Experiment(cmd) => experiment(cli, cmd),
        Command::Oracle(cmd) => run_oracle(cli, cmd),
        Command::Man => {
            let mut page = Vec::new();
            clap_mangen::Man::new(<Cli as clap::CommandFactory>::command())
                .render(&mut page)
                .context("rendering manual page")?;
            print!("{}", String::from_utf8_lossy(&page));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let record =
                json!({ "error": { "code": f.code(), "kind": f.kind(), "message": f.message() } });
            eprintln!("{record}");
            ExitCode::from(f.code())
        }
    }
}
