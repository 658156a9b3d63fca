//! `iloco` command-line front end: analyze a CSV, simulate data, run
//! benchmark protocols, and check the population oracles.
//!
//! Exit codes: 0 success, 2 data or configuration error, 3 runtime or
//! estimator error.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use iloco::anova::oracle_check;
use iloco::bench::{self, ExperimentSpec, Method, Protocol};
use iloco::inference::ci_normal;
use iloco::minipatch::{train_ensemble, MinipatchConfig};
use iloco::occlusion::{iloco_samples, FeatureSet, InteractionScoreSamples};
use iloco::simgen::{generate, Correlation, ScenarioKind, ScenarioSpec};
use iloco::split::fit_split;
use iloco::tabular::{load_csv, split};
use iloco::{Dataset, Error, InteractionResult, LearnerSpec, RngStream, Task};

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `println!` that ignores a closed stdout (for example when piped to `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser, Debug)]
#[command(
    name = "iloco",
    version,
    about = "Feature-interaction importance with confidence intervals"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "ILOCO_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Interaction scores and intervals for a CSV dataset.
    Analyze(AnalyzeArgs),
    /// Write a simulated dataset (CSV plus a JSON sidecar).
    Simulate(SimulateArgs),
    /// Run a benchmark protocol and write JSON, CSV and SVG reports.
    Bench(BenchArgs),
    /// Compare Monte Carlo population scores with exact references.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Mp,
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LearnerArg {
    Cart,
    Ridge,
    KernelRidge,
    Knn,
}

impl LearnerArg {
    fn spec(self) -> LearnerSpec {
        match self {
            LearnerArg::Cart => LearnerSpec::cart(),
            LearnerArg::Ridge => LearnerSpec::ridge(),
            LearnerArg::KernelRidge => LearnerSpec::kernel_ridge(),
            LearnerArg::Knn => LearnerSpec::knn(),
        }
    }
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse()
}

fn parse_set(s: &str) -> Result<FeatureSet, String> {
    let idx: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let set = FeatureSet::new(idx.iter().copied());
    if set.len() != idx.len() {
        return Err(format!("`{s}` repeats a feature"));
    }
    Ok(set)
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    /// reg | clf
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, value_enum)]
    learner: Option<LearnerArg>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of minipatches.
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    n_frac: Option<f64>,
    #[arg(long)]
    m_frac: Option<f64>,
    /// Training fraction for data splitting.
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pair to score, 0-based, e.g. `1,2`; repeatable.
    #[arg(long = "pairs", value_parser = parse_set)]
    pairs: Vec<FeatureSet>,
    /// Interaction order scored when no sets are listed.
    #[arg(long)]
    order: Option<usize>,
    /// Feature set of any order, e.g. `1,2,3`; repeatable.
    #[arg(long = "set", value_parser = parse_set)]
    sets: Vec<FeatureSet>,
    /// One-hot encode non-numeric feature columns.
    #[arg(long)]
    categorical: bool,
    /// Also write the minipatch index sets and prediction cache here.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Config file for `analyze`; every field mirrors a flag.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzeConfig {
    data: Option<PathBuf>,
    target: Option<String>,
    task: Option<Task>,
    method: Option<MethodArg>,
    learner: Option<LearnerSpec>,
    alpha: Option<f64>,
    b: Option<usize>,
    n_frac: Option<f64>,
    m_frac: Option<f64>,
    train_frac: Option<f64>,
    seed: Option<u64>,
    sets: Option<Vec<FeatureSet>>,
    order: Option<usize>,
    categorical: Option<bool>,
    dump: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// i, ii or iii
    #[arg(long)]
    scenario: Option<ScenarioKind>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    /// Pass the planted interaction through tanh.
    #[arg(long)]
    nonlinear: bool,
    /// identity, ar:RHO or pair:RHO
    #[arg(long, value_parser = parse_correlation)]
    correlation: Option<Correlation>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_correlation(s: &str) -> Result<Correlation, String> {
    let (kind, rho) = s.split_once(':').unwrap_or((s, ""));
    let rho = || {
        rho.parse::<f64>()
            .map_err(|e| format!("correlation `{s}`: {e}"))
    };
    match kind {
        "identity" => Ok(Correlation::Identity),
        "ar" => Ok(Correlation::Ar { rho: rho()? }),
        "pair" => Ok(Correlation::Pair { rho: rho()? }),
        _ => Err(format!(
            "unknown correlation `{s}` (identity, ar:RHO, pair:RHO)"
        )),
    }
}

/// Config file for `simulate`.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    scenario: Option<ScenarioKind>,
    snr: Option<f64>,
    n: Option<usize>,
    m: Option<usize>,
    task: Option<Task>,
    nonlinear: Option<bool>,
    correlation: Option<Correlation>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Success,
    Correlated,
    Coverage,
    Timing,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(value_enum)]
    protocol: ProtocolArg,
    /// Experiment spec (JSON); defaults to the desk-scale protocol.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Directory for `<protocol>.json`, `.csv` and `.svg`.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum OracleCommand {
    /// Prints Monte Carlo vs exact values; fails unless all agree within 3 SE.
    Check {
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, value_parser = parse_task, default_value = "reg")]
        task: Task,
        #[arg(long, default_value_t = 100_000)]
        n_mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure category, mapped to the process exit code.
enum Failure {
    Data(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn required<T>(v: Option<T>, name: &str) -> CliResult<T> {
    v.ok_or_else(|| {
        Failure::Data(format!(
            "missing required setting `{name}` (flag or config)"
        ))
    })
}

#[derive(Serialize)]
struct ResultRecord {
    features: Vec<usize>,
    names: Vec<String>,
    estimate: f64,
    sd: f64,
    ci_lo: f64,
    ci_hi: f64,
    n_eval: usize,
    significant: bool,
}

#[derive(Serialize)]
struct AnalyzeOutput {
    version: u32,
    estimator: String,
    alpha: f64,
    multiplicity: usize,
    target: String,
    feature_names: Vec<String>,
    library_version: &'static str,
    seed: u64,
    config: AnalyzeConfig,
    results: Vec<ResultRecord>,
}

fn analyze(args: AnalyzeArgs) -> CliResult<()> {
    let cfg: AnalyzeConfig = read_config(args.config.as_deref())?;
    let data_path = required(args.data.or(cfg.data), "data")?;
    let target = required(args.target.or(cfg.target), "target")?;
    let task = args.task.or(cfg.task).unwrap_or(Task::Regression);
    let method = args.method.or(cfg.method).unwrap_or(MethodArg::Mp);
    let learner = args
        .learner
        .map(LearnerArg::spec)
        .or(cfg.learner)
        .unwrap_or_else(LearnerSpec::cart);
    let alpha = args.alpha.or(cfg.alpha).unwrap_or(0.1);
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let b = args.b.or(cfg.b).unwrap_or(10_000);
    let n_frac = args.n_frac.or(cfg.n_frac).unwrap_or(0.2);
    let m_frac = args.m_frac.or(cfg.m_frac).unwrap_or(0.2);
    let train_frac = args.train_frac.or(cfg.train_frac).unwrap_or(0.5);
    let categorical = args.categorical || cfg.categorical.unwrap_or(false);
    let out = required(args.out.or(cfg.out), "out")?;
    let dump = args.dump.or(cfg.dump);

    let data = load_csv(&data_path, &target, task, categorical)?;
    let n_cols = data.n_cols();
    let mut sets: Vec<FeatureSet> = args.pairs.into_iter().chain(args.sets).collect();
    if sets.is_empty() {
        sets = cfg.sets.unwrap_or_default();
    }
    for s in &sets {
        s.check(n_cols)?;
        if s.len() < 2 {
            return Err(Failure::Data(format!(
                "set {s} needs at least two features"
            )));
        }
    }
    let all_of_order = sets.is_empty();
    let order = args.order.or(cfg.order).unwrap_or(2);
    if all_of_order {
        if order < 2 || order >= n_cols {
            return Err(Failure::Data(format!(
                "order {order} unsupported for {n_cols} features"
            )));
        }
        sets = FeatureSet::all_of_order(n_cols, order);
    }
    let multiplicity = sets.len();
    let max_order = sets.iter().map(FeatureSet::len).max().unwrap_or(2);
    let resolved = AnalyzeConfig {
        data: Some(data_path),
        target: Some(target),
        task: Some(task),
        method: Some(method),
        learner: Some(learner),
        alpha: Some(alpha),
        b: Some(b),
        n_frac: Some(n_frac),
        m_frac: Some(m_frac),
        train_frac: Some(train_frac),
        seed: Some(seed),
        sets: (!all_of_order).then(|| sets.clone()),
        order: all_of_order.then_some(order),
        categorical: Some(categorical),
        dump: dump.clone(),
        out: Some(out.clone()),
    };

    let samples: Vec<InteractionScoreSamples> = match method {
        MethodArg::Mp => {
            let mut mp = MinipatchConfig::from_fractions(
                data.n_rows(),
                n_cols,
                b,
                n_frac,
                m_frac,
                learner,
                seed,
            );
            mp.max_order = max_order.max(2);
            let ens = train_ensemble(&data, &mp)?;
            if let Some(path) = &dump {
                let f = File::create(path)
                    .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
                ens.write_dump(BufWriter::new(f))?;
            }
            if all_of_order {
                let scan = ens.all_sets_scores(order)?;
                if let Some((_, e)) = scan.failures.into_iter().next() {
                    return Err(e.into());
                }
                scan.scores
            } else {
                sets.iter()
                    .map(|s| iloco_samples(&ens, s))
                    .collect::<Result<_, _>>()?
            }
        }
        MethodArg::Split => {
            let sp = split(&data, train_frac, RngStream::new(seed))?;
            let fit = fit_split(sp, &learner, &sets)?;
            sets.iter()
                .map(|s| iloco_samples(&fit, s))
                .collect::<Result<_, _>>()?
        }
    };
    let mut results: Vec<InteractionResult> = samples
        .iter()
        .map(|s| ci_normal(s, alpha, multiplicity))
        .collect::<Result<_, _>>()?;
    results.sort_by(|a, b| {
        b.estimate
            .total_cmp(&a.estimate)
            .then_with(|| a.feature_set.cmp(&b.feature_set))
    });
    let names = data.feature_names();
    let output = AnalyzeOutput {
        version: 1,
        estimator: match method {
            MethodArg::Mp => "mp".into(),
            MethodArg::Split => "split".into(),
        },
        alpha,
        multiplicity,
        target: data.target_name().to_string(),
        feature_names: names.to_vec(),
        library_version: VERSION,
        seed,
        config: resolved,
        results: results
            .iter()
            .map(|r| ResultRecord {
                features: r.feature_set.indices().to_vec(),
                names: r
                    .feature_set
                    .indices()
                    .iter()
                    .map(|&j| names[j].clone())
                    .collect(),
                estimate: r.estimate,
                sd: r.sd,
                ci_lo: r.ci_lo,
                ci_hi: r.ci_hi,
                n_eval: r.n_eval,
                significant: r.significant(),
            })
            .collect(),
    };
    let json =
        serde_json::to_string_pretty(&output).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_text(&out, &json)?;
    for r in results.iter().take(10) {
        say!(
            "{:<12} {:>10.4}  [{:.4}, {:.4}]{}",
            r.feature_set.to_string(),
            r.estimate,
            r.ci_lo,
            r.ci_hi,
            if r.significant() { " *" } else { "" }
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct Sidecar<'a> {
    library_version: &'static str,
    meta: &'a iloco::simgen::SimulationMeta,
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let cfg: SimulateConfig = read_config(args.config.as_deref())?;
    let mut spec = ScenarioSpec::new(
        args.scenario.or(cfg.scenario).unwrap_or(ScenarioKind::S1),
        args.snr.or(cfg.snr).unwrap_or(1.0),
        args.task.or(cfg.task).unwrap_or(Task::Regression),
        args.n.or(cfg.n).unwrap_or(500),
        args.m.or(cfg.m).unwrap_or(10),
        args.seed.or(cfg.seed).unwrap_or(0),
    );
    spec.nonlinear = args.nonlinear || cfg.nonlinear.unwrap_or(false);
    spec.correlation = args
        .correlation
        .or(cfg.correlation)
        .unwrap_or(Correlation::Identity);
    let out = required(args.out.or(cfg.out), "out")?;
    let (data, meta): (Dataset, _) = generate(&spec)?;
    data.save_csv(&out)?;
    let sidecar = serde_json::to_string_pretty(&Sidecar {
        library_version: VERSION,
        meta: &meta,
    })
    .map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut side = out.clone().into_os_string();
    side.push(".json");
    write_text(Path::new(&side), &sidecar)
}

fn bench_cmd(args: BenchArgs) -> CliResult<()> {
    let (protocol, name) = match args.protocol {
        ProtocolArg::Success => (Protocol::Success, "success"),
        ProtocolArg::Correlated => (Protocol::CorrelatedDetect, "correlated"),
        ProtocolArg::Coverage => (Protocol::Coverage, "coverage"),
        ProtocolArg::Timing => (Protocol::Timing, "timing"),
    };
    let mut spec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<ExperimentSpec>(&text)
                .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?
        }
        None => match protocol {
            Protocol::Success => ExperimentSpec::success_default(),
            Protocol::CorrelatedDetect => ExperimentSpec::correlated_default(),
            Protocol::Coverage => ExperimentSpec::coverage_default(Method::Split),
            Protocol::Timing => ExperimentSpec::timing_default(),
        },
    };
    if spec.protocol != protocol {
        return Err(Failure::Data(format!(
            "config describes protocol {:?} but `{name}` was requested",
            spec.protocol
        )));
    }
    if let Some(r) = args.replicates {
        spec.replicates = r;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(m) = args.method {
        spec.method = match m {
            MethodArg::Mp => Method::Mp,
            MethodArg::Split => Method::Split,
        };
    }
    let report = bench::run(&spec)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", args.out_dir.display())))?;
    let base = args.out_dir.join(name);
    write_text(&base.with_extension("json"), &report.to_json()?)?;
    let csv_path = base.with_extension("csv");
    let f = File::create(&csv_path)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", csv_path.display())))?;
    report.write_csv(BufWriter::new(f))?;
    write_text(&base.with_extension("svg"), &report.to_svg())?;
    for r in &report.rows {
        say!(
            "{} = {:<8} {:<6} {:<20} {:.4} (se {:.4}, n {})",
            r.param,
            r.value,
            r.method,
            r.metric,
            r.estimate,
            r.se,
            r.replicates
        );
    }
    Ok(())
}

fn oracle(cmd: OracleCommand) -> CliResult<()> {
    let OracleCommand::Check {
        order,
        task,
        n_mc,
        seed,
        out,
    } = cmd;
    let rows = oracle_check(order, task, n_mc, seed)?;
    say!(
        "{:<22} {:<9} {:>10} {:>9} {:>11}  within 3se",
        "model",
        "set",
        "mc",
        "mc_se",
        "reference"
    );
    for r in &rows {
        say!(
            "{:<22} {:<9} {:>10.5} {:>9.5} {:>11.5}  {}",
            r.model,
            r.set.to_string(),
            r.mc,
            r.mc_se,
            r.reference,
            r.within_3se
        );
    }
    if let Some(path) = out {
        let json = serde_json::json!({
            "library_version": VERSION,
            "order": order,
            "task": task,
            "n_mc": n_mc,
            "seed": seed,
            "rows": rows,
        });
        write_text(
            &path,
            &serde_json::to_string_pretty(&json).expect("serializable"),
        )?;
    }
    if rows.iter().all(|r| r.within_3se) {
        Ok(())
    } else {
        Err(Failure::Runtime(
            "Monte Carlo and reference disagree beyond 3 SE".into(),
        ))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: could not configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Oracle { command } => oracle(command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
