use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tensor_regress::baselines::{self, BlockRelaxConfig, LambdaChoice};
use tensor_regress::decomp::{self, CpFactors, TuckerFactors};
use tensor_regress::io::{read_dataset, read_json, read_tensor, write_atomic, write_dataset, write_json};
use tensor_regress::na::{self, NaConfig};
use tensor_regress::simbench::{self, prediction_error, SimDesign};
use tensor_regress::{Error, Family, FitResult, Method};

#[derive(Parser)]
#[command(name = "tensor-regress", version, about = "Tensor regression with sparse Tucker cores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test datasets and the true coefficient tensor.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset.
    Fit(FitArgs),
    /// Write predictions of a fitted model as CSV.
    Predict(PredictArgs),
    /// Compute prediction error, coefficient MSE and core zero count.
    Evaluate(EvaluateArgs),
    /// Tucker or CP decomposition of a tensor.
    Decompose(DecomposeArgs),
    /// Run the simulation benchmark.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Binomial,
    Poisson,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Binomial => Family::Binomial,
            FamilyArg::Poisson => Family::Poisson,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seed of the true coefficient tensor.
    #[arg(long, default_value_t = 1)]
    b_seed: u64,
    /// Repeat index selecting the data streams.
    #[arg(long, default_value_t = 0)]
    repeat: usize,
    /// Training size; defaults to 300 (200 for poisson).
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    #[arg(long, default_value = "sim")]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct NaArgs {
    /// Noise block size.
    #[arg(long, default_value_t = 62)]
    ne: usize,
    /// Noise scale.
    #[arg(long, default_value_t = 50.0)]
    lambda: f64,
    /// Comma-separated Tucker ranks (default: full rank).
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    /// Maximum iterations; defaults to 30000/5000/10000 for
    /// gaussian/binomial/poisson.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Moving-average window.
    #[arg(long, default_value_t = 600)]
    window: usize,
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    /// Averaged-coefficient l1 change threshold (0 disables).
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 1e-6)]
    tau0: f64,
    #[arg(long, default_value_t = 1e-7)]
    c: f64,
}

impl NaArgs {
    fn config(&self, family: Family, seed: u64, intercept: bool) -> NaConfig {
        let base = NaConfig::full(family);
        NaConfig {
            n_e: self.ne,
            lambda: self.lambda,
            ranks: self.ranks.clone(),
            max_iter: self.max_iter.unwrap_or(base.max_iter),
            window: self.window,
            tau: self.tau,
            eta: self.eta,
            tau0: self.tau0,
            c: self.c,
            seed,
            intercept,
            ..base
        }
    }
}

#[derive(Args, Clone)]
struct BlockArgs {
    /// CP rank for cp and cp-l2.
    #[arg(long, default_value_t = 6)]
    cp_rank: usize,
    /// Block-relaxation sweeps.
    #[arg(long, default_value_t = 200)]
    block_max_iter: usize,
    /// Block-relaxation l1 coefficient-change threshold.
    #[arg(long, default_value_t = 1e-4)]
    block_eta: f64,
    /// Lasso penalty: "cv" or a value.
    #[arg(long, default_value = "cv")]
    l1: String,
    /// Ridge penalty on CP factors: "cv" or a value.
    #[arg(long, default_value = "cv")]
    l2: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

fn parse_lambda(s: &str) -> Result<LambdaChoice, Error> {
    if s == "cv" {
        return Ok(LambdaChoice::Cv);
    }
    s.parse::<f64>()
        .map(LambdaChoice::Fixed)
        .map_err(|_| Error::InvalidArgument(format!("penalty must be 'cv' or a number, got '{s}'")))
}

impl BlockArgs {
    fn config(&self, tucker_ranks: Option<Vec<usize>>, seed: u64, intercept: bool) -> Result<BlockRelaxConfig, Error> {
        let cfg = BlockRelaxConfig {
            tucker_ranks,
            cp_rank: self.cp_rank,
            max_iter: self.block_max_iter,
            eta: self.block_eta,
            l1: parse_lambda(&self.l1)?,
            l2: parse_lambda(&self.l2)?,
            folds: self.folds,
            seed,
            intercept,
            ..BlockRelaxConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Dataset JSON.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Loss trace CSV (default: next to the model).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit an unpenalized intercept.
    #[arg(long)]
    intercept: bool,
    #[command(flatten)]
    na: NaArgs,
    #[command(flatten)]
    block: BlockArgs,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "predictions.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Fitted model JSON; alternatively pass --predictions.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    model: Option<PathBuf>,
    /// Predictions CSV as written by `predict`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// True coefficient tensor JSON, for the coefficient MSE.
    #[arg(long)]
    true_b: Option<PathBuf>,
    /// Zero threshold for the core count (default: family value).
    #[arg(long)]
    tau0: Option<f64>,
    /// Output JSON (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecompKind {
    Tucker,
    Cp,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Tensor JSON with "shape" and "data".
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long, value_enum, default_value = "tucker")]
    kind: DecompKind,
    /// Comma-separated Tucker ranks (default: full rank).
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    /// CP rank.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = 500)]
    max_sweeps: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value = "factors.json")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    b_seed: u64,
    /// Defaults to 10, or 200 with --paper-scale.
    #[arg(long)]
    repeats: Option<usize>,
    /// Comma-separated methods (default: all).
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
    /// Full iteration counts, window 600 and 200 repeats.
    #[arg(long)]
    paper_scale: bool,
    /// Overrides the noise-augmented iteration limit.
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, default_value = "bench.json")]
    out_json: PathBuf,
    #[arg(long, default_value = "bench.md")]
    out_md: PathBuf,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Io(_) => 1,
            Error::Diverged { .. } | Error::LassoNotConverged { .. } => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

type CliResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Decompose(a) => decompose(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn simulate(a: SimulateArgs) -> CliResult {
    let family = Family::from(a.family);
    let mut design = SimDesign::desk(family);
    design.seed = a.seed;
    design.b_seed = a.b_seed;
    design.n_test = a.n_test;
    if let Some(n) = a.n_train {
        design.n_train = n;
    }
    design.validate()?;
    let (train, test, b) = simbench::gen_dataset(&design, a.repeat)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::from(e).context(a.out_dir.display().to_string()))?;
    write_dataset(&a.out_dir.join("train.json"), &train)?;
    write_dataset(&a.out_dir.join("test.json"), &test)?;
    write_json(&a.out_dir.join("true_b.json"), &b)?;
    println!(
        "wrote {} training and {} test rows to {}",
        train.len(),
        test.len(),
        a.out_dir.display()
    );
    Ok(0)
}

fn fit(a: FitArgs) -> CliResult {
    let ds = read_dataset(&a.data)?;
    let family = ds.family();
    let model = match a.method {
        Method::Na0ct2 => na::fit(&ds, &a.na.config(family, a.seed, a.intercept))?,
        m => {
            let cfg = a.block.config(a.na.ranks.clone(), a.seed, a.intercept)?;
            baselines::fit(m, &ds, &cfg)?
        }
    };
    write_json(&a.out, &model)?;
    let trace_path = a.trace.unwrap_or_else(|| a.out.with_extension("trace.csv"));
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in model.trace.iter().enumerate() {
        let _ = writeln!(csv, "{},{:.16e}", i + 1, l);
    }
    write_atomic(&trace_path, csv.as_bytes())?;
    println!(
        "{}: {} iterations, converged: {}",
        model.method, model.iterations, model.converged
    );
    if let Some(v) = model.dispersion(&ds)? {
        println!("residual variance {v:.6e}");
    }
    Ok(if model.converged { 0 } else { 3 })
}

fn read_model(path: &Path) -> Result<FitResult, Error> {
    read_json(path)
}

fn predict(a: PredictArgs) -> CliResult {
    let model = read_model(&a.model)?;
    let ds = read_dataset(&a.data)?;
    let pred = model.predict(ds.predictors())?;
    write_atomic(&a.out, predictions_csv(&pred).as_bytes())?;
    Ok(0)
}

fn predictions_csv(pred: &[f64]) -> String {
    let mut s = String::from("index,prediction\n");
    for (i, p) in pred.iter().enumerate() {
        let _ = writeln!(s, "{i},{p:.16e}");
    }
    s
}

fn read_predictions(path: &Path) -> Result<Vec<f64>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    let mut lines = text.lines();
    if lines.next() != Some("index,prediction") {
        return Err(Error::InvalidArgument(format!(
            "{}: expected header 'index,prediction'",
            path.display()
        )));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let value = line.split_once(',').map(|(_, v)| v).unwrap_or("");
            value
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("{}: bad prediction on row {}", path.display(), i + 1)))
        })
        .collect()
}

#[derive(Serialize)]
struct EvalReport {
    family: Family,
    rows: usize,
    prediction_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zero_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zero_threshold: Option<f64>,
    /// Gaussian residual variance on this data.
    #[serde(skip_serializing_if = "Option::is_none")]
    dispersion: Option<f64>,
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let ds = read_dataset(&a.data)?;
    let family = ds.family();
    let model = a.model.as_deref().map(read_model).transpose()?;
    let pred = match (&model, &a.predictions) {
        (Some(m), _) => m.predict(ds.predictors())?,
        (None, Some(p)) => read_predictions(p)?,
        (None, None) => unreachable!("clap requires one of --model and --predictions"),
    };
    if pred.len() != ds.len() {
        return Err(Error::Shape(format!("{} predictions for {} rows", pred.len(), ds.len())).into());
    }
    let tau0 = a.tau0.unwrap_or_else(|| simbench::zero_threshold(family));
    let mut report = EvalReport {
        family,
        rows: ds.len(),
        prediction_error: prediction_error(family, &pred, ds.responses()),
        mse: None,
        zero_count: None,
        zero_threshold: None,
        dispersion: None,
    };
    if let Some(m) = &model {
        report.dispersion = m.dispersion(&ds)?;
        report.zero_count = Some(na::core_zero_count(&m.coefficients, tau0)?);
        report.zero_threshold = Some(tau0);
        if let Some(p) = &a.true_b {
            let b = read_tensor(p)?;
            let d = m.raw_coefficients()?.sub(&b)?;
            report.mse = Some(d.data().iter().map(|v| v * v).sum::<f64>() / d.len() as f64);
        }
    }
    match &a.out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
    }
    Ok(0)
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Decomposition {
    Tucker {
        #[serde(flatten)]
        factors: TuckerFactors,
        relative_error: f64,
    },
    Cp {
        #[serde(flatten)]
        factors: CpFactors,
        relative_error: f64,
    },
}

fn decompose(a: DecomposeArgs) -> CliResult {
    let t = read_tensor(&a.tensor)?;
    let out = match a.kind {
        DecompKind::Tucker => {
            let ranks = a.ranks.unwrap_or_else(|| t.shape().to_vec());
            let f = decomp::hooi(&t, &ranks, a.max_sweeps, a.tol)?;
            let err = decomp::relative_error(&t, &decomp::tucker_reconstruct(&f)?)?;
            Decomposition::Tucker { factors: f, relative_error: err }
        }
        DecompKind::Cp => {
            let rank = a
                .rank
                .ok_or_else(|| Error::InvalidRank("--rank is required for --kind cp".into()))?;
            let f = decomp::cp_als(&t, rank, a.max_sweeps, a.tol)?;
            let err = decomp::relative_error(&t, &decomp::cp_reconstruct(&f)?)?;
            Decomposition::Cp { factors: f, relative_error: err }
        }
    };
    let err = match &out {
        Decomposition::Tucker { relative_error, .. } | Decomposition::Cp { relative_error, .. } => *relative_error,
    };
    write_json(&a.out, &out)?;
    println!("relative error {err:.6e}");
    Ok(0)
}

fn bench(a: BenchArgs) -> CliResult {
    let family = Family::from(a.family);
    let mut design = if a.paper_scale { SimDesign::full(family) } else { SimDesign::desk(family) };
    design.seed = a.seed;
    design.b_seed = a.b_seed;
    if let Some(r) = a.repeats {
        design.repeats = r;
    }
    if let Some(m) = a.methods {
        design.methods = m;
    }
    if let Some(t) = a.max_iter {
        design.na.max_iter = t;
    }
    let report = simbench::run_benchmark(&design)?;
    write_json(&a.out_json, &report)?;
    write_atomic(&a.out_md, report.to_markdown().as_bytes())?;
    print!("{}", report.to_markdown());
    let all_failed = report.methods.iter().all(|m| m.failures == design.repeats);
    Ok(if all_failed { 3 } else { 0 })
}
