use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use repsel::decompose::{repeated_selection, stage_counts};
use repsel::estimate::{fit, BatchSize, FitConfig};
use repsel::evaluate::{kfold_eval, risk_experiment, tail_bundle_stats, RiskExperimentConfig, MIN_BUNDLE_TRIALS};
use repsel::io::{
    export_cayley, read_params, read_preflib, write_params, write_results_csv, CertificateRow, EvalRow,
};
use repsel::spectral::certify;
use repsel::types::{validate_dataset, ModelKind};
use repsel::Error;

#[derive(Parser, Debug)]
#[command(name = "repsel", version, about = "Repeated-selection ranking models")]
struct Cli {
    /// Cap on worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to a Preflib file and write its parameters as JSON
    Fit(FitArgs),
    /// K-fold cross-validated test NLL and position profile
    Eval(EvalArgs),
    /// Risk-convergence simulation on synthetic data
    Simulate(SimulateArgs),
    /// Spectral identifiability certificate for a dataset
    Diagnose(DiagnoseArgs),
    /// Export the Cayley graph of S_n with model probabilities
    Cayley(CayleyArgs),
    /// Check a Preflib file and summarize it
    Validate(ValidateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Model {
    Pl,
    CrsFull,
    CrsFactor,
    Mallows,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SimModel {
    Pl,
    CrsFull,
    CrsFactor,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DiagModel {
    Pl,
    Crs,
}

#[derive(Args, Debug)]
struct Training {
    /// Latent rank (required for crs-factor)
    #[arg(long)]
    rank: Option<usize>,
    /// Adam epochs
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Mini-batch size in choices, or `full`
    #[arg(long, default_value = "64", value_parser = parse_batch)]
    batch: BatchSize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: Model,
    #[command(flatten)]
    train: Training,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: Model,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[command(flatten)]
    train: Training,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    model: SimModel,
    /// Universe sizes, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long)]
    rank: Option<usize>,
    /// Radius of the ground-truth parameter ball
    #[arg(long = "B", default_value_t = 1.5)]
    b: f64,
    /// Dataset sizes, comma separated and increasing
    #[arg(long, value_delimiter = ',', required = true)]
    ell: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Adam epochs per fit (full batch)
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Risk table CSV; the bundle summary goes to `<stem>_summary.csv`
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: DiagModel,
    #[arg(long = "B", default_value_t = 1.5)]
    b: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CayleyArgs {
    #[arg(long)]
    n: usize,
    /// Parameter documents, comma separated
    #[arg(long, value_delimiter = ',')]
    params: Vec<PathBuf>,
    /// DOT output; the node table goes next to it as `.csv`
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    data: PathBuf,
}

fn parse_batch(s: &str) -> Result<BatchSize, String> {
    if s == "full" {
        return Ok(BatchSize::Full);
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("expected a positive integer or `full`, got `{s}`")),
        Ok(k) => Ok(BatchSize::Size(k)),
    }
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Diverged { .. } => 3,
            Error::TooLarge { .. } => 4,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn model_kind(model: Model, rank: Option<usize>) -> Result<ModelKind, Failure> {
    Ok(match model {
        Model::Pl => ModelKind::Pl,
        Model::CrsFull => ModelKind::CrsFull,
        Model::Mallows => ModelKind::Mallows,
        Model::CrsFactor => ModelKind::CrsFactor {
            rank: rank.ok_or_else(|| usage("--model crs-factor requires --rank"))?,
        },
    })
}

fn fit_config(t: &Training) -> FitConfig {
    FitConfig {
        learning_rate: t.lr,
        epochs: t.epochs,
        batch_size: t.batch,
        seed: t.seed,
        ..FitConfig::default()
    }
}

fn cmd_fit(a: &FitArgs) -> Result<(), Failure> {
    let kind = model_kind(a.model, a.train.rank)?;
    let cfg = fit_config(&a.train);
    eprintln!("fit: data={} model={kind} out={} config={cfg:?}", a.data.display(), a.out.display());
    let ds = read_preflib(&a.data)?;
    let rep = fit(kind, &ds, &cfg)?;
    write_params(&rep.final_params, &a.out)?;
    eprintln!(
        "train NLL per ranking {:.6}, per choice {:.6} ({} epochs, {:.2} s)",
        rep.train_nll_per_ranking, rep.train_nll_per_choice, rep.epochs_run, rep.wall_time_seconds
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Failure> {
    let kind = model_kind(a.model, a.train.rank)?;
    let cfg = fit_config(&a.train);
    eprintln!(
        "eval: data={} model={kind} folds={} out={} config={cfg:?}",
        a.data.display(),
        a.folds,
        a.out.display()
    );
    let ds = read_preflib(&a.data)?;
    let cv = kfold_eval(&ds, kind, a.folds, &cfg, a.train.seed)?;
    write_results_csv(&EvalRow::from_cv(&cv), &a.out)?;
    eprintln!("mean test NLL per ranking {:.6} ± {:.6}", cv.mean_test_nll_per_ranking, cv.sem);
    Ok(())
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let model_kind = match a.model {
        SimModel::Pl => ModelKind::Pl,
        SimModel::CrsFull => ModelKind::CrsFull,
        SimModel::CrsFactor => model_kind(Model::CrsFactor, a.rank)?,
    };
    let cfg = RiskExperimentConfig {
        model_kind,
        n_grid: a.n.clone(),
        b: a.b,
        ell_grid: a.ell.clone(),
        trials: a.trials,
        seed: a.seed,
        fit_cfg: FitConfig {
            learning_rate: a.lr,
            epochs: a.epochs,
            batch_size: BatchSize::Full,
            ..FitConfig::default()
        },
    };
    eprintln!("simulate: out={} config={cfg:?}", a.out.display());
    let rows = risk_experiment(&cfg)?;
    write_results_csv(&rows, &a.out)?;
    if a.trials >= MIN_BUNDLE_TRIALS {
        let path = summary_path(&a.out);
        write_results_csv(&tail_bundle_stats(&rows)?, &path)?;
        eprintln!("wrote {} rows and {}", rows.len(), path.display());
    } else {
        eprintln!("wrote {} rows; bundle summary needs ≥ {MIN_BUNDLE_TRIALS} trials", rows.len());
    }
    Ok(())
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<(), Failure> {
    let kind = match a.model {
        DiagModel::Pl => ModelKind::Pl,
        DiagModel::Crs => ModelKind::CrsFull,
    };
    eprintln!("diagnose: data={} model={kind} B={} out={}", a.data.display(), a.b, a.out.display());
    let ds = read_preflib(&a.data)?;
    let cert = certify(&ds, kind, a.b)?;
    write_results_csv(&CertificateRow::rows(&cert), &a.out)?;
    eprintln!(
        "λ₂ = {:.6e}, {} = {}",
        cert.lambda2,
        if kind == ModelKind::Pl { "connected" } else { "identified" },
        cert.connected_or_identified
    );
    Ok(())
}

fn cmd_cayley(a: &CayleyArgs) -> Result<(), Failure> {
    eprintln!("cayley: n={} params={:?} out={}", a.n, a.params, a.out.display());
    if a.n > repsel::io::MAX_CAYLEY_N {
        return Err(usage(format!("--n must be ≤ {}", repsel::io::MAX_CAYLEY_N)));
    }
    let params = a.params.iter().map(read_params).collect::<Result<Vec<_>, _>>()?;
    if let Some(p) = params.iter().find(|p| p.n() != a.n) {
        return Err(usage(format!("parameter file has n = {}, expected {}", p.n(), a.n)));
    }
    let ex = export_cayley(&params, a.n, &a.out)?;
    eprintln!("{} nodes, {} edges; table at {}", ex.nodes, ex.edges, ex.csv_path.display());
    Ok(())
}

fn cmd_validate(a: &ValidateArgs) -> Result<(), Failure> {
    eprintln!("validate: data={}", a.data.display());
    let ds = read_preflib(&a.data)?;
    let report = validate_dataset(&ds);
    if !report.is_ok() {
        return Err(usage(format!("{report:?}")));
    }
    let cds = repeated_selection(&ds)?;
    let full = ds.rankings.iter().filter(|r| r.is_full(ds.n())).map(|r| r.weight).sum::<u64>();
    eprintln!(
        "ok: n = {}, {} rankings ({} unique, {} full), {} choices",
        ds.n(),
        ds.total_weight(),
        ds.rankings.len(),
        full,
        cds.total_weight()
    );
    for (k, w) in stage_counts(&ds) {
        eprintln!("  set size {k}: {w}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Cayley(a) => cmd_cayley(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
