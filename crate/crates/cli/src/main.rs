//! `imv`: train and inspect interpretable multi-variable LSTM forecasters.
//!
//! Exit codes: 0 on success, 2 for usage, configuration or data errors,
//! 1 for internal failures.

mod config;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use imv_core::cell::Variant;
use imv_core::checkpoint::{write_atomic, Checkpoint};
use imv_core::dataio::load_csv;
use imv_core::evalx::{generate_synthetic, rank_variables, select_top_k_table, Driver, ImportanceReport, SyntheticSpec};
use imv_core::experiment::{predict_table, train_on_table};
use imv_core::ImvError;

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "imv", version, about = "Interpretable multi-variable LSTM forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, metrics and importance snapshots.
    Train(TrainArgs),
    /// Forecast every window of a CSV with a checkpoint.
    Predict(PredictArgs),
    /// Print variable and temporal importance stored in a checkpoint.
    Importance(ImportanceArgs),
    /// Keep the most important variables of a CSV.
    Select(SelectArgs),
    /// Generate a synthetic benchmark CSV.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    per_var_dim: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct ImportanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also write `variable_importance.csv` and `temporal_importance.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of exogenous variables.
    #[arg(long, default_value_t = 6)]
    n_vars: usize,
    #[arg(long, default_value_t = 2500)]
    length: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long)]
    nonlinear: bool,
    /// Driver as `NAME:LAG:COEF`, e.g. `x1:2:0.6`; repeatable. Defaults to
    /// the benchmark drivers.
    #[arg(long = "driver", value_parser = parse_driver)]
    drivers: Vec<(String, usize, f64)>,
    /// Output CSV path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: ImvError| e.to_string())
}

fn parse_driver(s: &str) -> Result<(String, usize, f64), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [name, lag, coef] = parts[..] else {
        return Err(format!("expected NAME:LAG:COEF, got {s:?}"));
    };
    let lag = lag.parse().map_err(|_| format!("bad lag {lag:?}"))?;
    let coef = coef.parse().map_err(|_| format!("bad coefficient {coef:?}"))?;
    Ok((name.to_string(), lag, coef))
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<ImvError> for Failure {
    fn from(e: ImvError) -> Self {
        let code = match e {
            ImvError::Contract(_) | ImvError::NonFinite { .. } => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::from(ImvError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Write to standard output; a closed pipe (`imv synth | head`) is not an error.
fn write_stdout(bytes: &[u8]) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    match out.write_all(bytes).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(io_failure(Path::new("<stdout>"), e)),
        _ => Ok(()),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Failure {
            code: 1,
            message: e.to_string(),
        })
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).map_err(Failure::usage)?,
        None => RunConfig::default(),
    };
    cfg.apply(Overrides {
        data: args.data,
        target: args.target,
        variant: args.variant,
        per_var_dim: args.per_var_dim,
        window: args.window,
        epochs: args.epochs,
        seed: args.seed,
        out: args.out,
    });
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Failure::usage(format!("invalid configuration:\n  {}", problems.join("\n  "))));
    }
    let data = cfg.data.as_ref().expect("validated");
    let table = load_csv(data, cfg.target.as_deref().expect("validated"))?;
    if table.dropped_rows() > 0 {
        eprintln!("dropped {} rows with missing values", table.dropped_rows());
    }
    std::fs::create_dir_all(&cfg.out).map_err(|e| io_failure(&cfg.out, e))?;

    let columns = table.columns().to_vec();
    let mut snapshots = format!("epoch,{}\n", columns.join(","));
    let n = columns.len();
    let _ = writeln!(snapshots, "0,{}", vec![format!("{:?}", 1.0 / n as f64); n].join(","));
    let every = cfg.snapshot_every;
    let run = train_on_table::<f64>(&table, cfg.window, &cfg.split, &cfg.model, &cfg.train, |r| {
        let val = r.val_rmse.map_or("-".to_string(), |v| format!("{v:.6}"));
        println!(
            "epoch {:>4}  loss {:.6}  nll {:.6}  val_rmse {val}",
            r.stats.epoch, r.stats.mean_loss, r.stats.mean_nll
        );
        if r.stats.epoch % every == 0 {
            let row: Vec<String> = r.var_importance.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(snapshots, "{},{}", r.stats.epoch, row.join(","));
        }
    })?;

    let ck_path = cfg.out.join("checkpoint.json");
    run.outcome.checkpoint.save(&ck_path)?;
    let metrics_path = cfg.out.join("metrics.json");
    write_atomic(&metrics_path, to_json(&run.metrics)?.as_bytes())?;
    write_atomic(&cfg.out.join("importance_snapshots.csv"), snapshots.as_bytes())?;
    println!(
        "best epoch {}; wrote {} and {}",
        run.metrics.epoch,
        ck_path.display(),
        metrics_path.display()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let target = ck.config.columns.last().expect("checkpoint has columns");
    let table = load_csv(&args.data, target)?;
    let preds = predict_table(&ck, &table)?;
    let mut text = String::from("window_start,y_true,y_hat\n");
    for p in preds {
        let y = p.y_true.map_or(String::new(), |v| format!("{v:?}"));
        let _ = writeln!(text, "{},{y},{:?}", p.window_start, p.y_hat);
    }
    write_stdout(text.as_bytes())
}

fn cmd_importance(args: ImportanceArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let state = ck.importance_state()?;
    let report = ImportanceReport::new(&ck.config.columns, &state)?;
    print!("{}", to_json(&report)?);
    if let Some(dir) = args.out {
        std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
        let rank = rank_variables(&report.variable);
        let mut position = vec![0; rank.len()];
        for (r, &v) in rank.iter().enumerate() {
            position[v] = r + 1;
        }
        let mut vi = String::from("variable,importance,rank\n");
        for (v, name) in report.variables.iter().enumerate() {
            let _ = writeln!(vi, "{name},{:?},{}", report.variable[v], position[v]);
        }
        let t = state.window();
        let lags: Vec<String> = (0..t).map(|k| format!("lag_{}", t - 1 - k)).collect();
        let mut ti = format!("variable,{}\n", lags.join(","));
        for name in &report.variables {
            let row: Vec<String> = report.temporal[name].iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(ti, "{name},{}", row.join(","));
        }
        write_atomic(&dir.join("variable_importance.csv"), vi.as_bytes())?;
        write_atomic(&dir.join("temporal_importance.csv"), ti.as_bytes())?;
    }
    Ok(())
}

fn cmd_select(args: SelectArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let columns = &ck.config.columns;
    let table = load_csv(&args.data, columns.last().expect("checkpoint has columns"))?.align_to(columns)?;
    let ranking = rank_variables(&ck.importance.variable);
    let reduced = select_top_k_table(&table, &ranking, args.fraction)?;
    let mut buf = Vec::new();
    reduced.write_csv(&mut buf)?;
    write_atomic(&args.out, &buf)?;
    println!("kept {}", reduced.columns().join(", "));
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    let mut spec = SyntheticSpec {
        n_vars: args.n_vars,
        length: args.length,
        seed: args.seed,
        noise_std: args.noise,
        nonlinear: args.nonlinear,
        ..SyntheticSpec::default()
    };
    if !args.drivers.is_empty() {
        let names = spec.column_names();
        spec.drivers = args
            .drivers
            .iter()
            .map(|(name, lag, coef)| {
                let var = names[..spec.n_vars]
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Failure::usage(format!("unknown driver variable {name:?}")))?;
                Ok(Driver { var, lag: *lag, coef: *coef })
            })
            .collect::<Result<_, Failure>>()?;
    }
    let table = generate_synthetic(&spec)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    match args.out {
        Some(p) => write_atomic(&p, &buf)?,
        None => write_stdout(&buf)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Importance(a) => cmd_importance(a),
        Command::Select(a) => cmd_select(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
