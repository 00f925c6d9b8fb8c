//! Command-line front end: generate datasets, run the spectral oracle,
//! train and evaluate the surrogate, sweep parameters, and export reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use xlra::error::{Error, Result};
use xlra::io;
use xlra::metrics::xlra_train_flops;
use xlra::pipeline::{self, RunConfig, SweepAxis};

#[derive(Parser)]
#[command(
    name = "xlra",
    about = "Periodic microstructure generation, an FFT elastic strain oracle, \
             and a per-frequency low-rank surrogate for local response fields",
    version
)]
struct Cli {
    /// JSON run configuration; defaults apply for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config path, e.g. --set train.delta_t=0.25 or
    /// --set dims='[15,15,15]'. May be repeated.
    #[arg(long = "set", global = true, value_name = "PATH=JSON")]
    overrides: Vec<String>,

    /// Output directory (shorthand for --set output_dir=...).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the microstructure dataset and its manifest.
    Generate,
    /// Run the oracle on every manifest entry, writing field files.
    Solve,
    /// Train the surrogate on the manifest's train split.
    Train,
    /// Predict the model's target field for microstructure files.
    Predict {
        /// Trained model file.
        #[arg(long)]
        model: PathBuf,
        /// Microstructure files to predict.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Directory for the predicted field files.
        #[arg(long, default_value = "predictions")]
        pred_dir: PathBuf,
    },
    /// Evaluate the trained model on the test split and write the report.
    Evaluate,
    /// Run generate → solve → train → evaluate once per axis value.
    Sweep {
        /// Axis to vary: train_size, delta_t, ec, zener, or basis_count.
        #[arg(long)]
        axis: String,
        /// Axis values, comma separated (e.g. 0.01,0.02,0.05).
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Report the training-cost FLOP estimate for a rank/cell count.
    Flops {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        n: usize,
    },
    /// Re-export the histogram and parity CSV tables from a report.json.
    ExportCsv {
        /// Evaluation report (as written by `evaluate`).
        #[arg(long)]
        report: PathBuf,
        /// Directory for the CSV files (defaults to the report's directory).
        #[arg(long)]
        csv_dir: Option<PathBuf>,
    },
}

/// Applies one `path=json` override to the JSON config document.
fn apply_override(doc: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("override '{spec}' is not PATH=VALUE")))?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = doc;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if i + 1 == segments.len() {
            node.as_object_mut()
                .ok_or_else(|| Error::invalid(format!("'{path}' does not address an object")))?
                .insert(seg.to_string(), value);
            return Ok(());
        }
        node = node
            .as_object_mut()
            .ok_or_else(|| Error::invalid(format!("'{path}' does not address an object")))?
            .entry(seg.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one segment")
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut doc = match &cli.config {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => serde_json::to_value(RunConfig::default())?,
    };
    for spec in &cli.overrides {
        apply_override(&mut doc, spec)?;
    }
    if let Some(out) = &cli.out {
        apply_override(
            &mut doc,
            &format!("output_dir={}", serde_json::to_string(out)?),
        )?;
    }
    let config: RunConfig = serde_json::from_value(doc)?;
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate => {
            let config = load_config(cli)?;
            let manifest = pipeline::generate(&config)?;
            println!(
                "generated {} instances ({} train / {} test) in {}",
                manifest.entries.len(),
                manifest.split_entries(io::Split::Train).len(),
                manifest.split_entries(io::Split::Test).len(),
                config.output_dir.display()
            );
        }
        Command::Solve => {
            let config = load_config(cli)?;
            let manifest = pipeline::solve(&config)?;
            let failed = manifest.entries.iter().filter(|e| e.error.is_some()).count();
            let solved = manifest.entries.len() - failed;
            for entry in &manifest.entries {
                match (&entry.error, entry.iterations, entry.residual) {
                    (Some(err), _, _) => println!("{}: FAILED: {err}", entry.microstructure),
                    (None, Some(it), Some(res)) => {
                        println!("{}: {it} iterations, residual {res:.3e}", entry.microstructure)
                    }
                    _ => {}
                }
            }
            println!("solved {solved}/{} instances", manifest.entries.len());
            if failed > 0 {
                return Err(Error::Numerical(format!(
                    "{failed} instance(s) did not converge"
                )));
            }
        }
        Command::Train => {
            let config = load_config(cli)?;
            let model = pipeline::train(&config)?;
            println!(
                "trained {}-rank model for '{}' -> {}",
                model.ranks.len(),
                model.target,
                config.model_path().display()
            );
        }
        Command::Predict {
            model,
            inputs,
            pred_dir,
        } => {
            pipeline::predict_files(model, inputs, pred_dir)?;
            println!("wrote {} prediction(s) to {}", inputs.len(), pred_dir.display());
        }
        Command::Evaluate => {
            let config = load_config(cli)?;
            let evaluation = pipeline::evaluate(&config)?;
            let r = &evaluation.report;
            println!("test instances: {}", r.per_instance.len());
            println!("R2:             {:.6}", r.r2);
            println!("R2 (rank 1):    {:.6}", evaluation.r2_rank1);
            println!("relative L2:    {:.4}%", r.relative_l2);
            println!("relative MAE:   {:.6}", r.relative_mae);
            println!("relative MSE:   {:.6}", r.relative_mse);
            println!("MASE:           {:.4}%", r.mase);
            println!("flagged cells:  {}", r.flagged_cells);
            println!("report: {}", config.output_dir.join("report.json").display());
        }
        Command::Sweep { axis, values } => {
            let config = load_config(cli)?;
            let axis: SweepAxis = axis.parse()?;
            let rows = pipeline::sweep(&config, axis, values)?;
            for row in &rows {
                match &row.error {
                    Some(err) => println!("value {}: FAILED: {err}", row.value),
                    None => println!(
                        "value {}: R2 {:.6}, relative L2 {:.4}%",
                        row.value, row.r2, row.relative_l2
                    ),
                }
            }
            println!("table: {}", config.output_dir.join("sweep.csv").display());
        }
        Command::Flops { k, n } => {
            if *k == 0 || *n == 0 {
                return Err(Error::invalid("k and n must be positive"));
            }
            let a = 2 * k;
            let nf = *n as f64;
            let log2n = if *n > 1 { nf.log2() } else { 0.0 };
            let fft = 5.0 * (a as f64 + 180.0) * nf * log2n;
            let regression = 72.0 * a as f64 * nf;
            let pointwise = 648.0 * nf;
            println!("coefficients:    {a} (2 x rank {k})");
            println!("transform term:  {fft:.0}");
            println!("regression term: {regression:.0}");
            println!("pointwise term:  {pointwise:.0}");
            println!("total FLOPs:     {}", xlra_train_flops(*k, *n));
        }
        Command::ExportCsv { report, csv_dir } => {
            let evaluation: pipeline::Evaluation =
                serde_json::from_slice(&std::fs::read(report)?)?;
            let dir = csv_dir
                .clone()
                .or_else(|| report.parent().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            pipeline::write_report_csv(&dir, &evaluation.report)?;
            println!(
                "wrote {} and {}",
                dir.join("histogram.csv").display(),
                dir.join("parity.csv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
