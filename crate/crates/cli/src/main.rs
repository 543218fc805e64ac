use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deepcompress::diagnostics::gradcheck_suite;
use deepcompress::error::{Error, Result};
use deepcompress::nn::checkpoint;
use deepcompress::pipeline::{baseline_model, load_splits, run_pipeline, single_layer_experiment, write_single_layer, RunConfig};
use deepcompress::report::{emit_report, load_report, CompressionReport, ReportFormat};

/// Gradient checks pass below this relative error.
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "deepcompress", version, about = "Reinforcement-learning driven pruning and quantization of small CNNs")]
struct Cli {
    /// JSON run configuration (defaults are used when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for checkpoints, traces and reports.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline network and report it.
    Train,
    /// Baseline, then the pruning search and fine-tuning.
    Prune,
    /// Baseline, then the quantization search and fine-tuning.
    Quantize,
    /// Every stage enabled in the configuration.
    Pipeline,
    /// Per-layer sweep of channel, magnitude and variational pruning.
    SingleLayer,
    /// Finite-difference checks of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Re-emit the JSON and CSV forms of an existing report.
    Report {
        /// Report to read (defaults to `<out-dir>/report.json`).
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_summary(r: &CompressionReport) {
    println!("{:<10} {:>9} {:>9} {:>10} {:>12} {:>12}", "stage", "val", "test", "nonzero", "eff. FLOPs", "bits");
    for s in &r.stages {
        println!(
            "{:<10} {:>8.2}% {:>8.2}% {:>10} {:>12} {:>12}",
            s.stage,
            100.0 * s.val_accuracy,
            100.0 * s.test_accuracy,
            s.nonzero_params,
            s.effective_flops,
            s.model_bits
        );
    }
    if let Some(f) = &r.failure {
        println!("stopped in stage {}: {}", f.stage, f.message);
    }
}

fn pipeline(mut cfg: RunConfig, out: &Path, stages: Option<(bool, bool)>) -> Result<()> {
    if let Some((prune, quantize)) = stages {
        cfg.stages.prune = prune;
        cfg.stages.quantize = quantize;
    }
    match run_pipeline(&cfg, out) {
        Ok(report) => {
            print_summary(&report);
            println!("report written to {}", out.join("report.json").display());
            Ok(())
        }
        Err(partial) => {
            print_summary(&partial.report);
            eprintln!("partial report written to {}", out.join("report.json").display());
            Err(partial.error)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out_dir.clone();
    match cli.command {
        Command::Train => pipeline(load_config(&cli)?, &out, Some((false, false))),
        Command::Prune => pipeline(load_config(&cli)?, &out, Some((true, false))),
        Command::Quantize => pipeline(load_config(&cli)?, &out, Some((false, true))),
        Command::Pipeline => pipeline(load_config(&cli)?, &out, None),
        Command::SingleLayer => {
            let cfg = load_config(&cli)?;
            cfg.validate()?;
            let splits = load_splits(&cfg)?;
            let model = baseline_model(&cfg, &splits)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            checkpoint::save(&model, &out.join("baseline"))?;
            let report = single_layer_experiment(&cfg, &model, &splits)?;
            for r in &report.rankings {
                let order: Vec<&str> = r.order.iter().map(|s| s.name()).collect();
                println!("{:<6} lowest to highest error increase: {}", r.layer_name, order.join(" < "));
            }
            for p in write_single_layer(&report, &out)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Gradcheck { instances } => {
            let cfg = load_config(&cli)?;
            let results = gradcheck_suite(cfg.seed, instances)?;
            let mut failed = Vec::new();
            for r in &results {
                let ok = r.max_rel_err <= GRADCHECK_TOL;
                println!("{:<22} {:>4} instances  max rel err {:.3e}  {}", r.op, r.instances, r.max_rel_err, if ok { "ok" } else { "FAIL" });
                if !ok {
                    failed.push(r.op.clone());
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::Diverged(format!("gradient check failed for {}", failed.join(", "))))
            }
        }
        Command::Report { input } => {
            let path = input.unwrap_or_else(|| out.join("report.json"));
            let mut report = load_report(&path)?;
            report.refresh_front();
            emit_report(&report, ReportFormat::Json, &out)?;
            for p in emit_report(&report, ReportFormat::Csv, &out)? {
                println!("wrote {}", p.display());
            }
            print_summary(&report);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
