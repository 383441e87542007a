use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fluxrnn::config::PipelineConfig;
use fluxrnn::eval::EvalRegime;
use fluxrnn::pipeline::{self, Workspace};
use fluxrnn::Result;

#[derive(Parser)]
#[command(name = "fluxrnn", version, about = "Recurrent-network GPP modelling for forest sites")]
struct Cli {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `paths.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Daily top-of-atmosphere and clear-sky radiation per site.
    Radiation,
    /// Quality filtering, gap filling and PCA of the vegetation indices.
    Preprocess,
    /// GPP anomalies and extreme-day flags per site.
    Extremes,
    /// Train the configured model and save the best checkpoint.
    Train,
    /// HyperBand search over layers, units and learning rate.
    Tune,
    /// NRMSE on the full test period, growing season and extremes.
    Evaluate,
    /// Permutation feature importance on the test set.
    Importance,
    /// Generate the synthetic site described by `[synth]`.
    Synth,
    /// Print the effective config.
    Config,
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let ws = Workspace::new(config, cli.out, cli.seed)?;
    match cli.command {
        Command::Config => print!("{}", ws.config.to_toml_string()),
        Command::Synth => {
            let path = pipeline::run_synth(&ws)?;
            println!("wrote {}", path.display());
        }
        Command::Radiation => {
            for path in pipeline::run_radiation(&ws)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Preprocess => {
            let summary = pipeline::run_preprocess(&ws)?;
            for s in &summary.sites {
                match &s.rejected {
                    None => println!("{}: kept, {} days, valid fraction {:.3}", s.id, s.days, s.valid_fraction),
                    Some(why) => eprintln!("warning: {}: {why}", s.id),
                }
            }
            if let Some(pca) = &summary.pca {
                println!("PCA: {} inputs -> {} components", pca.model.n_inputs(), pca.model.n_components());
            }
            println!("features: {}", summary.features.join(", "));
        }
        Command::Extremes => {
            for mask in pipeline::run_extremes(&ws)? {
                println!("{} extreme days from {}", mask.count(), mask.start);
            }
        }
        Command::Train => {
            let t = pipeline::run_train(&ws)?;
            println!(
                "best epoch {} with monitored NRMSE {:.5}; train MAE {:.4} -> {:.4}",
                t.checkpoint.epoch,
                t.checkpoint.monitored_score,
                t.history.initial_train_mae,
                t.history.final_train_mae
            );
            println!("wrote {}", ws.checkpoint_path().display());
        }
        Command::Tune => {
            let o = pipeline::run_tune(&ws)?;
            println!(
                "best layers {:?} lr {:.3e} NRMSE {:.5} after {} epochs in total",
                o.best.layer_sizes, o.best.learning_rate, o.best_score, o.total_epochs
            );
        }
        Command::Evaluate => {
            for report in pipeline::run_evaluate(&ws)? {
                let fmt = |r: EvalRegime| report.get(r).map_or("n/a".to_string(), |s| format!("{:.5}", s.nrmse));
                println!(
                    "{}: full {} growing season {} extremes {}",
                    report.site_id,
                    fmt(EvalRegime::Full),
                    fmt(EvalRegime::GrowingSeason),
                    fmt(EvalRegime::Extremes)
                );
            }
        }
        Command::Importance => {
            let report = pipeline::run_importance(&ws)?;
            println!("baseline NRMSE {:.5}", report.baseline);
            for f in &report.features {
                println!("{:>16} {:+.5}", f.feature, f.mean);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
