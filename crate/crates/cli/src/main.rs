use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use onda::domains::Condition;
use onda::harness::{self, io, AblationRequest, ExperimentConfig, SweepParam};
use onda::network::{evaluate, Regime};

/// Online BN-statistics adaptation experiments on a synthetic multi-domain benchmark.
#[derive(Debug, Parser)]
#[command(name = "onda", version)]
struct Cli {
    /// Experiment config (JSON). Defaults apply to every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write every domain of the grid as CSV plus manifest.
    Generate,
    /// Train one source model and save its parameters.
    Train {
        /// Source condition, e.g. `artificial-kinect-white`.
        #[arg(long)]
        source_id: Condition,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the shift study and write results.csv and the summaries.
    Study {
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Run a single source instead of the configured list.
        #[arg(long)]
        source_id: Option<Condition>,
        /// Override the ONDA moving-average rate.
        #[arg(long)]
        alpha: Option<f64>,
        /// Override the ONDA window size.
        #[arg(long)]
        nt: Option<usize>,
    },
    /// Sweep α (at fixed n_t) or n_t (at fixed α) and write trajectories.
    Ablate {
        #[arg(long, value_enum)]
        param: Param,
        /// Fixed α for an n_t sweep.
        #[arg(long)]
        alpha: Option<f64>,
        /// Fixed n_t for an α sweep.
        #[arg(long)]
        nt: Option<usize>,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rebuild the summaries from a results CSV.
    Report {
        /// Results file; defaults to `<out>/results.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Param {
    Alpha,
    Nt,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn write_summaries(
    dir: &Path,
    rows: &[harness::ResultRow],
    gap_threshold: f64,
) -> anyhow::Result<String> {
    let summary = harness::summarize(rows, gap_threshold)?;
    let text = summary.to_text();
    io::write_atomic(&dir.join("summary.txt"), text.as_bytes())?;
    io::write_atomic(&dir.join("summary.csv"), summary.to_csv().as_bytes())?;
    Ok(text)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Generate => {
            cfg.validate()?;
            let protos = cfg.generator.prototypes()?;
            let dir = out.join("datasets");
            for c in Condition::all() {
                let data = cfg.generator.dataset(&protos, c)?;
                io::save_dataset(&dir, &cfg.generator.manifest(&protos, c), &data)?;
                info!("wrote {c}");
            }
            println!(
                "wrote {} domains to {}",
                Condition::all().len(),
                dir.display()
            );
        }
        Command::Train { source_id, seed } => {
            cfg.validate()?;
            let protos = cfg.generator.prototypes()?;
            let params = harness::train_source(&cfg, &protos, source_id, seed)?;
            let held_out = cfg.generator.held_out(&protos, source_id)?;
            let acc = evaluate(&params, &held_out, Regime::Eval)?;
            let path = out.join(format!("params_{source_id}_seed{seed}.json"));
            io::write_json(&path, &params)?;
            println!(
                "{source_id} seed {seed}: held-out accuracy {acc:.4}, hash {}",
                params.hash()
            );
            println!("wrote {}", path.display());
        }
        Command::Study {
            seed,
            source_id,
            alpha,
            nt,
        } => {
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(s) = source_id {
                cfg.sources = vec![s];
            }
            if let Some(a) = alpha {
                cfg.adaptation.alpha = a;
            }
            if let Some(n) = nt {
                cfg.adaptation.n_t = n;
            }
            let output = harness::run_shift_study(&cfg)?;
            if let Some(bad) = output.provenance.iter().find(|p| !p.consistent()) {
                bail!(
                    "methods of {} → {} seed {} started from different parameters",
                    bad.source,
                    bad.target,
                    bad.seed
                );
            }
            io::write_results(&out.join("results.csv"), &output.rows)?;
            io::write_json(&out.join("provenance.json"), &output.provenance)?;
            io::write_atomic(&out.join("config.json"), cfg.to_json().as_bytes())?;
            print!(
                "{}",
                write_summaries(&out, &output.rows, cfg.gap_threshold)?
            );
            println!(
                "wrote {} rows to {}",
                output.rows.len(),
                out.join("results.csv").display()
            );
        }
        Command::Ablate {
            param,
            alpha,
            nt,
            seed,
        } => {
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let param = match param {
                Param::Alpha => SweepParam::Alpha,
                Param::Nt => SweepParam::Nt,
            };
            let mut request = AblationRequest::sweep(param, &cfg);
            match param {
                SweepParam::Alpha => {
                    request.fixed_n_t = nt.or(request.fixed_n_t);
                    request.fixed_alpha = alpha;
                }
                SweepParam::Nt => {
                    request.fixed_alpha = alpha.or(request.fixed_alpha);
                    request.fixed_n_t = nt;
                }
            }
            let result = harness::run_ablation(&cfg, request)?;
            let written = io::write_ablation(&out, &result)?;
            println!(
                "{} sweep on {} → {} (model seed {}, {} frames): BN {:.4}, DIAL {:.4}",
                result.param,
                cfg.ablation.source,
                cfg.ablation.target,
                result.model_seed,
                result.stream_len,
                result.bn_accuracy,
                result.dial_accuracy
            );
            println!(
                "{:>8} {:>8} {:>10} {:>10} {:>10} {:>8}",
                "value", "updates", "frames95", "final", "post-std", "smooth"
            );
            for c in &result.curves {
                println!(
                    "{:>8} {:>8} {:>10} {:>10.4} {:>10.4} {:>8.4}",
                    c.value,
                    c.mean.len(),
                    c.frames_to_threshold,
                    c.final_accuracy,
                    c.post_convergence_std,
                    c.smoothness
                );
            }
            println!("wrote {} files to {}", written.len(), out.display());
        }
        Command::Report { input } => {
            let path = input.unwrap_or_else(|| out.join("results.csv"));
            let rows =
                io::read_results(&path).with_context(|| format!("reading {}", path.display()))?;
            print!("{}", write_summaries(&out, &rows, cfg.gap_threshold)?);
        }
    }
    Ok(())
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<onda::Error>()
            .is_some_and(onda::Error::is_config)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
