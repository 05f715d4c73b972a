use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ifenn::commands::{self, LOSS_FILE};
use ifenn::driver::RunMode;
use ifenn::scenario::ScenarioConfig;
use ifenn::{Error, Result};

/// Phase-field fracture with a hybrid FEM / convolutional-network solver.
#[derive(Parser)]
#[command(name = "ifenn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `paths.output_dir` next to the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `training.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Write field snapshots every K increments.
    #[arg(long, value_name = "K")]
    snapshot_every: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// FEM run exporting training history maps.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a network on history maps.
    Train {
        #[command(flatten)]
        common: Common,
        /// Where to write the model; defaults to `paths.model`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// History snapshots; defaults to the maps written by `generate`.
        snapshots: Vec<PathBuf>,
    },
    /// Run the scenario (fem-only or ifenn).
    Run {
        #[command(flatten)]
        common: Common,
        /// Trained model; defaults to `paths.model`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Overrides `run.mode`.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<RunMode>,
    },
    /// Compare two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Displacement window for the reaction statistics.
        #[arg(long, num_args = 2, value_names = ["U0", "U1"])]
        window: Option<Vec<f64>>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<RunMode, String> {
    match s {
        "fem-only" => Ok(RunMode::FemOnly),
        "ifenn" => Ok(RunMode::Ifenn),
        _ => Err(format!("unknown mode {s:?} (expected fem-only or ifenn)")),
    }
}

struct Loaded {
    cfg: ScenarioConfig,
    base: PathBuf,
    out: PathBuf,
}

fn load(common: &Common) -> Result<Loaded> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        match cfg.training.as_mut() {
            Some(t) => t.seed = seed,
            None => {
                return Err(Error::Config(
                    "--seed given but the scenario has no [training] section".into(),
                ))
            }
        }
    }
    if let Some(k) = common.snapshot_every {
        cfg.run.snapshot_every = k;
    }
    cfg.validate()?;
    let base = common
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| base.join(&cfg.paths.output_dir));
    Ok(Loaded { cfg, base, out })
}

fn model_path(l: &Loaded, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| match &l.cfg.paths.model {
        Some(_) => l.cfg.model_path(&l.base),
        None => l.out.join("model.json"),
    })
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let l = load(&common)?;
            let s = commands::cmd_generate(&l.cfg, &l.out)?;
            println!(
                "wrote {} ({} increments, {} snapshot files)",
                s.dir.display(),
                s.record.rows.len(),
                s.snapshots.len()
            );
        }
        Command::Train {
            common,
            model,
            snapshots,
        } => {
            let l = load(&common)?;
            let inputs = if snapshots.is_empty() {
                commands::default_training_inputs(&l.cfg, &l.out)?
            } else {
                snapshots
            };
            let model = model_path(&l, model);
            let every = (l.cfg.training()?.epochs / 20).max(1);
            let s = commands::cmd_train(
                &l.cfg,
                &inputs,
                &model,
                &l.out.join(LOSS_FILE),
                &mut |e, loss| {
                    if e == 1 || e % every == 0 {
                        eprintln!("epoch {e:>6}  loss {loss:.6e}");
                    }
                },
            )?;
            println!(
                "trained {} epochs: loss {:.6e} -> {:.6e} ({:.3}% of initial)",
                s.epochs,
                s.initial_loss,
                s.final_loss,
                100.0 * s.final_loss / s.initial_loss
            );
            println!(
                "model: {}\nloss history: {}",
                s.model_path.display(),
                s.loss_path.display()
            );
        }
        Command::Run {
            common,
            model,
            mode,
        } => {
            let mut l = load(&common)?;
            if let Some(m) = mode {
                l.cfg.run.mode = m;
            }
            let model = (l.cfg.run.mode == RunMode::Ifenn).then(|| model_path(&l, model));
            let s = commands::cmd_run(&l.cfg, model.as_deref(), &l.out)?;
            println!("wrote {}\n{}", s.dir.display(), s.report());
        }
        Command::Compare { a, b, window, out } => {
            let window = window.map(|w| [w[0], w[1]]);
            let report = commands::cmd_compare(&a, &b, window)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(path) = out {
                std::fs::write(&path, format!("{json}\n")).map_err(|e| Error::io(&path, e))?;
            }
            println!(
                "increments {}  peak {:.6e} vs {:.6e} (rel diff {:.3}%)\nreaction diff in [{:e}, {:e}]: max {:.6e}, mean {:.6e}",
                report.increments,
                report.peak_a,
                report.peak_b,
                100.0 * report.peak_rel_diff,
                report.window[0],
                report.window[1],
                report.max_abs_reaction_diff,
                report.mean_abs_reaction_diff
            );
            for d in &report.phi_diffs {
                println!(
                    "phi at increment {}: rel L2 {:.4e}, Linf {:.4e}",
                    d.increment, d.rel_l2, d.linf
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
