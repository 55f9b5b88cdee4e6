use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diffsf::diffusion::StepSpec;
use diffsf::harness::{
    ablate_steps, ablation_csv, evaluate_checkpoint, find_checkpoints, generate_dataset, parse_grid, uncertainty_study,
    Checkpoint, Config, Trainer,
};
use diffsf::pointcloud::{flow_csv, load_dataset, load_scene, save_dataset};
use diffsf::uncertainty::{bins_csv, default_pr_thresholds, pr_csv, sample_hypotheses};
use diffsf::{Error, Result};

#[derive(Parser)]
#[command(name = "diffsf", about = "Diffusion-based scene flow on point cloud pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; checkpoints and the step log go to --out.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset and write per-scene metrics.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Sampling steps and training steps, as A@B.
        #[arg(long)]
        steps: Option<StepSpec>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw hypotheses for one scene file.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 20)]
        hypotheses: usize,
        #[arg(long)]
        steps: Option<StepSpec>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Uncertainty-error bins and outlier precision/recall.
    Uncertainty {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long)]
        steps: Option<StepSpec>,
        #[arg(long)]
        out: PathBuf,
        /// Use the fixed threshold grid instead of std quantiles.
        #[arg(long)]
        fixed_thresholds: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a grid of A@B settings with checkpoints from one directory.
    AblateSteps {
        #[arg(long)]
        ckpt_dir: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "1@5,2@5,5@5,1@20,2@20,5@20,20@20")]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn default_steps(ck: &Checkpoint, steps: Option<StepSpec>) -> StepSpec {
    steps.unwrap_or(StepSpec {
        sample: ck.config.diffusion.t_sample,
        train: ck.config.diffusion.t_train,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            scenes,
            config,
            seed,
        } => {
            let cfg = load_config(config.as_deref())?;
            save_dataset(&out, &generate_dataset(&cfg.scene, scenes, seed)?)?;
            eprintln!("wrote {scenes} scenes to {}", out.display());
        }
        Command::Train {
            data,
            out,
            config,
            resume,
        } => {
            let dataset = load_dataset(&data)?;
            let trainer = match resume {
                Some(path) => {
                    let ck = Checkpoint::load(&path)?;
                    if let Some(c) = config {
                        if Config::load(&c)? != ck.config {
                            return Err(Error::Config("--config differs from the checkpoint's configuration".into()));
                        }
                    }
                    Trainer::resume(ck, &dataset)?
                }
                None => Trainer::new(&load_config(config.as_deref())?, &dataset)?,
            };
            let mut trainer = trainer.with_out_dir(&out)?;
            let every = trainer.state().config.train.log_every.max(1);
            trainer.run(&mut |r| {
                if r.iteration % every == 0 {
                    eprintln!("iter {:6}  lr {:.3e}  loss {:.5}  grad {:.3}", r.iteration, r.lr, r.loss, r.grad_norm);
                }
            })?;
            eprintln!("training finished; checkpoints in {}", out.display());
        }
        Command::Eval {
            ckpt,
            data,
            steps,
            out,
            seed,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let report = evaluate_checkpoint(&ck, &load_dataset(&data)?, default_steps(&ck, steps), seed)?;
            write(&out, &report.csv())?;
            let m = report.mean.all;
            eprintln!("EPE3D {:.4}  ACC_S {:.4}  ACC_R {:.4}  outliers {:.4}", m.epe3d, m.acc_s, m.acc_r, m.outliers);
        }
        Command::Sample {
            ckpt,
            scene,
            hypotheses,
            steps,
            out,
            seed,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let den = ck.denoiser()?;
            let pair = load_scene(&scene)?;
            let d = &ck.config.diffusion;
            let h = sample_hypotheses(&den, &pair, d, d.sampler, default_steps(&ck, steps), hypotheses, seed)?;
            for (i, f) in h.hypotheses.iter().enumerate() {
                write(&out.join(format!("hypothesis_{i:03}.csv")), &flow_csv(f))?;
            }
            write(&out.join("mean.csv"), &flow_csv(&h.mean))?;
            let std: String = h.std.iter().map(|s| format!("{s}\n")).collect();
            write(&out.join("std.csv"), &format!("std\n{std}"))?;
        }
        Command::Uncertainty {
            ckpt,
            data,
            k,
            steps,
            out,
            fixed_thresholds,
            seed,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let thresholds = if fixed_thresholds {
                default_pr_thresholds(ck.config.diffusion.flow_scale)
            } else {
                Vec::new()
            };
            let study = uncertainty_study(
                &ck.denoiser()?,
                &load_dataset(&data)?,
                &ck.config,
                default_steps(&ck, steps),
                k,
                &thresholds,
                seed,
            )?;
            write(&out.join("bins.csv"), &bins_csv(&study.bins))?;
            write(&out.join("pr.csv"), &pr_csv(&study.pr))?;
            match study.spearman {
                Some(r) => eprintln!("spearman(std, epe) = {r:.4}"),
                None => eprintln!("spearman undefined (constant sample)"),
            }
        }
        Command::AblateSteps {
            ckpt_dir,
            data,
            grid,
            out,
            seed,
        } => {
            let rows = ablate_steps(&find_checkpoints(&ckpt_dir)?, &parse_grid(&grid)?, &load_dataset(&data)?, seed)?;
            write(&out, &ablation_csv(&rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
