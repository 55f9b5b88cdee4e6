//! The training loop.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::config::Config;
use super::optim::{clip_grad_norm, one_cycle_lr};
use crate::denoiser::denoise_graph;
use crate::diffusion::{q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{Graph, RngStream};
use crate::objective::total_loss_graph;
use crate::pointcloud::{generate_scene, FlowField, SceneGenConfig, ScenePair};

pub const LOG_NAME: &str = "train_log.csv";
pub const FINAL_NAME: &str = "final.dsfc";

/// Scene `i` of a synthetic dataset depends only on `(seed, i)`.
pub fn generate_dataset(cfg: &SceneGenConfig, n: usize, seed: u64) -> Result<Vec<ScenePair>> {
    (0..n)
        .map(|i| generate_scene(cfg, &mut RngStream::derive(seed, i as u64)))
        .collect()
}

/// Name of the periodic checkpoint written after `iteration` steps.
pub fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt-{iteration:08}.dsfc")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Iteration index of the step, counting from 0.
    pub iteration: u64,
    pub lr: f64,
    /// Batch mean of the per-point loss.
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Owns the training state and advances it one optimizer step at a time.
///
/// All randomness is drawn from the checkpointed stream in a fixed order,
/// so a run resumed from any checkpoint continues bit for bit.
pub struct Trainer<'a> {
    state: Checkpoint,
    dataset: &'a [ScenePair],
    schedule: NoiseSchedule,
    out_dir: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &Config, dataset: &'a [ScenePair]) -> Result<Self> {
        Self::resume(Checkpoint::initial(config)?, dataset)
    }

    pub fn resume(state: Checkpoint, dataset: &'a [ScenePair]) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("training dataset is empty".into()));
        }
        state.config.validate()?;
        let schedule = state.config.diffusion.train_schedule()?;
        Ok(Self {
            state,
            dataset,
            schedule,
            out_dir: None,
        })
    }

    /// Writes periodic checkpoints, the final checkpoint and the step log
    /// into `dir`, creating it if needed.
    pub fn with_out_dir(mut self, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.out_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    pub fn state(&self) -> &Checkpoint {
        &self.state
    }

    pub fn into_state(self) -> Checkpoint {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.iteration >= self.state.config.train.iterations
    }

    /// Forward and backward pass for one scene; accumulates `scale` times
    /// the per-point loss gradient and returns the per-point loss.
    fn scene_step(&mut self, scene: usize, scale: f64) -> Result<f64> {
        let cfg = &self.state.config;
        let tc = &cfg.train;
        let rng = &mut self.state.rng;
        let pair = self.dataset[scene].subsample(tc.points_train, tc.points_train, tc.subsampling, rng)?;
        let t = 1 + rng.below(self.schedule.steps());
        let n = pair.n1();
        let mut eps = vec![0.0; 3 * n];
        rng.fill_normal(&mut eps);
        let s = cfg.diffusion.flow_scale;
        let v0: Vec<f64> = pair.gt_flow.to_f64().iter().map(|x| x / s).collect();
        let v_t = q_sample(
            &FlowField::from_f64(n, &v0)?,
            t,
            &self.schedule,
            &FlowField::from_f64(n, &eps)?,
        )?;
        let input: Vec<f64> = v_t.to_f64().iter().map(|x| x * s).collect();
        let mut g = Graph::<f32>::new();
        let nodes = denoise_graph(&mut g, &self.state.params, &cfg.denoiser, &FlowField::from_f64(n, &input)?, &pair)?;
        let total = total_loss_graph(&mut g, nodes.v_init, nodes.v_pred, &pair.gt_flow, &cfg.loss)?;
        let loss = g.scale(total, 1.0 / n as f64);
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: self.state.iteration as usize,
                scene,
            });
        }
        g.backward(loss);
        g.accumulate_param_grads(&mut self.state.params, scale)?;
        Ok(value)
    }

    /// One optimizer step on a freshly drawn batch.
    pub fn step(&mut self) -> Result<StepRecord> {
        if self.is_done() {
            return Err(Error::InvalidArgument("training already finished".into()));
        }
        let tc = self.state.config.train.clone();
        let iteration = self.state.iteration;
        let lr = one_cycle_lr(iteration, tc.iterations, tc.peak_lr)?;
        self.state.params.zero_grads();
        let mut loss = 0.0;
        for _ in 0..tc.batch_size {
            let scene = self.state.rng.below(self.dataset.len());
            loss += self.scene_step(scene, 1.0 / tc.batch_size as f64)?;
        }
        let grad_norm = clip_grad_norm(&mut self.state.params, tc.grad_clip);
        self.state.optimizer.update(&mut self.state.params, lr)?;
        self.state.params.zero_grads();
        self.state.iteration += 1;
        let rec = StepRecord {
            iteration,
            lr,
            loss: loss / tc.batch_size as f64,
            grad_norm,
        };
        self.write_outputs(&rec)?;
        Ok(rec)
    }

    fn write_outputs(&self, rec: &StepRecord) -> Result<()> {
        let Some(dir) = &self.out_dir else {
            return Ok(());
        };
        let tc = &self.state.config.train;
        let done = self.state.iteration;
        if tc.log_every > 0 && (rec.iteration % tc.log_every == 0 || self.is_done()) {
            let path = dir.join(LOG_NAME);
            let fresh = !path.exists();
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            let mut line = String::new();
            if fresh {
                line.push_str("iteration,lr,loss,grad_norm\n");
            }
            line.push_str(&format!("{},{},{},{}\n", rec.iteration, rec.lr, rec.loss, rec.grad_norm));
            f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        if tc.checkpoint_every > 0 && done % tc.checkpoint_every == 0 {
            self.state.save(dir.join(checkpoint_name(done)))?;
        }
        if self.is_done() {
            self.state.save(dir.join(FINAL_NAME))?;
        }
        Ok(())
    }

    /// Steps until `iteration` steps are complete (or training ends),
    /// calling `observe` after each step.
    pub fn run_until(&mut self, iteration: u64, observe: &mut dyn FnMut(&StepRecord)) -> Result<()> {
        while self.state.iteration < iteration && !self.is_done() {
            let rec = self.step()?;
            observe(&rec);
        }
        Ok(())
    }

    pub fn run(&mut self, observe: &mut dyn FnMut(&StepRecord)) -> Result<()> {
        self.run_until(u64::MAX, observe)
    }
}

/// Trains from scratch and returns the final state. With `out_dir`, the
/// step log and checkpoints are written there.
pub fn train(config: &Config, dataset: &[ScenePair], out_dir: Option<&Path>) -> Result<Checkpoint> {
    let mut t = Trainer::new(config, dataset)?;
    if let Some(d) = out_dir {
        t = t.with_out_dir(d)?;
    }
    t.run(&mut |_| {})?;
    Ok(t.into_state())
}
