//! Evaluation over datasets and the sampling-step ablation grid.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::config::Config;
use crate::diffusion::{sample_flow, FlowDenoiser, StepSpec};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::objective::{metrics, MetricReport};
use crate::pointcloud::{FlowField, ScenePair};
use crate::uncertainty::sample_hypotheses;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub steps: StepSpec,
    pub per_scene: Vec<MetricReport>,
    pub mean: MetricReport,
}

impl EvalReport {
    /// One row per scene followed by a `mean` row.
    pub fn csv(&self) -> String {
        let mut s = format!("scene,{}\n", MetricReport::CSV_HEADER);
        for (i, r) in self.per_scene.iter().enumerate() {
            let _ = writeln!(s, "{i},{}", r.csv_row());
        }
        let _ = writeln!(s, "mean,{}", self.mean.csv_row());
        s
    }
}

/// The point estimate for one scene: a single sample, or the mean of
/// `diffusion.eval_hypotheses` samples.
pub fn predict_scene(
    den: &dyn FlowDenoiser,
    pair: &ScenePair,
    cfg: &Config,
    steps: StepSpec,
    rng: &mut RngStream,
) -> Result<FlowField> {
    let d = &cfg.diffusion;
    if d.eval_hypotheses == 1 {
        sample_flow(den, pair, d, d.sampler, steps, rng)
    } else {
        let root = rng.next_u64();
        Ok(sample_hypotheses(den, pair, d, d.sampler, steps, d.eval_hypotheses, root)?.mean)
    }
}

/// Samples every scene with `steps` and scores it. Scene `i` draws from
/// its own stream derived from `(seed, i)`.
pub fn evaluate(
    den: &dyn FlowDenoiser,
    dataset: &[ScenePair],
    cfg: &Config,
    steps: StepSpec,
    seed: u64,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("evaluation dataset is empty".into()));
    }
    let tc = &cfg.train;
    let per_scene = dataset
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let mut rng = RngStream::derive(seed, i as u64);
            let pair = pair.subsample(tc.points_eval, tc.points_eval, tc.subsampling, &mut rng)?;
            let pred = predict_scene(den, &pair, cfg, steps, &mut rng)?;
            metrics(&pred, &pair)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        steps,
        mean: MetricReport::mean(&per_scene)?,
        per_scene,
    })
}

/// [`evaluate`] for a trained checkpoint; the step spec must use the
/// schedule length the model was trained on.
pub fn evaluate_checkpoint(ck: &Checkpoint, dataset: &[ScenePair], steps: StepSpec, seed: u64) -> Result<EvalReport> {
    if steps.train != ck.config.diffusion.t_train {
        return Err(Error::Config(format!(
            "steps {steps} do not match a model trained with {} steps",
            ck.config.diffusion.t_train
        )));
    }
    evaluate(&ck.denoiser()?, dataset, &ck.config, steps, seed)
}

/// Every `.dsfc` file directly inside `dir`, sorted by path.
pub fn find_checkpoints(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, Checkpoint)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "dsfc"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| Checkpoint::load(&p).map(|c| (p, c)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub steps: StepSpec,
    pub checkpoint: PathBuf,
    pub report: MetricReport,
}

/// Evaluates each grid entry `A@B` with the most-trained checkpoint whose
/// schedule has `B` steps.
pub fn ablate_steps(
    checkpoints: &[(PathBuf, Checkpoint)],
    grid: &[StepSpec],
    dataset: &[ScenePair],
    seed: u64,
) -> Result<Vec<AblationRow>> {
    grid.iter()
        .map(|&steps| {
            let (path, ck) = checkpoints
                .iter()
                .filter(|(_, c)| c.config.diffusion.t_train == steps.train)
                .max_by_key(|(_, c)| c.iteration)
                .ok_or_else(|| Error::Config(format!("no checkpoint trained with {} steps for {steps}", steps.train)))?;
            Ok(AblationRow {
                steps,
                checkpoint: path.clone(),
                report: evaluate_checkpoint(ck, dataset, steps, seed)?.mean,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("steps,{}\n", MetricReport::CSV_HEADER);
    for r in rows {
        let _ = writeln!(s, "{},{}", r.steps, r.report.csv_row());
    }
    s
}

/// Parses a comma-separated list of `A@B` entries.
pub fn parse_grid(text: &str) -> Result<Vec<StepSpec>> {
    text.split(',').map(|s| s.parse()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{OracleDenoiser, SamplerKind};
    use crate::harness::train::generate_dataset;

    fn small() -> (Config, Vec<ScenePair>) {
        let mut cfg = Config::toy();
        cfg.denoiser.feature_dim = 8;
        cfg.denoiser.knn_k = 4;
        cfg.denoiser.n_edgeconv_layers = 2;
        cfg.scene.n1 = 40;
        cfg.scene.n2 = 40;
        cfg.scene.occlusion_fraction = 0.2;
        cfg.train.points_eval = 32;
        let data = generate_dataset(&cfg.scene, 4, 3).unwrap();
        (cfg, data)
    }

    #[test]
    fn oracle_scores_zero_error() {
        let (mut cfg, data) = small();
        for (sampler, k) in [(SamplerKind::Ddim, 1), (SamplerKind::Ddpm, 1), (SamplerKind::Ddim, 3)] {
            cfg.diffusion.sampler = sampler;
            cfg.diffusion.eval_hypotheses = k;
            let r = evaluate(&OracleDenoiser, &data, &cfg, "2@20".parse().unwrap(), 5).unwrap();
            assert_eq!(r.mean.all.epe3d, 0.0);
            assert_eq!(r.mean.all.acc_s, 1.0);
            assert_eq!(r.per_scene.len(), 4);
        }
    }

    #[test]
    fn repeated_evaluation_gives_identical_csv() {
        let (cfg, data) = small();
        let ck = Checkpoint::initial(&cfg).unwrap();
        let steps = "2@20".parse().unwrap();
        let a = evaluate_checkpoint(&ck, &data, steps, 1).unwrap().csv();
        let b = evaluate_checkpoint(&ck, &data, steps, 1).unwrap().csv();
        assert_eq!(a, b);
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("scene,epe_all"));
        assert!(lines[5].starts_with("mean,"));
        assert_ne!(a, evaluate_checkpoint(&ck, &data, steps, 2).unwrap().csv());
    }

    #[test]
    fn mismatched_steps_or_weights_are_errors() {
        let (cfg, data) = small();
        let mut ck = Checkpoint::initial(&cfg).unwrap();
        assert!(evaluate_checkpoint(&ck, &data, "2@5".parse().unwrap(), 1).is_err());
        ck.config.denoiser.feature_dim = 16;
        assert!(evaluate_checkpoint(&ck, &data, "2@20".parse().unwrap(), 1).is_err());
        assert!(evaluate(&OracleDenoiser, &[], &cfg, "2@20".parse().unwrap(), 1).is_err());
    }

    #[test]
    fn ablation_routes_by_schedule_length() {
        let (mut cfg, data) = small();
        let dir = tempfile::tempdir().unwrap();
        Checkpoint::initial(&cfg).unwrap().save(dir.path().join("a.dsfc")).unwrap();
        cfg.diffusion.t_train = 5;
        cfg.diffusion.t_sample = 1;
        Checkpoint::initial(&cfg).unwrap().save(dir.path().join("b.dsfc")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let cks = find_checkpoints(dir.path()).unwrap();
        assert_eq!(cks.len(), 2);
        let grid = parse_grid("1@5,2@20").unwrap();
        let rows = ablate_steps(&cks, &grid, &data[..2], 0).unwrap();
        assert!(rows[0].checkpoint.ends_with("b.dsfc"));
        assert!(rows[1].checkpoint.ends_with("a.dsfc"));
        let csv = ablation_csv(&rows);
        assert!(csv.starts_with("steps,epe_all"));
        assert!(csv.lines().nth(1).unwrap().starts_with("1@5,"));
        assert!(ablate_steps(&cks, &parse_grid("1@7").unwrap(), &data, 0).is_err());
        assert!(parse_grid("1@5,x").is_err());
    }
}
