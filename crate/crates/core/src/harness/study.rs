//! Dataset-level uncertainty analysis.

use super::config::Config;
use crate::diffusion::{FlowDenoiser, StepSpec};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::objective::endpoint_errors;
use crate::pointcloud::ScenePair;
use crate::uncertainty::{
    bin_uncertainty, default_bin_edges, pr_curve, sample_hypotheses, spearman, PrPoint, UncertaintyBin,
    DEFAULT_OUTLIER_EPE,
};

/// Per-point EPE of the hypothesis mean and hypothesis std, pooled over a
/// dataset, with the derived summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyStudy {
    pub epe: Vec<f64>,
    pub std: Vec<f64>,
    pub bins: Vec<UncertaintyBin>,
    pub pr: Vec<PrPoint>,
    /// Absent when either sample is constant.
    pub spearman: Option<f64>,
}

/// Draws `k` hypotheses per scene and pools the per-point results. An
/// empty `thresholds` uses 20 quantiles of the observed std.
pub fn uncertainty_study(
    den: &dyn FlowDenoiser,
    dataset: &[ScenePair],
    cfg: &Config,
    steps: StepSpec,
    k: usize,
    thresholds: &[f64],
    seed: u64,
) -> Result<UncertaintyStudy> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("uncertainty dataset is empty".into()));
    }
    let tc = &cfg.train;
    let (mut epe, mut std) = (Vec::new(), Vec::new());
    for (i, pair) in dataset.iter().enumerate() {
        let mut rng = RngStream::derive(seed, i as u64);
        let pair = pair.subsample(tc.points_eval, tc.points_eval, tc.subsampling, &mut rng)?;
        let root = rng.next_u64();
        let d = &cfg.diffusion;
        let h = sample_hypotheses(den, &pair, d, d.sampler, steps, k, root)?;
        epe.extend(endpoint_errors(&h.mean, &pair.gt_flow)?);
        std.extend(h.std);
    }
    let thresholds = if thresholds.is_empty() {
        crate::uncertainty::quantile_thresholds(&std, 20)
    } else {
        thresholds.to_vec()
    };
    Ok(UncertaintyStudy {
        bins: bin_uncertainty(&epe, &std, &default_bin_edges())?,
        pr: pr_curve(&epe, &std, DEFAULT_OUTLIER_EPE, &thresholds)?,
        spearman: spearman(&std, &epe).ok(),
        epe,
        std,
    })
}
