//! Multi-hypothesis sampling, per-point uncertainty, uncertainty-error
//! binning and outlier retrieval curves.

use std::fmt::Write as _;

use crate::diffusion::{sample_flow, DiffusionConfig, FlowDenoiser, SamplerKind, StepSpec};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::objective::{endpoint_errors, OUTLIER_EPE};
use crate::pointcloud::{FlowField, ScenePair};

/// `K` sampled flows with their mean and per-point pooled std.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisSet {
    pub hypotheses: Vec<FlowField>,
    pub mean: FlowField,
    /// `sqrt(mean over xyz of the K-1 sample variance)` per point.
    pub std: Vec<f64>,
}

impl HypothesisSet {
    pub fn from_hypotheses(hypotheses: Vec<FlowField>) -> Result<Self> {
        let k = hypotheses.len();
        if k < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 hypotheses, got {k}")));
        }
        let n = hypotheses[0].len();
        if let Some(h) = hypotheses.iter().find(|h| h.len() != n) {
            return Err(Error::shape("hypothesis rows", n, h.len()));
        }
        let data: Vec<Vec<f64>> = hypotheses.iter().map(FlowField::to_f64).collect();
        let mut mean = vec![0.0; 3 * n];
        for h in &data {
            mean.iter_mut().zip(h).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= k as f64);
        let m = &mean;
        let std = (0..n)
            .map(|i| {
                let ss: f64 = data
                    .iter()
                    .flat_map(|h| (0..3).map(move |c| (h[3 * i + c] - m[3 * i + c]).powi(2)))
                    .sum();
                (ss / (3.0 * (k - 1) as f64)).sqrt()
            })
            .collect();
        Ok(Self {
            mean: FlowField::from_f64(n, &mean)?,
            hypotheses,
            std,
        })
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

/// Seed of hypothesis `index`.
pub fn hypothesis_seed(root_seed: u64, index: usize) -> u64 {
    root_seed ^ index as u64
}

/// `k` reverse-process runs that differ only in their random stream.
pub fn sample_hypotheses(
    den: &dyn FlowDenoiser,
    pair: &ScenePair,
    cfg: &DiffusionConfig,
    sampler: SamplerKind,
    steps: StepSpec,
    k: usize,
    root_seed: u64,
) -> Result<HypothesisSet> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 hypotheses, got {k}")));
    }
    let hyps = (0..k)
        .map(|i| {
            let mut rng = RngStream::new(hypothesis_seed(root_seed, i));
            sample_flow(den, pair, cfg, sampler, steps, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    HypothesisSet::from_hypotheses(hyps)
}

/// The EPE intervals of the reference plot: steps of 0.05 m up to 0.8 m,
/// then everything above.
pub fn default_bin_edges() -> Vec<f64> {
    (0..=16).map(|i| i as f64 / 20.0).chain([f64::INFINITY]).collect()
}

/// Uncertainty thresholds `0.0001, 0.0002, .., 0.0020` times `flow_scale`.
pub fn default_pr_thresholds(flow_scale: f64) -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 1e4 * flow_scale).collect()
}

/// `n` thresholds at evenly spaced quantiles of the observed uncertainties,
/// for models whose uncertainty scale differs from the default grid.
pub fn quantile_thresholds(unc: &[f64], n: usize) -> Vec<f64> {
    if unc.is_empty() || n == 0 {
        return Vec::new();
    }
    let mut sorted = unc.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = (0..n)
        .map(|i| sorted[((i as f64 + 0.5) / n as f64 * (sorted.len() - 1) as f64).round() as usize])
        .collect();
    out.dedup();
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UncertaintyBin {
    pub epe_lo: f64,
    pub epe_hi: f64,
    /// Absent for empty bins.
    pub mean_unc: Option<f64>,
    pub std_unc: Option<f64>,
    pub count: usize,
}

fn check_ascending(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| x.is_nan()) || v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("{what} must be strictly ascending")));
    }
    Ok(())
}

/// Mean and population std of `unc` over the points whose `epe` falls in
/// each half-open interval `[edges[i], edges[i+1])`.
pub fn bin_uncertainty(epe: &[f64], unc: &[f64], edges: &[f64]) -> Result<Vec<UncertaintyBin>> {
    if epe.len() != unc.len() {
        return Err(Error::shape("bin_uncertainty", epe.len(), unc.len()));
    }
    if edges.len() < 2 {
        return Err(Error::InvalidArgument("need at least two bin edges".into()));
    }
    check_ascending("bin edges", edges)?;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); edges.len() - 1];
    for (&e, &u) in epe.iter().zip(unc) {
        if let Some(b) = edges.windows(2).position(|w| e >= w[0] && e < w[1]) {
            members[b].push(u);
        }
    }
    if members.iter().all(Vec::is_empty) {
        return Err(Error::InvalidArgument("no points fall inside the bin edges".into()));
    }
    Ok(members
        .iter()
        .enumerate()
        .map(|(b, m)| {
            let n = m.len() as f64;
            let mean = (!m.is_empty()).then(|| m.iter().sum::<f64>() / n);
            UncertaintyBin {
                epe_lo: edges[b],
                epe_hi: edges[b + 1],
                mean_unc: mean,
                std_unc: mean.map(|mu| (m.iter().map(|u| (u - mu).powi(2)).sum::<f64>() / n).sqrt()),
                count: m.len(),
            }
        })
        .collect())
}

/// Bins the hypothesis std by the EPE of the hypothesis mean.
pub fn uncertainty_error_bins(hyp: &HypothesisSet, gt: &FlowField, edges: &[f64]) -> Result<Vec<UncertaintyBin>> {
    bin_uncertainty(&endpoint_errors(&hyp.mean, gt)?, &hyp.std, edges)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    /// Absent when there are no outliers.
    pub recall: Option<f64>,
    /// Absent when nothing is retrieved.
    pub precision: Option<f64>,
}

/// Retrieval of outliers (`epe > epe_threshold`) by `unc > threshold`.
pub fn pr_curve(epe: &[f64], unc: &[f64], epe_threshold: f64, thresholds: &[f64]) -> Result<Vec<PrPoint>> {
    if epe.len() != unc.len() {
        return Err(Error::shape("pr_curve", epe.len(), unc.len()));
    }
    check_ascending("uncertainty thresholds", thresholds)?;
    let outlier: Vec<bool> = epe.iter().map(|&e| e > epe_threshold).collect();
    let n_out = outlier.iter().filter(|&&o| o).count();
    Ok(thresholds
        .iter()
        .map(|&u| {
            let (mut retrieved, mut hit) = (0usize, 0usize);
            for (&s, &o) in unc.iter().zip(&outlier) {
                if s > u {
                    retrieved += 1;
                    hit += o as usize;
                }
            }
            PrPoint {
                threshold: u,
                recall: (n_out > 0).then(|| hit as f64 / n_out as f64),
                precision: (retrieved > 0).then(|| hit as f64 / retrieved as f64),
            }
        })
        .collect())
}

pub fn outlier_pr_curve(hyp: &HypothesisSet, pair: &ScenePair, epe_threshold: f64, thresholds: &[f64]) -> Result<Vec<PrPoint>> {
    pr_curve(&endpoint_errors(&hyp.mean, &pair.gt_flow)?, &hyp.std, epe_threshold, thresholds)
}

/// The outlier definition used by default.
pub const DEFAULT_OUTLIER_EPE: f64 = OUTLIER_EPE;

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument("spearman needs two equal-length samples of size >= 2".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::InvalidArgument("spearman undefined for a constant sample".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn bins_csv(bins: &[UncertaintyBin]) -> String {
    let mut s = String::from("epe_lo,epe_hi,mean_unc,std_unc,count\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{},{},{}", b.epe_lo, b.epe_hi, cell(b.mean_unc), cell(b.std_unc), b.count);
    }
    s
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut s = String::from("threshold,recall,precision\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.threshold, cell(p.recall), cell(p.precision));
    }
    s
}
