//! Robust training loss and endpoint-error metrics.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Mat, Scalar, Var};
use crate::pointcloud::{FlowField, ScenePair};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub epsilon: f64,
    pub q_exponent: f64,
    /// Also penalize the stage-1 estimate.
    pub supervise_init: bool,
    pub init_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            q_exponent: 0.4,
            supervise_init: true,
            init_weight: 1.0,
        }
    }
}

impl LossConfig {
    /// Accepts `epsilon = 0` only together with `q = 1`, where the loss is plain L1.
    pub fn validate(&self) -> Result<()> {
        let eps_ok = self.epsilon > 0.0 || (self.epsilon == 0.0 && self.q_exponent == 1.0);
        if !eps_ok || !self.epsilon.is_finite() {
            return Err(Error::Config("loss.epsilon must be positive".into()));
        }
        if !(self.q_exponent > 0.0 && self.q_exponent <= 1.0) {
            return Err(Error::Config("loss.q_exponent must lie in (0, 1]".into()));
        }
        if !(self.init_weight >= 0.0 && self.init_weight.is_finite()) {
            return Err(Error::Config("loss.init_weight must be nonnegative".into()));
        }
        Ok(())
    }
}

fn check_rows(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(what, b, a));
    }
    Ok(())
}

/// `sum_i (|pred_i - gt_i|_1 + eps)^q`.
pub fn robust_loss(pred: &FlowField, gt: &FlowField, cfg: &LossConfig) -> Result<f64> {
    check_rows("robust_loss", pred.len(), gt.len())?;
    let (p, g) = (pred.vectors().data(), gt.vectors().data());
    Ok(p.chunks_exact(3)
        .zip(g.chunks_exact(3))
        .map(|(a, b)| {
            let l1: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum();
            (l1 + cfg.epsilon).powf(cfg.q_exponent)
        })
        .sum())
}

pub fn total_loss(v_init: &FlowField, v_pred: &FlowField, gt: &FlowField, cfg: &LossConfig) -> Result<f64> {
    let mut l = robust_loss(v_pred, gt, cfg)?;
    if cfg.supervise_init {
        l += cfg.init_weight * robust_loss(v_init, gt, cfg)?;
    }
    Ok(l)
}

/// Graph form of [`robust_loss`] for an `[N x 3]` prediction node.
pub fn robust_loss_graph<S: Scalar>(g: &mut Graph<S>, pred: Var, gt: &FlowField, cfg: &LossConfig) -> Result<Var> {
    let (rows, cols) = g.shape(pred);
    if cols != 3 {
        return Err(Error::shape("robust_loss prediction columns", 3, cols));
    }
    check_rows("robust_loss", rows, gt.len())?;
    let target = g.input(Mat::from_f64(rows, 3, &gt.to_f64()));
    let diff = g.sub(pred, target);
    let abs = g.abs(diff);
    let l1 = g.sum_cols(abs);
    let shifted = g.add_scalar(l1, cfg.epsilon);
    let per_point = if cfg.q_exponent == 1.0 {
        shifted
    } else {
        g.pow_scalar(shifted, cfg.q_exponent)
    };
    Ok(g.sum_all(per_point))
}

pub fn total_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    v_init: Var,
    v_pred: Var,
    gt: &FlowField,
    cfg: &LossConfig,
) -> Result<Var> {
    let main = robust_loss_graph(g, v_pred, gt, cfg)?;
    if !cfg.supervise_init {
        return Ok(main);
    }
    let init = robust_loss_graph(g, v_init, gt, cfg)?;
    let init = g.scale(init, cfg.init_weight);
    Ok(g.add(main, init))
}

pub const ACC_S_THRESHOLD: f64 = 0.05;
pub const ACC_R_THRESHOLD: f64 = 0.10;
pub const OUTLIER_EPE: f64 = 0.30;
pub const OUTLIER_REL: f64 = 0.10;
const REL_FLOOR: f64 = 1e-8;

/// Metric values over one subset of points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSplit {
    pub epe3d: f64,
    pub acc_s: f64,
    pub acc_r: f64,
    pub outliers: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub all: MetricSplit,
    /// Absent when no point is valid.
    pub noc: Option<MetricSplit>,
}

/// Per-point endpoint errors `|pred_i - gt_i|_2`.
pub fn endpoint_errors(pred: &FlowField, gt: &FlowField) -> Result<Vec<f64>> {
    check_rows("endpoint_errors", pred.len(), gt.len())?;
    Ok(pred
        .vectors()
        .data()
        .chunks_exact(3)
        .zip(gt.vectors().data().chunks_exact(3))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>().sqrt())
        .collect())
}

fn split(errs: &[(f64, f64)]) -> Option<MetricSplit> {
    if errs.is_empty() {
        return None;
    }
    let n = errs.len() as f64;
    let frac = |f: &dyn Fn(f64, f64) -> bool| errs.iter().filter(|(e, r)| f(*e, *r)).count() as f64 / n;
    Some(MetricSplit {
        epe3d: errs.iter().map(|(e, _)| e).sum::<f64>() / n,
        acc_s: frac(&|e, r| e < ACC_S_THRESHOLD || r < ACC_S_THRESHOLD),
        acc_r: frac(&|e, r| e < ACC_R_THRESHOLD || r < ACC_R_THRESHOLD),
        outliers: frac(&|e, r| e > OUTLIER_EPE || r > OUTLIER_REL),
    })
}

pub fn metrics(pred: &FlowField, pair: &ScenePair) -> Result<MetricReport> {
    let errs = endpoint_errors(pred, &pair.gt_flow)?;
    let pairs: Vec<(f64, f64)> = errs
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, e / pair.gt_flow.norm(i).max(REL_FLOOR)))
        .collect();
    let valid: Vec<(f64, f64)> = pairs
        .iter()
        .zip(&pair.valid_mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| *p)
        .collect();
    Ok(MetricReport {
        all: split(&pairs).expect("point clouds are nonempty"),
        noc: split(&valid),
    })
}

impl MetricSplit {
    fn mean(items: &[MetricSplit]) -> Option<MetricSplit> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let avg = |f: fn(&MetricSplit) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(MetricSplit {
            epe3d: avg(|m| m.epe3d),
            acc_s: avg(|m| m.acc_s),
            acc_r: avg(|m| m.acc_r),
            outliers: avg(|m| m.outliers),
        })
    }

    fn fields(&self) -> [f64; 4] {
        [self.epe3d, self.acc_s, self.acc_r, self.outliers]
    }
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "epe_all,accs_all,accr_all,out_all,epe_noc,accs_noc,accr_noc,out_noc";

    /// Macro average over scenes; the non-occluded split averages over the
    /// scenes where it is present.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        let all: Vec<_> = reports.iter().map(|r| r.all).collect();
        let noc: Vec<_> = reports.iter().filter_map(|r| r.noc).collect();
        Ok(MetricReport {
            all: MetricSplit::mean(&all).ok_or_else(|| Error::InvalidArgument("no reports to average".into()))?,
            noc: MetricSplit::mean(&noc),
        })
    }

    /// One CSV row without a trailing newline; absent values are empty cells.
    pub fn csv_row(&self) -> String {
        let mut cells: Vec<String> = self.all.fields().iter().map(|v| format!("{v}")).collect();
        match &self.noc {
            Some(s) => cells.extend(s.fields().iter().map(|v| format!("{v}"))),
            None => cells.extend(std::iter::repeat(String::new()).take(4)),
        }
        cells.join(",")
    }
}
