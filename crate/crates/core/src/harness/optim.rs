//! Learning-rate schedule and the decoupled-weight-decay Adam optimizer.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::ParamStore;

const WARMUP_FRACTION: f64 = 0.1;
const INITIAL_DIV: f64 = 25.0;
const FINAL_DIV: f64 = 1e4;

/// One-cycle schedule: linear warmup from `peak/25` to `peak` over the first
/// 10% of steps, then cosine decay reaching `peak/1e4` at step `total - 1`.
pub fn one_cycle_lr(step: u64, total: u64, peak: f64) -> Result<f64> {
    if step >= total {
        return Err(Error::InvalidArgument(format!("lr step {step} outside schedule of {total}")));
    }
    let (s, last) = (step as f64, (total - 1) as f64);
    let warm = (WARMUP_FRACTION * total as f64).floor();
    let start = peak / INITIAL_DIV;
    if s < warm {
        return Ok(start + (peak - start) * s / warm);
    }
    let end = peak / FINAL_DIV;
    if last <= warm {
        return Ok(peak);
    }
    let frac = (s - warm) / (last - warm);
    Ok(end + 0.5 * (peak - end) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Adam with decoupled weight decay. Moments are kept per parameter name in
/// `f32`, matching the checkpoint record format.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Updates applied so far.
    pub step: u64,
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            ..Self::default()
        }
    }

    /// Applies one update with learning rate `lr`. Parameters without a
    /// gradient are decayed but otherwise untouched.
    pub fn update(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        for (name, w, grad) in params.entries_mut() {
            let n = w.len();
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            if m.len() != n || v.len() != n {
                return Err(Error::shape(name, n, m.len()));
            }
            let decay = 1.0 - lr * self.weight_decay;
            for i in 0..n {
                let mut x = w.data()[i] as f64 * decay;
                if let Some(g) = grad {
                    let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * g[i];
                    let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * g[i] * g[i];
                    m[i] = mi as f32;
                    v[i] = vi as f32;
                    x -= lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                }
                w.data_mut()[i] = x as f32;
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm = 0` disables clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if max_norm > 0.0 && norm > max_norm {
        params.scale_grads(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RealArray;

    #[test]
    fn schedule_endpoints() {
        let (total, peak) = (1000, 4e-4);
        assert_eq!(one_cycle_lr(0, total, peak).unwrap(), peak / 25.0);
        assert_eq!(one_cycle_lr(100, total, peak).unwrap(), peak);
        let last = one_cycle_lr(999, total, peak).unwrap();
        assert!((last / (peak / 1e4) - 1.0).abs() < 1e-12);
        assert!(one_cycle_lr(1000, total, peak).is_err());
        assert_eq!(one_cycle_lr(0, 1, peak).unwrap(), peak);
    }

    #[test]
    fn schedule_shape() {
        let lrs: Vec<f64> = (0..500).map(|s| one_cycle_lr(s, 500, 1.0).unwrap()).collect();
        assert!(lrs[..50].windows(2).all(|w| w[1] > w[0]));
        assert!(lrs[50..].windows(2).all(|w| w[1] < w[0]));
    }

    fn store(x: f32) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", RealArray::new(vec![1], vec![x]).unwrap()).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        for g in [-3.0, 0.01, 7.0] {
            let mut p = store(1.0);
            p.accumulate_grad("w", [g].into_iter()).unwrap();
            let mut opt = AdamW::new(0.0);
            opt.update(&mut p, 0.1).unwrap();
            let expect = 1.0 - 0.1 * g / (g.abs() + 1e-8);
            assert!((p.get("w").unwrap().data()[0] as f64 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_scalar_reference_over_steps() {
        let mut p = store(2.0);
        let mut opt = AdamW::new(0.01);
        let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for t in 1..=20 {
            let g = 2.0 * x;
            p.zero_grads();
            p.accumulate_grad("w", [2.0 * p.get("w").unwrap().data()[0] as f64].into_iter()).unwrap();
            opt.update(&mut p, 0.05).unwrap();
            x *= 1.0 - 0.05 * 0.01;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            x -= 0.05 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        assert!((p.get("w").unwrap().data()[0] as f64 - x).abs() < 1e-4);
        assert!(x.abs() < 2.0);
    }

    #[test]
    fn clipping() {
        let mut p = store(0.0);
        p.accumulate_grad("w", [10.0].into_iter()).unwrap();
        assert_eq!(clip_grad_norm(&mut p, 1.0), 10.0);
        assert!((p.grad_norm() - 1.0).abs() < 1e-12);
        assert_eq!(clip_grad_norm(&mut p, 5.0), p.grad_norm());
    }
}
