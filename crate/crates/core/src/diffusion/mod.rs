//! Noise schedules, the closed-form forward process, the forward-process
//! posterior, and DDPM/DDIM reverse samplers over flow fields.
//!
//! Flows are diffused in units of `flow_scale` meters: the clean signal is
//! `V_0 = gt / s`, the network sees `V_t * s` and its prediction is divided
//! by `s` before entering the update.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::pointcloud::{FlowField, ScenePair};

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

/// Variance of the noise injected by each stochastic reverse step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReverseVariance {
    /// Unit variance, `z ~ N(0, I)`.
    Unit,
    /// Posterior variance `beta_tilde_t`.
    Posterior,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($variant:ident => $word:literal),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($word => Ok(Self::$variant),)+
                    other => Err(Error::Config(format!("unknown {} `{other}`", $what))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $word,)+ })
            }
        }
    };
}

keyword_enum!(ScheduleKind, "schedule", Cosine => "cosine", Linear => "linear");
keyword_enum!(SamplerKind, "sampler", Ddpm => "ddpm", Ddim => "ddim");
keyword_enum!(ReverseVariance, "reverse variance", Unit => "unit", Posterior => "posterior");

/// Tables indexed by time step; index 0 of `beta`, `alpha` and
/// `beta_tilde` is unused and `alpha_bar[0] = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

fn from_alpha_bar_targets(kind: ScheduleKind, targets: &[f64], max_beta: f64) -> NoiseSchedule {
    let betas: Vec<f64> = targets
        .windows(2)
        .map(|w| (1.0 - w[1] / w[0]).min(max_beta))
        .collect();
    NoiseSchedule::from_betas(kind, &betas)
}

pub fn make_schedule(t: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if t < 1 {
        return Err(Error::InvalidArgument("schedule needs at least one step".into()));
    }
    Ok(match kind {
        ScheduleKind::Cosine => {
            let f = |s: usize| {
                let x = (s as f64 / t as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
            };
            let targets: Vec<f64> = (0..=t).map(|s| f(s) / f(0)).collect();
            from_alpha_bar_targets(kind, &targets, MAX_BETA)
        }
        ScheduleKind::Linear => {
            let scale = 1000.0 / t as f64;
            let (lo, hi) = (1e-4 * scale, 0.02 * scale);
            let betas: Vec<f64> = (0..t)
                .map(|i| {
                    let frac = if t == 1 { 0.0 } else { i as f64 / (t - 1) as f64 };
                    (lo + frac * (hi - lo)).min(MAX_BETA)
                })
                .collect();
            NoiseSchedule::from_betas(kind, &betas)
        }
    })
}

impl NoiseSchedule {
    fn from_betas(kind: ScheduleKind, betas: &[f64]) -> Self {
        let n = betas.len();
        let mut beta = vec![0.0; n + 1];
        let mut alpha = vec![1.0; n + 1];
        let mut alpha_bar = vec![1.0; n + 1];
        let mut beta_tilde = vec![0.0; n + 1];
        for t in 1..=n {
            beta[t] = betas[t - 1];
            alpha[t] = 1.0 - beta[t];
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
            beta_tilde[t] = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
        }
        Self {
            kind,
            beta,
            alpha,
            alpha_bar,
            beta_tilde,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.steps() {
            return Err(Error::InvalidArgument(format!("time step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// The `n`-step schedule visiting `alpha_bar` at [`timestep_subsequence`].
    pub fn respaced(&self, n: usize) -> Result<NoiseSchedule> {
        let taus = timestep_subsequence(self.steps(), n)?;
        let targets: Vec<f64> = std::iter::once(1.0).chain(taus.iter().map(|&t| self.alpha_bar[t])).collect();
        Ok(from_alpha_bar_targets(self.kind, &targets, 1.0))
    }

    /// Coefficients `(c_0, c_t)` of the posterior mean
    /// `c_0 * v0_hat + c_t * v_t`.
    pub fn posterior_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check_t(t)?;
        let denom = 1.0 - self.alpha_bar[t];
        Ok((
            self.alpha_bar[t - 1].sqrt() * self.beta[t] / denom,
            self.alpha[t].sqrt() * (1.0 - self.alpha_bar[t - 1]) / denom,
        ))
    }
}

/// `n` evenly spaced steps of `1..=t_max`, ascending, ending at `t_max`:
/// `tau_i = ceil(i * t_max / n)`.
pub fn timestep_subsequence(t_max: usize, n: usize) -> Result<Vec<usize>> {
    if n < 1 || n > t_max {
        return Err(Error::InvalidArgument(format!("step count {n} outside 1..={t_max}")));
    }
    Ok((1..=n).map(|i| (i * t_max).div_ceil(n)).collect())
}

/// `a@b`: sample with `a` steps from a model trained with `b` steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepSpec {
    pub sample: usize,
    pub train: usize,
}

impl FromStr for StepSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse {
            what: "step spec".into(),
            reason: format!("expected A@B with 1 <= A <= B, got `{s}`"),
        };
        let (a, b) = s.trim().split_once('@').ok_or_else(bad)?;
        let sample: usize = a.trim().parse().map_err(|_| bad())?;
        let train: usize = b.trim().parse().map_err(|_| bad())?;
        if sample < 1 || sample > train {
            return Err(bad());
        }
        Ok(Self { sample, train })
    }
}

impl fmt::Display for StepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.sample, self.train)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionConfig {
    pub t_train: usize,
    pub t_sample: usize,
    pub sampler: SamplerKind,
    pub schedule: ScheduleKind,
    /// Meters per diffusion unit.
    pub flow_scale: f64,
    pub reverse_variance: ReverseVariance,
    /// Hypotheses averaged into an evaluation point estimate.
    pub eval_hypotheses: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            t_train: 20,
            t_sample: 2,
            sampler: SamplerKind::Ddim,
            schedule: ScheduleKind::Cosine,
            flow_scale: 1.0,
            reverse_variance: ReverseVariance::Unit,
            eval_hypotheses: 1,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_sample < 1 || self.t_sample > self.t_train {
            return Err(Error::Config("diffusion steps need 1 <= t_sample <= t_train".into()));
        }
        if !(self.flow_scale > 0.0 && self.flow_scale.is_finite()) {
            return Err(Error::Config("diffusion.flow_scale must be positive".into()));
        }
        if self.eval_hypotheses < 1 {
            return Err(Error::Config("diffusion.eval_hypotheses must be at least 1".into()));
        }
        Ok(())
    }

    pub fn train_schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.t_train, self.schedule)
    }
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(what, b, a));
    }
    Ok(())
}

/// `sqrt(alpha_bar_t) v0 + sqrt(1 - alpha_bar_t) eps`.
pub fn q_sample(v0: &FlowField, t: usize, sched: &NoiseSchedule, eps: &FlowField) -> Result<FlowField> {
    check_len("q_sample noise", eps.len(), v0.len())?;
    let out = q_sample_f64(&v0.to_f64(), t, sched, &eps.to_f64())?;
    FlowField::from_f64(v0.len(), &out)
}

pub(crate) fn q_sample_f64(v0: &[f64], t: usize, sched: &NoiseSchedule, eps: &[f64]) -> Result<Vec<f64>> {
    sched.check_t(t)?;
    let (a, b) = (sched.alpha_bar(t).sqrt(), (1.0 - sched.alpha_bar(t)).sqrt());
    Ok(v0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

pub fn posterior_mean(v_t: &FlowField, v0_hat: &FlowField, t: usize, sched: &NoiseSchedule) -> Result<FlowField> {
    check_len("posterior_mean", v0_hat.len(), v_t.len())?;
    let out = posterior_mean_f64(&v_t.to_f64(), &v0_hat.to_f64(), t, sched)?;
    FlowField::from_f64(v_t.len(), &out)
}

fn posterior_mean_f64(v_t: &[f64], v0_hat: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let (c0, ct) = sched.posterior_coefficients(t)?;
    Ok(v0_hat.iter().zip(v_t).map(|(x0, xt)| c0 * x0 + ct * xt).collect())
}

/// Anything that maps a noisy flow (meters) and a scene to a clean flow
/// estimate (meters).
pub trait FlowDenoiser {
    fn predict(&self, v_t: &FlowField, pair: &ScenePair) -> Result<FlowField>;
}

impl FlowDenoiser for Denoiser {
    fn predict(&self, v_t: &FlowField, pair: &ScenePair) -> Result<FlowField> {
        Ok(self.forward(v_t, pair)?.1)
    }
}

/// Returns the ground-truth flow regardless of its input.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleDenoiser;

impl FlowDenoiser for OracleDenoiser {
    fn predict(&self, _v_t: &FlowField, pair: &ScenePair) -> Result<FlowField> {
        Ok(pair.gt_flow.clone())
    }
}

/// Wraps a denoiser and counts calls.
pub struct CountingDenoiser<'a> {
    inner: &'a dyn FlowDenoiser,
    calls: Cell<usize>,
}

impl<'a> CountingDenoiser<'a> {
    pub fn new(inner: &'a dyn FlowDenoiser) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl FlowDenoiser for CountingDenoiser<'_> {
    fn predict(&self, v_t: &FlowField, pair: &ScenePair) -> Result<FlowField> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict(v_t, pair)
    }
}

fn predict_unit(den: &dyn FlowDenoiser, v: &[f64], pair: &ScenePair, scale: f64) -> Result<Vec<f64>> {
    let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
    let pred = den.predict(&FlowField::from_f64(pair.n1(), &scaled)?, pair)?;
    check_len("denoiser output", pred.len(), pair.n1())?;
    Ok(pred.to_f64().iter().map(|x| x / scale).collect())
}

fn finish(v: &[f64], pair: &ScenePair, scale: f64) -> Result<FlowField> {
    let out: Vec<f64> = v.iter().map(|x| x * scale).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sampled flow".into()));
    }
    FlowField::from_f64(pair.n1(), &out)
}

fn initial_noise(n: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut v = vec![0.0; 3 * n];
    rng.fill_normal(&mut v);
    v
}

/// Ancestral sampling through every step of `sched`.
pub fn sample_ddpm(
    den: &dyn FlowDenoiser,
    pair: &ScenePair,
    sched: &NoiseSchedule,
    flow_scale: f64,
    variance: ReverseVariance,
    rng: &mut RngStream,
) -> Result<FlowField> {
    let mut v = initial_noise(pair.n1(), rng);
    let mut z = vec![0.0; v.len()];
    for t in (1..=sched.steps()).rev() {
        let v0 = predict_unit(den, &v, pair, flow_scale)?;
        v = posterior_mean_f64(&v, &v0, t, sched)?;
        if t > 1 {
            let sigma = match variance {
                ReverseVariance::Unit => 1.0,
                ReverseVariance::Posterior => sched.beta_tilde(t).sqrt(),
            };
            rng.fill_normal(&mut z);
            v.iter_mut().zip(&z).for_each(|(x, e)| *x += sigma * e);
        }
    }
    finish(&v, pair, flow_scale)
}

/// Deterministic (eta = 0) sampling over `n_steps` steps of `sched`.
pub fn sample_ddim(
    den: &dyn FlowDenoiser,
    pair: &ScenePair,
    sched: &NoiseSchedule,
    flow_scale: f64,
    n_steps: usize,
    rng: &mut RngStream,
) -> Result<FlowField> {
    let taus = timestep_subsequence(sched.steps(), n_steps)?;
    let mut v = initial_noise(pair.n1(), rng);
    for i in (0..taus.len()).rev() {
        let (t, t_next) = (taus[i], if i == 0 { 0 } else { taus[i - 1] });
        let v0 = predict_unit(den, &v, pair, flow_scale)?;
        let (ab, ab_next) = (sched.alpha_bar(t), sched.alpha_bar(t_next));
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (na, nb) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
        for (x, x0) in v.iter_mut().zip(&v0) {
            let eps = (*x - sa * x0) / sb;
            *x = na * x0 + nb * eps;
        }
    }
    finish(&v, pair, flow_scale)
}

/// One reverse-process sample with `steps.sample` steps from a model
/// trained on the `steps.train`-step schedule of `cfg.schedule`.
///
/// DDPM with fewer steps than training runs on the respaced schedule.
pub fn sample_flow(
    den: &dyn FlowDenoiser,
    pair: &ScenePair,
    cfg: &DiffusionConfig,
    sampler: SamplerKind,
    steps: StepSpec,
    rng: &mut RngStream,
) -> Result<FlowField> {
    let train = make_schedule(steps.train, cfg.schedule)?;
    match sampler {
        SamplerKind::Ddim => sample_ddim(den, pair, &train, cfg.flow_scale, steps.sample, rng),
        SamplerKind::Ddpm => {
            let sched = if steps.sample == steps.train {
                train
            } else {
                train.respaced(steps.sample)?
            };
            sample_ddpm(den, pair, &sched, cfg.flow_scale, cfg.reverse_variance, rng)
        }
    }
}
