//! Flat `key = value` configuration files.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::denoiser::DenoiserConfig;
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::objective::LossConfig;
use crate::pointcloud::{SceneGenConfig, ShapeFamily, Subsampling};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub points_train: usize,
    pub points_eval: usize,
    pub subsampling: Subsampling,
    pub seed: u64,
    /// Seed of the initial weights.
    pub init_seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 4,
            peak_lr: 4e-4,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            points_train: 256,
            points_eval: 256,
            subsampling: Subsampling::Farthest,
            seed: 0,
            init_seed: 0,
            checkpoint_every: 1000,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.points_train == 0 || self.points_eval == 0 {
            return Err(Error::Config("train counts must be positive".into()));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config("train.peak_lr must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.grad_clip >= 0.0) {
            return Err(Error::Config("train.weight_decay and train.grad_clip must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Everything a run needs, grouped by namespace.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub scene: SceneGenConfig,
    pub diffusion: DiffusionConfig,
    pub denoiser: DenoiserConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{raw}`")))
}

fn parse_subsampling(key: &str, raw: &str) -> Result<Subsampling> {
    match raw {
        "fps" => Ok(Subsampling::Farthest),
        "random" => Ok(Subsampling::Random),
        _ => Err(Error::Config(format!("`{key}`: expected fps or random, got `{raw}`"))),
    }
}

fn subsampling_name(s: Subsampling) -> &'static str {
    match s {
        Subsampling::Farthest => "fps",
        Subsampling::Random => "random",
    }
}

/// Expands to the setter match and the writer for every key, so the two
/// cannot drift apart.
macro_rules! config_keys {
    ($( $key:literal => $($field:ident).+ : $kind:ident ),+ $(,)?) => {
        impl Config {
            fn set(&mut self, key: &str, raw: &str) -> Result<()> {
                match key {
                    $( $key => { self.$($field).+ = config_keys!(@parse $kind, key, raw); } )+
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            /// Canonical text form listing every key.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $( let _ = writeln!(s, "{} = {}", $key, config_keys!(@show $kind, self.$($field).+)); )+
                s
            }
        }
    };
    (@parse plain, $key:ident, $raw:ident) => { parse_value($key, $raw)? };
    (@parse shape, $key:ident, $raw:ident) => { ShapeFamily::parse($raw)? };
    (@parse sub, $key:ident, $raw:ident) => { parse_subsampling($key, $raw)? };
    (@show plain, $v:expr) => { $v };
    (@show shape, $v:expr) => { $v.name() };
    (@show sub, $v:expr) => { subsampling_name($v) };
}

config_keys! {
    "scene.n1" => scene.n1: plain,
    "scene.n2" => scene.n2: plain,
    "scene.n_parts" => scene.n_parts: plain,
    "scene.max_rotation_deg" => scene.max_rotation_deg: plain,
    "scene.max_translation_m" => scene.max_translation_m: plain,
    "scene.noise_sigma_m" => scene.noise_sigma_m: plain,
    "scene.occlusion_fraction" => scene.occlusion_fraction: plain,
    "scene.shape" => scene.shape: shape,
    "diffusion.t_train" => diffusion.t_train: plain,
    "diffusion.t_sample" => diffusion.t_sample: plain,
    "diffusion.sampler" => diffusion.sampler: plain,
    "diffusion.schedule" => diffusion.schedule: plain,
    "diffusion.flow_scale" => diffusion.flow_scale: plain,
    "diffusion.reverse_variance" => diffusion.reverse_variance: plain,
    "diffusion.eval_hypotheses" => diffusion.eval_hypotheses: plain,
    "denoiser.feature_dim" => denoiser.feature_dim: plain,
    "denoiser.knn_k" => denoiser.knn_k: plain,
    "denoiser.n_global_cross_layers" => denoiser.n_global_cross_layers: plain,
    "denoiser.n_edgeconv_layers" => denoiser.n_edgeconv_layers: plain,
    "denoiser.heads" => denoiser.heads: plain,
    "loss.epsilon" => loss.epsilon: plain,
    "loss.q_exponent" => loss.q_exponent: plain,
    "loss.supervise_init" => loss.supervise_init: plain,
    "loss.init_weight" => loss.init_weight: plain,
    "train.iterations" => train.iterations: plain,
    "train.batch_size" => train.batch_size: plain,
    "train.peak_lr" => train.peak_lr: plain,
    "train.weight_decay" => train.weight_decay: plain,
    "train.grad_clip" => train.grad_clip: plain,
    "train.points_train" => train.points_train: plain,
    "train.points_eval" => train.points_eval: plain,
    "train.subsampling" => train.subsampling: sub,
    "train.seed" => train.seed: plain,
    "train.init_seed" => train.init_seed: plain,
    "train.checkpoint_every" => train.checkpoint_every: plain,
    "train.log_every" => train.log_every: plain,
}

impl Config {
    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = std::collections::HashSet::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: key `{k}` repeated", no + 1)));
            }
            cfg.set(k, v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.diffusion.validate()?;
        self.denoiser.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }

    /// The reduced model and schedule used for desk-scale runs.
    pub fn toy() -> Self {
        let mut cfg = Config::default();
        cfg.denoiser = DenoiserConfig {
            feature_dim: 32,
            knn_k: 16,
            n_global_cross_layers: 1,
            n_edgeconv_layers: 3,
            heads: 1,
        };
        cfg
    }
}
