//! Central-difference check of the full two-stage denoiser and loss.
//!
//! cargo run --release --example gradient_check

use diffsf::denoiser::{init_params, DenoiserConfig, SceneLoss};
use diffsf::numerics::{grad_check, RngStream};
use diffsf::objective::LossConfig;
use diffsf::pointcloud::{generate_scene, FlowField, SceneGenConfig};

fn main() -> diffsf::Result<()> {
    let cfg = DenoiserConfig {
        feature_dim: 16,
        knn_k: 16,
        n_global_cross_layers: 2,
        n_edgeconv_layers: 2,
        heads: 1,
    };
    let scene_cfg = SceneGenConfig {
        n1: 16,
        n2: 16,
        ..SceneGenConfig::default()
    };
    let mut rng = RngStream::new(3);
    let pair = generate_scene(&scene_cfg, &mut rng)?;
    let noise: Vec<[f32; 3]> = (0..16).map(|_| [0; 3].map(|_: i32| rng.normal() as f32)).collect();
    let objective = SceneLoss {
        cfg: cfg.clone(),
        pair,
        v_t: FlowField::from_vectors(&noise)?,
        loss: LossConfig::default(),
    };

    // Move weights off the zero-bias init so no unit sits exactly on a kink.
    let mut params = init_params(&cfg, 1)?;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for n in &names {
        for w in params.get_mut(n).unwrap().data_mut() {
            *w += 0.1 * (rng.uniform() as f32 - 0.5);
        }
    }

    for eps in [1e-3, 1e-4, 1e-5] {
        let report = grad_check(&objective, &params, eps, 1e-3, 50, &mut RngStream::new(9))?;
        println!("eps {eps:.0e}: max relative error {:.2e} over {} coordinates", report.max_rel_err, report.coords.len());
    }
    Ok(())
}
