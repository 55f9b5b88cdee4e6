//! DDPM and DDIM sampling with a denoiser that knows the answer: every
//! sampler returns the ground truth, and DDIM spends one network call per
//! sampling step.
//!
//! cargo run --release --example oracle_sampling

use diffsf::diffusion::{
    make_schedule, sample_flow, CountingDenoiser, DiffusionConfig, OracleDenoiser, SamplerKind, ScheduleKind,
};
use diffsf::numerics::RngStream;
use diffsf::objective::metrics;
use diffsf::pointcloud::{generate_scene, SceneGenConfig};

fn main() -> diffsf::Result<()> {
    let pair = generate_scene(&SceneGenConfig::default(), &mut RngStream::new(7))?;
    let sched = make_schedule(20, ScheduleKind::Cosine)?;
    println!("cosine schedule, T = 20");
    for t in [1, 5, 10, 15, 20] {
        println!("  t {t:2}  beta {:.4}  alpha_bar {:.4}", sched.beta(t), sched.alpha_bar(t));
    }

    let cfg = DiffusionConfig::default();
    for sampler in [SamplerKind::Ddpm, SamplerKind::Ddim] {
        for spec in ["1@20", "2@20", "5@20", "20@20"] {
            let counter = CountingDenoiser::new(&OracleDenoiser);
            let flow = sample_flow(&counter, &pair, &cfg, sampler, spec.parse()?, &mut RngStream::new(1))?;
            let m = metrics(&flow, &pair)?;
            println!("{sampler} {spec:>5}: {} calls, EPE3D {:.2e}", counter.calls(), m.all.epe3d);
        }
    }
    Ok(())
}
