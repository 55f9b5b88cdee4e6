//! Trains the reduced model on synthetic rigid scenes and reports held-out
//! metrics.
//!
//! cargo run --release --example train_toy -- [iterations] [out_dir]

use std::time::Instant;

use diffsf::harness::{evaluate_checkpoint, generate_dataset, Config, Trainer};

fn main() -> diffsf::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = Config::toy();
    if let Some(n) = args.next() {
        cfg.train.iterations = n.parse().expect("iterations");
    }
    let out = args.next();
    let train_set = generate_dataset(&cfg.scene, 2000, 1)?;
    let test_set = generate_dataset(&cfg.scene, 20, 2)?;

    let mut trainer = Trainer::new(&cfg, &train_set)?;
    if let Some(dir) = &out {
        trainer = trainer.with_out_dir(dir)?;
    }
    let start = Instant::now();
    let log_every = cfg.train.log_every;
    trainer.run(&mut |r| {
        if r.iteration % log_every == 0 {
            println!(
                "iter {:5}  lr {:.2e}  loss {:.4}  |g| {:.3}  {:.1}s",
                r.iteration,
                r.lr,
                r.loss,
                r.grad_norm,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    let ck = trainer.into_state();
    let steps = format!("{}@{}", cfg.diffusion.t_sample, cfg.diffusion.t_train).parse()?;
    let report = evaluate_checkpoint(&ck, &test_set, steps, 0)?;
    let m = report.mean.all;
    println!("held-out EPE3D {:.4}  ACC_S {:.3}  ACC_R {:.3}  outliers {:.3}", m.epe3d, m.acc_s, m.acc_r, m.outliers);
    Ok(())
}
