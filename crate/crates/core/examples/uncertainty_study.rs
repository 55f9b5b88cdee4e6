//! Multi-hypothesis uncertainty of a checkpoint: EPE-binned std, outlier
//! retrieval and the rank correlation between std and error.
//!
//! cargo run --release --example uncertainty_study -- CKPT [K]

use diffsf::diffusion::StepSpec;
use diffsf::harness::{generate_dataset, uncertainty_study, Checkpoint};
use diffsf::uncertainty::{bins_csv, pr_csv};

fn main() -> diffsf::Result<()> {
    let mut args = std::env::args().skip(1);
    let ck = Checkpoint::load(args.next().expect("usage: uncertainty_study CKPT [K]"))?;
    let k: usize = args.next().map_or(20, |s| s.parse().expect("K"));
    let steps = StepSpec {
        sample: ck.config.diffusion.t_sample,
        train: ck.config.diffusion.t_train,
    };
    let scenes = generate_dataset(&ck.config.scene, 10, 99)?;
    let study = uncertainty_study(&ck.denoiser()?, &scenes, &ck.config, steps, k, &[], 0)?;
    println!("{} points, spearman(std, epe) = {:?}\n", study.epe.len(), study.spearman);
    print!("{}\n{}", bins_csv(&study.bins), pr_csv(&study.pr));
    Ok(())
}
