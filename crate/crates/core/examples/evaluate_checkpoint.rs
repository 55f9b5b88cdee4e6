//! Scores a checkpoint on fresh synthetic scenes and prints the CSV.
//!
//! cargo run --release --example evaluate_checkpoint -- CKPT [A@B]

use diffsf::diffusion::StepSpec;
use diffsf::harness::{evaluate_checkpoint, generate_dataset, Checkpoint};

fn main() -> diffsf::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().expect("usage: evaluate_checkpoint CKPT [A@B]");
    let ck = Checkpoint::load(&path)?;
    let d = &ck.config.diffusion;
    let steps = match args.next() {
        Some(s) => s.parse()?,
        None => StepSpec {
            sample: d.t_sample,
            train: d.t_train,
        },
    };
    let scenes = generate_dataset(&ck.config.scene, 10, 1234)?;
    println!("checkpoint at iteration {}, sampling {steps}", ck.iteration);
    print!("{}", evaluate_checkpoint(&ck, &scenes, steps, 0)?.csv());
    Ok(())
}
