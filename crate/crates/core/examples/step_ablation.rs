//! Sampling-step ablation over the checkpoints in a directory.
//!
//! cargo run --release --example step_ablation -- CKPT_DIR [GRID]

use diffsf::harness::{ablate_steps, ablation_csv, find_checkpoints, generate_dataset, parse_grid};

fn main() -> diffsf::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().expect("usage: step_ablation CKPT_DIR [GRID]");
    let grid = parse_grid(&args.next().unwrap_or_else(|| "1@20,2@20,5@20,20@20".into()))?;
    let checkpoints = find_checkpoints(&dir)?;
    let (_, first) = checkpoints.first().expect("no .dsfc files in directory");
    let scenes = generate_dataset(&first.config.scene, 20, 2024)?;
    print!("{}", ablation_csv(&ablate_steps(&checkpoints, &grid, &scenes, 0)?));
    Ok(())
}
