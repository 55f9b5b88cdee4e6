//! Synthetic scene pairs, dataset files, FPS and KNN.
//!
//! cargo run --release --example scene_data

use diffsf::harness::generate_dataset;
use diffsf::numerics::RngStream;
use diffsf::objective::metrics;
use diffsf::pointcloud::{farthest_point_sampling, knn, load_dataset, save_dataset, FlowField, SceneGenConfig, ShapeFamily};

fn main() -> diffsf::Result<()> {
    let cfg = SceneGenConfig {
        n_parts: 3,
        occlusion_fraction: 0.1,
        shape: ShapeFamily::Mixed,
        ..SceneGenConfig::default()
    };
    let scenes = generate_dataset(&cfg, 8, 42)?;
    let dir = std::env::temp_dir().join("diffsf_scene_data");
    save_dataset(&dir, &scenes)?;
    let back = load_dataset(&dir)?;
    assert_eq!(back, scenes);
    println!("saved and reloaded {} scenes under {}", back.len(), dir.display());

    let pair = &scenes[0];
    let valid = pair.valid_mask.iter().filter(|&&v| v).count();
    println!("scene 0: {} source, {} target points, {valid} with a visible match", pair.n1(), pair.n2());

    let idx = farthest_point_sampling(&pair.source, 16, &mut RngStream::new(0))?;
    println!("16 farthest points: {idx:?}");
    let nn = knn(&pair.source, &pair.target, 4)?;
    println!("4 nearest target points of source point 0: {:?}", nn.row(0));

    // Predicting no motion gives the dataset's baseline error.
    let zero = metrics(&FlowField::zeros(pair.n1()), pair)?;
    println!("zero-flow EPE3D {:.4} m, ACC_S {:.3}", zero.all.epe3d, zero.all.acc_s);
    Ok(())
}
