//! Builds a Gaussian map of a small synthetic room, reports re-rendering
//! quality per keyframe and saves the model.
//!
//! cargo run --release --example reconstruct_map -- /tmp/room.splat

use std::path::PathBuf;
use std::time::Instant;

use splatloc::eval::psnr_ssim;
use splatloc::mapper::{reconstruct, ReconstructConfig};
use splatloc::model::save_model;
use splatloc::render::render;
use splatloc::synth::{SynthConfig, SyntheticWorld};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "room.splat".into()));
    let world = SyntheticWorld::new(&SynthConfig {
        width: 80,
        height: 60,
        focal: 65.0,
        train_frames: 6,
        query_frames: 0,
        ..SynthConfig::default()
    });
    let keyframes = world.keyframes();
    let config = ReconstructConfig {
        iters_per_keyframe: 30,
        refinement_iters: 150,
        ..ReconstructConfig::default()
    };
    let t = Instant::now();
    let scene = reconstruct(&keyframes, &config)?;
    println!(
        "{} primitives ({} key) in {:.1}s",
        scene.len(),
        scene.key_indices().len(),
        t.elapsed().as_secs_f64()
    );
    for (i, kf) in keyframes.iter().enumerate() {
        let maps = render(&scene, &kf.pose, &kf.intrinsics);
        let (p, s) = psnr_ssim(&maps.color, &kf.color)?;
        println!("  keyframe {i}: PSNR {p:.2} dB, SSIM {s:.3}");
    }
    let size = save_model(&scene, &out)?;
    println!("saved {} ({} bytes)", out.display(), size.total);
    Ok(())
}
