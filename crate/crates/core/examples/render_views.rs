//! Renders a handful of overlapping Gaussians from three viewpoints and
//! writes color PNGs plus a depth summary.
//!
//! cargo run --release --example render_views -- /tmp/views

use std::path::PathBuf;

use nalgebra::Vector3;
use splatloc::dataset::write_color_png;
use splatloc::render::render;
use splatloc::{CameraIntrinsics, GaussianPrimitive, Pose, SceneBounds, SceneModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "views".into()));
    std::fs::create_dir_all(&out)?;
    let mut scene = SceneModel::new(SceneBounds::new(Vector3::repeat(-2.0), Vector3::repeat(2.0)), 0)?;
    for i in 0..12 {
        let a = i as f64 / 12.0 * std::f64::consts::TAU;
        let color = Vector3::new(0.5 + 0.5 * a.cos(), 0.5 + 0.5 * a.sin(), 0.3);
        scene.push(GaussianPrimitive::new(Vector3::new(0.5 * a.cos(), 0.5 * a.sin(), 0.1 * (3.0 * a).sin()), 0.12, 0.7, color))?;
    }
    let k = CameraIntrinsics::new(200.0, 200.0, 159.5, 119.5, 320, 240)?;
    for (i, eye) in [Vector3::new(0.0, 0.0, -2.5), Vector3::new(1.5, 0.0, -2.0), Vector3::new(0.0, -1.8, -1.8)]
        .into_iter()
        .enumerate()
    {
        let pose = Pose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0));
        let maps = render(&scene, &pose, &k);
        let covered = maps.alpha.data.iter().filter(|&&a| a > 0.5).count();
        let depths: Vec<f64> = maps.depth.data.iter().zip(&maps.alpha.data).filter(|(_, &a)| a > 0.5).map(|(&d, &a)| d / a).collect();
        let mean_depth = depths.iter().sum::<f64>() / depths.len().max(1) as f64;
        let path = out.join(format!("view_{i}.png"));
        write_color_png(&path, &maps.color)?;
        println!("{}: {covered} covered pixels, mean depth {mean_depth:.3} m", path.display());
    }
    Ok(())
}
