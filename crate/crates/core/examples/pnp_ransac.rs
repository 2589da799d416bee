//! Robust absolute pose from 2D–3D matches with a growing outlier share.
//!
//! cargo run --release --example pnp_ransac

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use splatloc::geometry::{pose_errors, project_point};
use splatloc::localize::{solve_pnp_ransac, RansacConfig};
use splatloc::{CameraIntrinsics, Pose};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = CameraIntrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480)?;
    let truth = Pose::look_at(Vector3::new(0.3, -0.2, 1.0), Vector3::new(0.0, 0.0, -2.0), Vector3::z());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.5)?;
    let (mut pts, mut px) = (Vec::new(), Vec::new());
    while pts.len() < 200 {
        let x = Vector3::new(rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..0.0));
        if let Ok((u, z)) = project_point(&x, &truth, &k) {
            if z > 0.5 && k.contains(&u) {
                pts.push(x);
                px.push(u + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)));
            }
        }
    }
    for outliers in [0.0, 0.3, 0.6] {
        let mut obs = px.clone();
        for u in obs.iter_mut().take((outliers * 200.0) as usize) {
            *u = Vector2::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0));
        }
        let est = solve_pnp_ransac(&pts, &obs, &k, &RansacConfig::default())?;
        let (dt, dr) = pose_errors(&est.pose, &truth);
        println!(
            "{:>3.0}% outliers: {} inliers, dt {dt:.3} cm, dr {dr:.4} deg",
            outliers * 100.0,
            est.inliers.len()
        );
    }
    Ok(())
}
