//! Fits a descriptor field to a row of feature patches 6 cm apart, at a fine
//! and a coarse finest resolution, and reports held-out cosine.
//!
//! cargo run --release --example distill_field

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatloc::field::{distill, DescriptorField, DistillConfig, EncodingConfig, FieldConfig};
use splatloc::volume::SurfaceSamples;
use splatloc::SceneBounds;

const DIM: usize = 16;
const PATCHES: usize = 16;

fn patches(seed: u64, per: usize) -> SurfaceSamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut features = DMatrix::zeros(DIM, PATCHES * per);
    for c in 0..PATCHES {
        let x = -0.45 + 0.06 * c as f64;
        for _ in 0..per {
            features[(c % DIM, points.len())] = 1.0;
            points.push(Vector3::new(x, 0.0, 0.0) + Vector3::from_fn(|_, _| rng.gen_range(-0.01..0.01)));
        }
    }
    SurfaceSamples { points, features }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bounds = SceneBounds::new(Vector3::new(-1.0, -0.5, -0.5), Vector3::new(1.0, 0.5, 0.5));
    for finest in [0.06, 0.40] {
        let cfg = FieldConfig {
            encoding: EncodingConfig {
                finest_resolution: finest,
                ..EncodingConfig::default()
            },
            hidden: 64,
            descriptor_dim: DIM,
            ..FieldConfig::default()
        };
        let mut field = DescriptorField::new(&cfg, bounds)?;
        let log = distill(
            &mut field,
            &patches(1, 100),
            &DistillConfig {
                steps: 2000,
                batch_size: 256,
                ..DistillConfig::default()
            },
        )?;
        let test = patches(2, 50);
        let pred = field.batch_decode(&test.points);
        let cos: Vec<f64> = (0..test.len()).map(|i| pred.row(i).transpose().dot(&test.features.column(i))).collect();
        let worst_patch = cos.chunks(50).map(|c| c.iter().sum::<f64>() / 50.0).fold(1.0, f64::min);
        println!(
            "finest level {:.0} cm: training cosine {:.3}, held-out mean {:.3}, worst patch {worst_patch:.3}",
            finest * 100.0,
            log.final_mean_cos,
            cos.iter().sum::<f64>() / cos.len() as f64
        );
    }
    Ok(())
}
