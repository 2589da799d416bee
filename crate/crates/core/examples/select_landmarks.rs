//! Saliency-greedy versus uniform landmark selection on random candidates.
//!
//! cargo run --release --example select_landmarks

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatloc::landmarks::{select_landmarks, select_uniform, Candidate, Selection};

fn summary(name: &str, sel: &Selection, cands: &[Candidate]) {
    let mean = sel.indices.iter().map(|&i| cands[i].saliency).sum::<f64>() / sel.indices.len() as f64;
    let mut min_d = f64::INFINITY;
    for (i, a) in sel.positions.iter().enumerate() {
        for b in &sel.positions[i + 1..] {
            min_d = min_d.min((Vector3::from(*a) - Vector3::from(*b)).norm());
        }
    }
    println!(
        "{name:>8}: {} picks, mean saliency {mean:.3}, closest pair {min_d:.3} m, final radius {:.3} m",
        sel.indices.len(),
        sel.final_radius
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cands: Vec<Candidate> = (0..5000)
        .map(|index| {
            let position = Vector3::new(rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5), rng.gen_range(0.0..2.5));
            Candidate {
                index,
                position,
                // One salient corner of the room.
                saliency: rng.gen::<f64>() * (-(position - Vector3::new(2.0, 2.0, 1.0)).norm()).exp(),
            }
        })
        .collect();
    for n in [50, 200, 1000] {
        println!("N = {n}");
        summary("saliency", &select_landmarks(&cands, 0.5, n)?, &cands);
        summary("uniform", &select_uniform(&cands, n, 1)?, &cands);
    }
    Ok(())
}
