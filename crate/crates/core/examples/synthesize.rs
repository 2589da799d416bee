//! Generates the synthetic room dataset (training frames + queries).
//!
//! cargo run --release --example synthesize -- /tmp/room

use std::path::PathBuf;
use std::time::Instant;

use splatloc::synth::{generate_dataset, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic_room".into()));
    let config = SynthConfig::default();
    let t = Instant::now();
    let summary = generate_dataset(&config, &out)?;
    println!(
        "wrote {} training + {} query frames to {} in {:.1}s",
        summary.train_frames,
        summary.query_frames,
        out.display(),
        t.elapsed().as_secs_f64()
    );
    println!(
        "{} dots; query keypoints mean {:.0}, min {}",
        summary.dots, summary.mean_query_keypoints, summary.min_query_keypoints
    );
    Ok(())
}
