//! Synthetic room → map → descriptor field → landmarks → localization, with
//! per-stage timing.
//!
//! cargo run --release --example end_to_end [config.toml]

use std::time::Instant;

use splatloc::config::Config;
use splatloc::eval::EvalReport;
use splatloc::mapper::reconstruct;
use splatloc::pipeline::{choose_landmarks, distill_scene, localize_queries, reference_frames};
use splatloc::synth::SyntheticWorld;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let config = match std::env::args().nth(1) {
        Some(p) => Config::load(p.as_ref())?,
        None => Config::default(),
    };
    let clock = Instant::now();
    let lap = |what: &str| println!("[{:7.1}s] {what}", clock.elapsed().as_secs_f64());

    let world = SyntheticWorld::new(&config.synth);
    let keyframes = world.keyframes();
    let queries = world.queries();
    lap("synthesized");

    let mut scene = reconstruct(&keyframes, &config.reconstruct)?;
    lap(&format!("reconstructed {} primitives ({} key)", scene.len(), scene.key_indices().len()));

    let d = distill_scene(&mut scene, &keyframes, &config)?;
    lap(&format!("distilled on {} samples, mean cosine {:.4}", d.surface_samples, d.log.final_mean_cos));

    let sel = choose_landmarks(&scene, &keyframes, &config.landmarks)?;
    lap(&format!("selected {} landmarks (final radius {:.3} m)", sel.indices.len(), sel.final_radius));

    let db = reference_frames(&keyframes);
    let results = localize_queries(&scene, &sel.indices, &db, &queries, None, &config);
    lap("localized");
    let report = EvalReport::new(results.into_iter().map(|r| r.0).collect(), vec![], None);
    for f in &report.frames {
        println!(
            "  {}  dt {:>8} cm  dr {:>8} deg  {} inliers / {} matches",
            f.frame,
            f.dt_cm.map_or("-".into(), |v| format!("{v:.3}")),
            f.dr_deg.map_or("-".into(), |v| format!("{v:.3}")),
            f.inliers,
            f.matches
        );
    }
    println!(
        "median dt {:?} cm, median dr {:?} deg, failure rate {:.0}%",
        report.median_dt_cm,
        report.median_dr_deg,
        100.0 * report.failure_rate
    );
    Ok(())
}
