use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use splatloc::dataset::{frame_name, load_queries, write_color_png, write_feature_map, write_raw_map, Dataset};
use splatloc::geometry::Pose;
use splatloc::synth::{generate_dataset, Shape, SynthConfig, SyntheticWorld};

fn tiny() -> SynthConfig {
    SynthConfig {
        width: 64,
        height: 48,
        focal: 52.0,
        train_frames: 3,
        query_frames: 2,
        descriptor_dim: 32,
        seed: 7,
        ..SynthConfig::default()
    }
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_writes_identical_directories() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&tiny(), a.path()).unwrap();
    generate_dataset(&tiny(), b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() > 10);
    assert!(fa == fb);

    let c = tempfile::tempdir().unwrap();
    generate_dataset(&SynthConfig { seed: 8, ..tiny() }, c.path()).unwrap();
    assert!(files(c.path()) != fa);
}

#[test]
fn dataset_round_trips_through_the_loader() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&tiny(), dir.path()).unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    assert_eq!(ds.frames.len(), 3);
    let out = tempfile::tempdir().unwrap();
    for (kf, &i) in ds.frames.iter().zip(&ds.indices) {
        let name = frame_name(i);
        for (sub, ext) in [("color", "png"), ("depth", "raw"), ("score", "raw"), ("feat", "featraw")] {
            let p = out.path().join(format!("{sub}_{name}.{ext}"));
            match sub {
                "color" => write_color_png(&p, &kf.color).unwrap(),
                "depth" => write_raw_map(&p, &kf.depth).unwrap(),
                "score" => write_raw_map(&p, &kf.score_map).unwrap(),
                _ => write_feature_map(&p, &kf.feature_map).unwrap(),
            }
            let original = fs::read(dir.path().join(sub).join(format!("{name}.{ext}"))).unwrap();
            assert!(fs::read(&p).unwrap() == original, "{sub}/{name}");
        }
    }
    let qs = load_queries(&dir.path().join("queries")).unwrap();
    assert_eq!(qs.len(), 2);
    assert!(qs.iter().all(|q| q.ground_truth.is_some()));
}

#[test]
fn sphere_depth_matches_the_analytic_intersection() {
    let cfg = tiny();
    let center = Vector3::new(0.0, 0.0, 2.0);
    let world = SyntheticWorld::with_shapes(&cfg, vec![Shape::Sphere { center, radius: 1.0 }]);
    let k = cfg.intrinsics();
    let view = world.render_view(&Pose::identity(), &k);
    let mut hits = 0;
    for y in 0..k.height {
        for x in 0..k.width {
            // Ray with unit z, so the root is the z-depth.
            let r = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let (a, b, c) = (r.norm_squared(), -2.0 * r.dot(&center), center.norm_squared() - 1.0);
            let disc = b * b - 4.0 * a * c;
            let got = view.depth.get(x, y);
            if disc < 0.0 {
                assert_eq!(got, 0.0);
                continue;
            }
            let t = (-b - disc.sqrt()) / (2.0 * a);
            assert!((got - t).abs() < 1e-6, "({x}, {y}): {got} vs {t}");
            hits += 1;
        }
    }
    assert!(hits > k.width * k.height / 4);
}

#[test]
fn feature_maps_are_unit_norm_and_keypoints_are_dense() {
    let world = SyntheticWorld::new(&SynthConfig {
        train_frames: 4,
        query_frames: 4,
        ..SynthConfig::default()
    });
    for kf in world.keyframes() {
        let f = &kf.feature_map;
        for y in 0..f.height {
            for x in 0..f.width {
                let c = f.cell(x, y);
                let n = c.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                assert!(n == 0.0 || (n - 1.0).abs() < 1e-5, "norm {n}");
            }
        }
    }
    for q in world.queries() {
        assert!(q.observation.keypoints.len() >= 200, "{} keypoints", q.observation.keypoints.len());
    }
}
