use nalgebra::{DMatrix, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use splatloc::field::{EncodingConfig, FieldConfig, DescriptorField};
use splatloc::geometry::{pose_errors, project_point};
use splatloc::localize::pnp::{refine_pose, mean_reprojection_error, CameraTransform};
use splatloc::localize::{
    candidate_landmarks, match_descriptors, solve_pnp_ransac, LocalizeError, MatchConfig, RansacConfig,
};
use splatloc::{CameraIntrinsics, GaussianPrimitive, Pose, SceneBounds, SceneModel};

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).unwrap()
}

/// Visible points in a 5 m room seen from a random viewpoint.
fn correspondences(rng: &mut ChaCha8Rng, n: usize) -> (Pose, Vec<Vector3<f64>>, Vec<Vector2<f64>>) {
    let k = camera();
    let eye = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..1.5));
    let target = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-2.5..-1.5));
    let pose = Pose::look_at(eye, target, Vector3::z());
    let mut pts = Vec::new();
    let mut px = Vec::new();
    while pts.len() < n {
        let x = Vector3::new(rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..0.0));
        if let Ok((u, z)) = project_point(&x, &pose, &k) {
            if z > 0.5 && k.contains(&u) {
                pts.push(x);
                px.push(u);
            }
        }
    }
    (pose, pts, px)
}

#[test]
fn noise_free_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let (pose, pts, px) = correspondences(&mut rng, 20);
        let est = solve_pnp_ransac(&pts, &px, &camera(), &RansacConfig::default()).unwrap();
        let (dt_cm, dr_deg) = pose_errors(&est.pose, &pose);
        assert!(dt_cm / 100.0 < 1e-6, "dt = {dt_cm} cm");
        assert!(dr_deg < 1e-6, "dr = {dr_deg} deg");
        assert_eq!(est.inliers.len(), 20);
    }
}

#[test]
fn robust_to_outliers_and_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.5).unwrap();
    for _ in 0..5 {
        let (pose, pts, mut px) = correspondences(&mut rng, 100);
        for (i, u) in px.iter_mut().enumerate() {
            if i < 70 {
                u.x += noise.sample(&mut rng);
                u.y += noise.sample(&mut rng);
            } else {
                *u = Vector2::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0));
            }
        }
        let est = solve_pnp_ransac(&pts, &px, &camera(), &RansacConfig::default()).unwrap();
        let (dt_cm, dr_deg) = pose_errors(&est.pose, &pose);
        assert!(dt_cm < 0.5, "dt = {dt_cm} cm");
        assert!(dr_deg < 0.1, "dr = {dr_deg} deg");
        for &i in &est.inliers {
            let tf = CameraTransform::from_pose(&est.pose);
            assert!(tf.reprojection_error(&pts[i], &px[i], &camera()) <= 3.0);
        }
    }
}

#[test]
fn too_few_and_inconsistent_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (_, pts, px) = correspondences(&mut rng, 3);
    assert_eq!(
        solve_pnp_ransac(&pts, &px, &camera(), &RansacConfig::default()),
        Err(LocalizeError::InsufficientMatches(3))
    );
    let (_, pts, _) = correspondences(&mut rng, 40);
    let junk: Vec<Vector2<f64>> = (0..40)
        .map(|_| Vector2::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0)))
        .collect();
    assert!(matches!(
        solve_pnp_ransac(&pts, &junk, &camera(), &RansacConfig::default()),
        Err(LocalizeError::NoConsensus { .. })
    ));
}

#[test]
fn ransac_is_deterministic_for_a_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (_, pts, mut px) = correspondences(&mut rng, 60);
    for u in px.iter_mut().skip(40) {
        *u = Vector2::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0));
    }
    let cfg = RansacConfig {
        seed: 99,
        ..Default::default()
    };
    let a = solve_pnp_ransac(&pts, &px, &camera(), &cfg).unwrap();
    let b = solve_pnp_ransac(&pts, &px, &camera(), &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn refinement_never_increases_error_noise_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let (pose, pts, px) = correspondences(&mut rng, 15);
        let truth = CameraTransform::from_pose(&pose);
        let seed = CameraTransform {
            r: nalgebra::Rotation3::new(Vector3::new(
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
            ))
            .into_inner()
                * truth.r,
            t: truth.t + Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
        };
        let before = mean_reprojection_error(&seed, &pts, &px, &camera());
        let (tf, _) = refine_pose(&seed, &pts, &px, &camera(), 50);
        assert!(mean_reprojection_error(&tf, &pts, &px, &camera()) <= before);
    }
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        row /= n;
    }
    m
}

#[test]
fn planted_matches_are_recovered_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let d = 64;
    let planted = unit_rows(&mut rng, 50, d);
    // Landmarks: the 50 planted descriptors slightly perturbed, then 50
    // distractors. Queries: the planted descriptors, then 50 others. Random
    // 64-d unit vectors have |cos| well below 0.5.
    let mut lm = DMatrix::zeros(100, d);
    let mut q = DMatrix::zeros(100, d);
    let noise = unit_rows(&mut rng, 50, d);
    for i in 0..50 {
        let v = (planted.row(i) + noise.row(i) * 0.05).normalize();
        lm.row_mut(i).copy_from(&v);
        q.row_mut(i).copy_from(&planted.row(i));
    }
    let distract = unit_rows(&mut rng, 100, d);
    for i in 0..50 {
        lm.row_mut(50 + i).copy_from(&distract.row(i));
        q.row_mut(50 + i).copy_from(&distract.row(50 + i));
    }
    let sim = &q * lm.transpose();
    for i in 0..100 {
        for j in 0..100 {
            if !(i == j && i < 50) {
                assert!(sim[(i, j)] < 0.5);
            }
        }
    }
    let m = match_descriptors(&q, &lm, &MatchConfig::default());
    let mut pairs: Vec<(usize, usize)> = m.iter().map(|m| (m.keypoint_index, m.landmark_index)).collect();
    pairs.sort_unstable();
    assert_eq!(pairs, (0..50).map(|i| (i, i)).collect::<Vec<_>>());
}

#[test]
fn candidate_filter_matches_brute_force_projection() {
    let bounds = SceneBounds::new(Vector3::repeat(-3.0), Vector3::repeat(3.0));
    let mut scene = SceneModel::new(bounds, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..500 {
        let mu = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        scene.push(GaussianPrimitive::new(mu, 0.01, 0.5, Vector3::repeat(0.5))).unwrap();
    }
    let cfg = FieldConfig {
        encoding: EncodingConfig {
            log2_table_size: 12,
            ..Default::default()
        },
        descriptor_dim: 16,
        hidden: 16,
        ..Default::default()
    };
    scene.descriptor_field = Some(DescriptorField::new(&cfg, bounds).unwrap());
    let k = camera();
    let pose = Pose::look_at(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::z());
    let all: Vec<usize> = (0..scene.len()).collect();
    let c = candidate_landmarks(&scene, &all, &pose, &k).unwrap();
    let brute = scene
        .primitives()
        .iter()
        .filter(|p| {
            let pc = pose.inverse_transform_point(&p.mu);
            if pc.z <= 0.01 {
                return false;
            }
            let u = Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy);
            u.x >= -0.5 && u.y >= -0.5 && u.x < 639.5 && u.y < 479.5
        })
        .count();
    assert_eq!(c.ids.len(), brute);
    assert_eq!(c.descriptors.nrows(), brute);
    assert_eq!(c.descriptors.ncols(), 16);

    // On-axis point kept, point behind dropped.
    let mut s2 = SceneModel::new(bounds, 0).unwrap();
    s2.push(GaussianPrimitive::new(Vector3::new(2.0, 0.0, 0.0), 0.01, 0.5, Vector3::zeros())).unwrap();
    s2.push(GaussianPrimitive::new(Vector3::new(-2.0, 0.0, 0.0), 0.01, 0.5, Vector3::zeros())).unwrap();
    s2.descriptor_field = scene.descriptor_field.clone();
    assert_eq!(candidate_landmarks(&s2, &[0, 1], &pose, &k).unwrap().ids, vec![0]);
    s2.descriptor_field = None;
    assert_eq!(candidate_landmarks(&s2, &[0], &pose, &k), Err(LocalizeError::NoDescriptorField));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mutual_matching_is_symmetric(seed in any::<u64>(), n in 1usize..30, m in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = unit_rows(&mut rng, n, 8);
        let b = unit_rows(&mut rng, m, 8);
        let cfg = MatchConfig { min_cosine: 0.3, ratio: 0.95 };
        let mut ab: Vec<(usize, usize)> = match_descriptors(&a, &b, &cfg).iter().map(|x| (x.keypoint_index, x.landmark_index)).collect();
        let mut ba: Vec<(usize, usize)> = match_descriptors(&b, &a, &cfg).iter().map(|x| (x.landmark_index, x.keypoint_index)).collect();
        ab.sort_unstable();
        ba.sort_unstable();
        prop_assert_eq!(ab, ba);
    }
}

#[test]
fn retrieval_finds_the_nearest_orbit_frame() {
    use splatloc::localize::{retrieve_reference, thumbnail};
    use splatloc::pipeline::reference_frames;
    use splatloc::synth::{SynthConfig, SyntheticWorld};

    let world = SyntheticWorld::new(&SynthConfig {
        width: 80,
        height: 60,
        focal: 65.0,
        query_frames: 0,
        ..SynthConfig::default()
    });
    let kfs = world.keyframes();
    let db = reference_frames(&kfs);
    let k = world.config.intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut hits = 0;
    for kf in &kfs {
        // A few centimetres and a fraction of a degree off the keyframe.
        let jitter = Vector3::new(rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03));
        let spin = nalgebra::UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, 0.005));
        let pose = Pose::new(spin * kf.pose.rotation, kf.pose.center() + jitter);
        let view = world.render_view(&pose, &k);
        let got = retrieve_reference(&thumbnail(&view.color), &db, None).unwrap();
        let nearest = (0..kfs.len())
            .min_by(|&a, &b| {
                let da = (kfs[a].pose.center() - pose.center()).norm();
                let db = (kfs[b].pose.center() - pose.center()).norm();
                da.total_cmp(&db)
            })
            .unwrap();
        hits += (got == nearest) as usize;
    }
    assert!(hits * 10 >= kfs.len() * 9, "{hits}/{}", kfs.len());
}
