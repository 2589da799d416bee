use nalgebra::{DVector, Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splatloc::volume::FeatureVolume;

/// Largest distance from a mesh vertex to the analytic surface.
fn worst_vertex_error(v: &FeatureVolume, sdf: impl Fn(&Vector3<f64>) -> f64) -> (usize, f64) {
    let mesh = v.surface_mesh();
    let worst = mesh
        .iter()
        .flat_map(|t| t.0.iter())
        .map(|p| sdf(p).abs())
        .fold(0.0, f64::max);
    (mesh.len(), worst)
}

#[test]
fn sphere_and_plane_surfaces_within_one_voxel() {
    for voxel in [0.02, 0.04, 0.08] {
        let dims = [(1.2 / voxel) as usize; 3];
        let center = Vector3::repeat(0.6);
        let sphere = |p: &Vector3<f64>| (p - center).norm() - 0.35;
        let mut v = FeatureVolume::new(Vector3::zeros(), dims, voxel, 1, 4.0 * voxel).unwrap();
        v.fill_tsdf(sphere);
        let (n, worst) = worst_vertex_error(&v, sphere);
        assert!(n > 50, "voxel {voxel}: {n} triangles");
        assert!(worst <= voxel, "sphere at voxel {voxel}: vertex {worst} m off");

        // Tilted plane through the volume center.
        let normal = Vector3::new(0.3, -0.5, 0.81).normalize();
        let plane = |p: &Vector3<f64>| normal.dot(&(p - center));
        let mut v = FeatureVolume::new(Vector3::zeros(), dims, voxel, 1, 4.0 * voxel).unwrap();
        v.fill_tsdf(plane);
        let (n, worst) = worst_vertex_error(&v, plane);
        assert!(n > 20);
        assert!(worst <= voxel, "plane at voxel {voxel}: vertex {worst} m off");
    }
}

#[test]
fn trilinear_sampling_is_exact_on_affine_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Matrix3::from_fn(|_, _| rng.gen_range(-2.0..2.0));
    let b = Vector3::new(0.3, -1.0, 2.0);
    let f = |p: &Vector3<f64>| a * p + b;
    let mut v = FeatureVolume::new(Vector3::new(-0.5, 0.1, 0.2), [6, 5, 7], 0.1, 3, 0.4).unwrap();
    for z in 0..7 {
        for y in 0..5 {
            for x in 0..6 {
                let c = v.cell_center(x, y, z);
                v.set_cell(x, y, z, f(&c).as_slice(), 1.0);
            }
        }
    }
    // Anywhere between the outermost cell centers.
    let lo = v.cell_center(0, 0, 0);
    let hi = v.cell_center(5, 4, 6);
    for _ in 0..1000 {
        let p = Vector3::from_fn(|i, _| rng.gen_range(lo[i]..hi[i]));
        let s = v.sample_raw(&p).unwrap().unwrap();
        let want = f(&p);
        assert!((s - DVector::from_column_slice(want.as_slice())).amax() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fused_cells_equal_the_direct_mean(seed in any::<u64>(), n in 1usize..200, dim in 1usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = FeatureVolume::new(Vector3::zeros(), [3, 3, 3], 0.1, dim, 0.4).unwrap();
        let mut sums = vec![vec![0.0; dim]; 27];
        let mut counts = vec![0usize; 27];
        for _ in 0..n {
            let c = [rng.gen_range(0..3), rng.gen_range(0..3), rng.gen_range(0..3)];
            let f: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            v.fuse_observation(c, &f).unwrap();
            let i = v.index(c[0], c[1], c[2]);
            counts[i] += 1;
            sums[i].iter_mut().zip(&f).for_each(|(s, x)| *s += x);
        }
        for i in 0..27 {
            let (x, y, z) = v.unindex(i);
            prop_assert_eq!(v.weight(x, y, z), counts[i] as f64);
            for (got, s) in v.raw_feature(x, y, z).iter().zip(&sums[i]) {
                let want = if counts[i] > 0 { s / counts[i] as f64 } else { 0.0 };
                prop_assert!((got - want).abs() < 1e-5);
            }
        }
    }
}
