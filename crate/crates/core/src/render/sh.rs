//! Real spherical-harmonics basis (degrees 1..=3) and its Jacobian with
//! respect to the unit view direction. The degree-0 band is the primitive's
//! base color and is not evaluated here.

use nalgebra::Vector3;

const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Basis values `Y_1 .. Y_n` for the first `count` non-constant functions.
pub fn basis(d: &Vector3<f64>, count: usize, out: &mut [f64]) {
    let (x, y, z) = (d.x, d.y, d.z);
    let all = [
        -C1 * y,
        C1 * z,
        -C1 * x,
        C2[0] * x * y,
        C2[1] * y * z,
        C2[2] * (2.0 * z * z - x * x - y * y),
        C2[3] * x * z,
        C2[4] * (x * x - y * y),
        C3[0] * y * (3.0 * x * x - y * y),
        C3[1] * x * y * z,
        C3[2] * y * (4.0 * z * z - x * x - y * y),
        C3[3] * z * (2.0 * z * z - 3.0 * x * x - 3.0 * y * y),
        C3[4] * x * (4.0 * z * z - x * x - y * y),
        C3[5] * z * (x * x - y * y),
        C3[6] * x * (x * x - 3.0 * y * y),
    ];
    out[..count].copy_from_slice(&all[..count]);
}

/// Partial derivatives of each basis function with respect to the direction
/// components, treating them as independent.
pub fn basis_jacobian(d: &Vector3<f64>, count: usize, out: &mut [Vector3<f64>]) {
    let (x, y, z) = (d.x, d.y, d.z);
    let all = [
        Vector3::new(0.0, -C1, 0.0),
        Vector3::new(0.0, 0.0, C1),
        Vector3::new(-C1, 0.0, 0.0),
        Vector3::new(C2[0] * y, C2[0] * x, 0.0),
        Vector3::new(0.0, C2[1] * z, C2[1] * y),
        Vector3::new(-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z),
        Vector3::new(C2[3] * z, 0.0, C2[3] * x),
        Vector3::new(2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0),
        Vector3::new(6.0 * C3[0] * x * y, C3[0] * (3.0 * x * x - 3.0 * y * y), 0.0),
        Vector3::new(C3[1] * y * z, C3[1] * x * z, C3[1] * x * y),
        Vector3::new(
            -2.0 * C3[2] * x * y,
            C3[2] * (4.0 * z * z - x * x - 3.0 * y * y),
            8.0 * C3[2] * y * z,
        ),
        Vector3::new(
            -6.0 * C3[3] * x * z,
            -6.0 * C3[3] * y * z,
            C3[3] * (6.0 * z * z - 3.0 * x * x - 3.0 * y * y),
        ),
        Vector3::new(
            C3[4] * (4.0 * z * z - 3.0 * x * x - y * y),
            -2.0 * C3[4] * x * y,
            8.0 * C3[4] * x * z,
        ),
        Vector3::new(2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (x * x - y * y)),
        Vector3::new(C3[6] * (3.0 * x * x - 3.0 * y * y), -6.0 * C3[6] * x * y, 0.0),
    ];
    out[..count].copy_from_slice(&all[..count]);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_matches_finite_differences() {
        let d = Vector3::new(0.3, -0.5, 0.7);
        let mut jac = [Vector3::zeros(); 15];
        basis_jacobian(&d, 15, &mut jac);
        let h = 1e-6;
        for axis in 0..3 {
            let mut dp = d;
            let mut dm = d;
            dp[axis] += h;
            dm[axis] -= h;
            let mut bp = [0.0; 15];
            let mut bm = [0.0; 15];
            basis(&dp, 15, &mut bp);
            basis(&dm, 15, &mut bm);
            for k in 0..15 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - jac[k][axis]).abs() < 1e-8, "basis {k} axis {axis}");
            }
        }
    }
}
