//! Absolute pose from 2D–3D correspondences: Grunert P3P, EPnP and
//! Levenberg–Marquardt reprojection refinement.

use nalgebra::{DMatrix, Matrix3, Matrix4, Matrix6, Rotation3, UnitQuaternion, Vector2, Vector3, Vector6, SVD};

use crate::geometry::{CameraIntrinsics, Pose};

/// Camera-from-world rigid transform `x_c = r·x_w + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraTransform {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl CameraTransform {
    pub fn from_pose(pose: &Pose) -> Self {
        let r = pose.rotation_matrix().transpose();
        Self {
            r,
            t: -r * pose.translation,
        }
    }

    pub fn to_pose(&self) -> Pose {
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.r));
        let r = rot.to_rotation_matrix().into_inner();
        Pose::new(rot.inverse(), -(r.transpose() * self.t))
    }

    #[inline]
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r * x + self.t
    }

    /// Pixel projection; `None` for points at or behind the camera.
    pub fn project(&self, x: &Vector3<f64>, k: &CameraIntrinsics) -> Option<Vector2<f64>> {
        let p = self.apply(x);
        (p.z > 1e-9).then(|| Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
    }

    pub fn reprojection_error(&self, x: &Vector3<f64>, u: &Vector2<f64>, k: &CameraIntrinsics) -> f64 {
        self.project(x, k).map_or(f64::INFINITY, |p| (p - u).norm())
    }
}

pub fn mean_reprojection_error(
    tf: &CameraTransform,
    pts: &[Vector3<f64>],
    px: &[Vector2<f64>],
    k: &CameraIntrinsics,
) -> f64 {
    if pts.is_empty() {
        return 0.0;
    }
    pts.iter().zip(px).map(|(x, u)| tf.reprojection_error(x, u, k)).sum::<f64>() / pts.len() as f64
}

pub fn bearing(u: &Vector2<f64>, k: &CameraIntrinsics) -> Vector3<f64> {
    Vector3::new((u.x - k.cx) / k.fx, (u.y - k.cy) / k.fy, 1.0).normalize()
}

/// Least-squares rigid transform mapping `src` onto `dst` (Kabsch).
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<CameraTransform> {
    let n = src.len() as f64;
    if src.len() < 3 || src.len() != dst.len() {
        return None;
    }
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut fix = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * vt;
    r.iter().all(|v| v.is_finite()).then(|| CameraTransform { r, t: cd - r * cs })
}

/// Real roots of `c[0]·x⁴ + c[1]·x³ + c[2]·x² + c[3]·x + c[4]`.
fn quartic_roots(c: [f64; 5]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || c[0].abs() < 1e-14 * scale {
        return cubic_fallback(&c[1..]);
    }
    let a: Vec<f64> = c.iter().map(|v| v / c[0]).collect();
    let mut comp = Matrix4::zeros();
    for i in 0..3 {
        comp[(i + 1, i)] = 1.0;
    }
    for i in 0..4 {
        comp[(i, 3)] = -a[4 - i];
    }
    let eig = comp.complex_eigenvalues();
    let mut roots = Vec::new();
    for z in eig.iter() {
        if z.im.abs() > 1e-4 * (1.0 + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        // Newton polish against the monic polynomial.
        for _ in 0..8 {
            let f = (((x + a[1]) * x + a[2]) * x + a[3]) * x + a[4];
            let df = ((4.0 * x + 3.0 * a[1]) * x + 2.0 * a[2]) * x + a[3];
            if df.abs() < 1e-300 {
                break;
            }
            x -= f / df;
        }
        roots.push(x);
    }
    roots
}

fn cubic_fallback(c: &[f64]) -> Vec<f64> {
    // Degenerate leading term: find roots of the remaining polynomial by
    // companion matrix of whatever degree remains.
    let mut c: &[f64] = c;
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    while !c.is_empty() && c[0].abs() < 1e-14 * scale.max(1e-300) {
        c = &c[1..];
    }
    let deg = c.len().saturating_sub(1);
    if deg == 0 {
        return Vec::new();
    }
    let mut comp = DMatrix::zeros(deg, deg);
    for i in 0..deg - 1 {
        comp[(i + 1, i)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -c[deg - i] / c[0];
    }
    comp.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-4 * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .collect()
}

/// Minimal solver: up to four camera-from-world transforms consistent with
/// three pixel observations of three world points.
pub fn p3p(pts: &[Vector3<f64>; 3], px: &[Vector2<f64>; 3], k: &CameraIntrinsics) -> Vec<CameraTransform> {
    let f = [bearing(&px[0], k), bearing(&px[1], k), bearing(&px[2], k)];
    let a2 = (pts[1] - pts[2]).norm_squared();
    let b2 = (pts[0] - pts[2]).norm_squared();
    let c2 = (pts[0] - pts[1]).norm_squared();
    if a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18 {
        return Vec::new();
    }
    let ca = f[1].dot(&f[2]);
    let cb = f[0].dot(&f[2]);
    let cg = f[0].dot(&f[1]);

    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let bmc = (b2 - c2) / b2;
    let bma = (b2 - a2) / b2;
    let (ca2, cb2, cg2) = (ca * ca, cb * cb, cg * cg);

    let a4 = (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca2;
    let a3 = 4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca2 * cb);
    let a2c = 2.0
        * (amc * amc - 1.0 + 2.0 * amc * amc * cb2 + 2.0 * bmc * ca2 - 4.0 * apc * ca * cb * cg
            + 2.0 * bma * cg2);
    let a1 = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg2 * cb - (1.0 - apc) * ca * cg);
    let a0 = (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg2;

    let mut out = Vec::new();
    for v in quartic_roots([a4, a3, a2c, a1, a0]) {
        let den = 2.0 * (cg - v * ca);
        if den.abs() < 1e-12 {
            continue;
        }
        let u = ((-1.0 + amc) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / den;
        let q = 1.0 + v * v - 2.0 * v * cb;
        if q <= 0.0 || u <= 0.0 || v <= 0.0 {
            continue;
        }
        let s1 = (b2 / q).sqrt();
        let mut s = Vector3::new(s1, u * s1, v * s1);
        polish_depths(&mut s, &f, [a2, b2, c2]);
        if s.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            continue;
        }
        let cam: Vec<Vector3<f64>> = (0..3).map(|i| f[i] * s[i]).collect();
        if let Some(tf) = kabsch(pts, &cam) {
            out.push(tf);
        }
    }
    out
}

/// Gauss–Newton on the three law-of-cosines constraints.
fn polish_depths(s: &mut Vector3<f64>, f: &[Vector3<f64>; 3], d2: [f64; 3]) {
    let pairs = [(1usize, 2usize, 0usize), (0, 2, 1), (0, 1, 2)];
    for _ in 0..5 {
        let mut r = Vector3::zeros();
        let mut j = Matrix3::zeros();
        for (row, &(a, b, d)) in pairs.iter().enumerate() {
            let c = f[a].dot(&f[b]);
            r[row] = s[a] * s[a] + s[b] * s[b] - 2.0 * s[a] * s[b] * c - d2[d];
            j[(row, a)] = 2.0 * s[a] - 2.0 * s[b] * c;
            j[(row, b)] = 2.0 * s[b] - 2.0 * s[a] * c;
        }
        match j.lu().solve(&r) {
            Some(step) if step.iter().all(|v| v.is_finite()) => *s -= step,
            _ => return,
        }
    }
}

/// Efficient PnP with four PCA-aligned control points. Kernel dimensions up
/// to three are tried, so at least six correspondences are required.
pub fn epnp(pts: &[Vector3<f64>], px: &[Vector2<f64>], k: &CameraIntrinsics) -> Option<CameraTransform> {
    let n = pts.len();
    if n < 6 || n != px.len() {
        return None;
    }
    let c0 = pts.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in pts {
        cov += (p - c0) * (p - c0).transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut ctrl = [c0; 4];
    for i in 0..3 {
        let spread = (eig.eigenvalues[i].max(0.0) / n as f64).sqrt().max(1e-9);
        ctrl[i + 1] = c0 + eig.eigenvectors.column(i) * spread;
    }
    let basis = Matrix3::from_columns(&[ctrl[1] - c0, ctrl[2] - c0, ctrl[3] - c0]);
    let inv = basis.try_inverse()?;
    let alphas: Vec<[f64; 4]> = pts
        .iter()
        .map(|p| {
            let b = inv * (p - c0);
            [1.0 - b.x - b.y - b.z, b.x, b.y, b.z]
        })
        .collect();

    let mut m = DMatrix::zeros(2 * n, 12);
    for (i, (a, u)) in alphas.iter().zip(px).enumerate() {
        for j in 0..4 {
            m[(2 * i, 3 * j)] = a[j] * k.fx;
            m[(2 * i, 3 * j + 2)] = a[j] * (k.cx - u.x);
            m[(2 * i + 1, 3 * j + 1)] = a[j] * k.fy;
            m[(2 * i + 1, 3 * j + 2)] = a[j] * (k.cy - u.y);
        }
    }
    let mtm = m.transpose() * &m;
    let eig = mtm.symmetric_eigen();
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let kernel: Vec<[Vector3<f64>; 4]> = order
        .iter()
        .take(3)
        .map(|&c| {
            let v = eig.eigenvectors.column(c);
            std::array::from_fn(|j| Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]))
        })
        .collect();

    let mut best: Option<(f64, CameraTransform)> = None;
    for dim in 1..=3 {
        let Some(betas) = solve_betas(&kernel[..dim], &ctrl) else {
            continue;
        };
        let mut cam_ctrl = [Vector3::zeros(); 4];
        for (b, v) in betas.iter().zip(&kernel) {
            for j in 0..4 {
                cam_ctrl[j] += v[j] * *b;
            }
        }
        let mut cam: Vec<Vector3<f64>> = alphas
            .iter()
            .map(|a| (0..4).map(|j| cam_ctrl[j] * a[j]).sum())
            .collect();
        if cam.iter().filter(|p| p.z < 0.0).count() * 2 > n {
            cam.iter_mut().for_each(|p| *p = -*p);
        }
        let Some(tf) = kabsch(pts, &cam) else { continue };
        let err = mean_reprojection_error(&tf, pts, px, k);
        if best.as_ref().map_or(true, |(e, _)| err < *e) {
            best = Some((err, tf));
        }
    }
    best.map(|(_, tf)| tf)
}

/// Kernel weights that make camera-frame control-point distances match the
/// world ones: lifted linear solve, then Gauss–Newton.
fn solve_betas(kernel: &[[Vector3<f64>; 4]], ctrl: &[Vector3<f64>; 4]) -> Option<Vec<f64>> {
    let dim = kernel.len();
    let pairs: Vec<(usize, usize)> = (0..4).flat_map(|a| (a + 1..4).map(move |b| (a, b))).collect();
    let diffs: Vec<Vec<Vector3<f64>>> = pairs
        .iter()
        .map(|&(a, b)| kernel.iter().map(|v| v[a] - v[b]).collect())
        .collect();
    let d2: Vec<f64> = pairs.iter().map(|&(a, b)| (ctrl[a] - ctrl[b]).norm_squared()).collect();

    let lifted: Vec<(usize, usize)> = (0..dim).flat_map(|a| (a..dim).map(move |b| (a, b))).collect();
    let mut l = DMatrix::zeros(6, lifted.len());
    for (row, dv) in diffs.iter().enumerate() {
        for (col, &(a, b)) in lifted.iter().enumerate() {
            let w = if a == b { 1.0 } else { 2.0 };
            l[(row, col)] = w * dv[a].dot(&dv[b]);
        }
    }
    let rhs = nalgebra::DVector::from_vec(d2.clone());
    let sol = SVD::new(l, true, true).solve(&rhs, 1e-12).ok()?;
    let b11 = sol[0];
    if !(b11.abs() > 0.0) {
        return None;
    }
    let mut betas = vec![0.0; dim];
    betas[0] = b11.abs().sqrt();
    for a in 1..dim {
        let col = lifted.iter().position(|&p| p == (0, a))?;
        // β₀βₐ / β₀ with β₀ > 0 fixes the relative sign.
        betas[a] = sol[col] / betas[0];
    }
    if b11 < 0.0 && dim == 1 {
        // Only the magnitude is meaningful.
        betas[0] = (-b11).sqrt();
    }

    for _ in 0..10 {
        let mut j = DMatrix::zeros(6, dim);
        let mut r = nalgebra::DVector::zeros(6);
        for (row, dv) in diffs.iter().enumerate() {
            let v: Vector3<f64> = (0..dim).map(|a| dv[a] * betas[a]).sum();
            r[row] = v.norm_squared() - d2[row];
            for a in 0..dim {
                j[(row, a)] = 2.0 * v.dot(&dv[a]);
            }
        }
        let jt = j.transpose();
        let Some(step) = (&jt * &j).lu().solve(&(&jt * r)) else { break };
        for a in 0..dim {
            betas[a] -= step[a];
        }
        if step.norm() < 1e-14 {
            break;
        }
    }
    betas.iter().all(|b| b.is_finite()).then_some(betas)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn reprojection_cost(tf: &CameraTransform, pts: &[Vector3<f64>], px: &[Vector2<f64>], k: &CameraIntrinsics) -> f64 {
    pts.iter()
        .zip(px)
        .map(|(x, u)| match tf.project(x, k) {
            Some(p) => (p - u).norm_squared(),
            None => 1e12,
        })
        .sum()
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Levenberg–Marquardt on squared reprojection error; only cost-reducing
/// steps are accepted, so the result is never worse than the seed.
pub fn refine_pose(
    tf: &CameraTransform,
    pts: &[Vector3<f64>],
    px: &[Vector2<f64>],
    k: &CameraIntrinsics,
    max_iters: usize,
) -> (CameraTransform, RefineReport) {
    let mut cur = *tf;
    let mut cost = reprojection_cost(&cur, pts, px, k);
    let initial_cost = cost;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (x, u) in pts.iter().zip(px) {
            let rx = cur.r * x;
            let p = rx + cur.t;
            if p.z <= 1e-9 {
                continue;
            }
            let iz = 1.0 / p.z;
            let dpi = nalgebra::Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * p.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * p.y * iz * iz,
            );
            let mut dp = nalgebra::Matrix3x6::zeros();
            dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rx)));
            dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = dpi * dp;
            let r = Vector2::new(k.fx * p.x * iz + k.cx - u.x, k.fy * p.y * iz + k.cy - u.y);
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        if g.norm() < 1e-12 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-9);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let omega = Vector3::new(step[0], step[1], step[2]);
            let cand = CameraTransform {
                r: Rotation3::new(omega).into_inner() * cur.r,
                t: cur.t + Vector3::new(step[3], step[4], step[5]),
            };
            let c = reprojection_cost(&cand, pts, px, k);
            if c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                cur = cand;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < 1e-12 || step.norm() < 1e-12 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    (
        cur,
        RefineReport {
            initial_cost,
            final_cost: cost,
            iterations,
            converged,
        },
    )
}
