use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use super::{
    project_with_degree, projection_parts, sh, BackwardOptions, MapGradients, PrimitiveGradients,
    RenderError, RenderedMaps, ALPHA_CLAMP, MIN_POWER, MIN_TRANSMITTANCE, TILE_SIZE,
};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::scene::{sh_rest_count, SceneModel};

/// Flattened per-view splat used by the inner loops.
#[derive(Debug, Clone, Copy)]
struct Splat {
    mx: f64,
    my: f64,
    ca: f64,
    cb: f64,
    cc: f64,
    opacity: f64,
    color: [f64; 3],
    depth: f64,
    score: f64,
    radius: f64,
    prim: u32,
}

#[inline(always)]
fn fragment(s: &Splat, px: f64, py: f64) -> Option<(f64, f64, f64, f64)> {
    let dx = px - s.mx;
    let dy = py - s.my;
    let power = -0.5 * (s.ca * dx * dx + s.cc * dy * dy) - s.cb * dx * dy;
    if !(MIN_POWER..=0.0).contains(&power) {
        return None;
    }
    Some((power.exp(), power, dx, dy))
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardState {
    revision: u64,
    pose: Pose,
    k: CameraIntrinsics,
    prim_count: usize,
    splats: Vec<Splat>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    n_contrib: Vec<u32>,
    final_t: Vec<f64>,
}

impl ForwardState {
    /// Number of primitives that survived culling.
    pub fn visible_count(&self) -> usize {
        self.splats.len()
    }

    /// Per-pixel transmittance sequence along the sorted traversal.
    pub fn transmittance_trace(&self, x: usize, y: usize) -> Vec<f64> {
        let tile = (y / TILE_SIZE) * self.tiles_x + x / TILE_SIZE;
        let n = self.n_contrib[y * self.k.width + x] as usize;
        let mut t = 1.0;
        let mut trace = vec![t];
        for &si in &self.tiles[tile][..n] {
            let s = &self.splats[si as usize];
            if let Some((g, ..)) = fragment(s, x as f64, y as f64) {
                let alpha = (s.opacity * g).min(ALPHA_CLAMP);
                t *= 1.0 - alpha;
                trace.push(t);
            }
        }
        trace
    }
}

fn tile_grid(k: &CameraIntrinsics) -> (usize, usize) {
    (k.width.div_ceil(TILE_SIZE), k.height.div_ceil(TILE_SIZE))
}

fn prepare(scene: &SceneModel, pose: &Pose, k: &CameraIntrinsics) -> (Vec<Splat>, Vec<Vec<u32>>, usize) {
    let sh_degree = scene.sh_degree();
    let mut splats: Vec<Splat> = scene
        .primitives()
        .par_iter()
        .enumerate()
        .filter_map(|(i, prim)| {
            let pg = project_with_degree(prim, sh_degree, pose, k).ok()?;
            let r = pg.radius;
            if pg.mu2d.x + r < -0.5
                || pg.mu2d.y + r < -0.5
                || pg.mu2d.x - r > k.width as f64 - 0.5
                || pg.mu2d.y - r > k.height as f64 - 0.5
            {
                return None;
            }
            Some(Splat {
                mx: pg.mu2d.x,
                my: pg.mu2d.y,
                ca: pg.conic[(0, 0)],
                cb: pg.conic[(0, 1)],
                cc: pg.conic[(1, 1)],
                opacity: pg.opacity,
                color: [pg.color.x, pg.color.y, pg.color.z],
                depth: pg.depth,
                score: pg.score,
                radius: pg.radius,
                prim: i as u32,
            })
        })
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.prim.cmp(&b.prim)));

    let (tx, ty) = tile_grid(k);
    let mut tiles = vec![Vec::new(); tx * ty];
    for (si, s) in splats.iter().enumerate() {
        let r = s.radius;
        let x0 = ((s.mx - r).max(0.0) / TILE_SIZE as f64).floor() as usize;
        let y0 = ((s.my - r).max(0.0) / TILE_SIZE as f64).floor() as usize;
        let x1 = (((s.mx + r) / TILE_SIZE as f64).floor() as i64).min(tx as i64 - 1);
        let y1 = (((s.my + r) / TILE_SIZE as f64).floor() as i64).min(ty as i64 - 1);
        if x1 < 0 || y1 < 0 {
            continue;
        }
        for tyi in y0..=y1 as usize {
            for txi in x0..=x1 as usize {
                tiles[tyi * tx + txi].push(si as u32);
            }
        }
    }
    (splats, tiles, tx)
}

/// Renders all maps for one view.
pub fn render(scene: &SceneModel, pose: &Pose, k: &CameraIntrinsics) -> RenderedMaps {
    render_with_state(scene, pose, k).0
}

struct TilePixels {
    color: Vec<[f64; 3]>,
    depth: Vec<f64>,
    score: Vec<f64>,
    t: Vec<f64>,
    n: Vec<u32>,
}

/// Forward pass that also returns the state required by [`render_backward`].
pub fn render_with_state(scene: &SceneModel, pose: &Pose, k: &CameraIntrinsics) -> (RenderedMaps, ForwardState) {
    let (w, h) = (k.width, k.height);
    let (splats, tiles, tiles_x) = prepare(scene, pose, k);

    let per_tile: Vec<TilePixels> = tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let x0 = (ti % tiles_x) * TILE_SIZE;
            let y0 = (ti / tiles_x) * TILE_SIZE;
            let x1 = (x0 + TILE_SIZE).min(w);
            let y1 = (y0 + TILE_SIZE).min(h);
            let npx = (x1 - x0) * (y1 - y0);
            let mut out = TilePixels {
                color: Vec::with_capacity(npx),
                depth: Vec::with_capacity(npx),
                score: Vec::with_capacity(npx),
                t: Vec::with_capacity(npx),
                n: Vec::with_capacity(npx),
            };
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (x as f64, y as f64);
                    let mut t = 1.0;
                    let mut c = [0.0; 3];
                    let mut d = 0.0;
                    let mut a = 0.0;
                    let mut last = 0;
                    for (pos, &si) in list.iter().enumerate() {
                        let s = &splats[si as usize];
                        let Some((g, ..)) = fragment(s, px, py) else {
                            continue;
                        };
                        let alpha = (s.opacity * g).min(ALPHA_CLAMP);
                        let wgt = alpha * t;
                        c[0] += s.color[0] * wgt;
                        c[1] += s.color[1] * wgt;
                        c[2] += s.color[2] * wgt;
                        d += s.depth * wgt;
                        a += s.score * wgt;
                        t *= 1.0 - alpha;
                        last = pos + 1;
                        if t < MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    out.color.push(c);
                    out.depth.push(d);
                    out.score.push(a);
                    out.t.push(t);
                    out.n.push(last as u32);
                }
            }
            out
        })
        .collect();

    let mut maps = RenderedMaps::zeros(w, h);
    let mut n_contrib = vec![0u32; w * h];
    let mut final_t = vec![1.0; w * h];
    for (ti, tp) in per_tile.iter().enumerate() {
        let x0 = (ti % tiles_x) * TILE_SIZE;
        let y0 = (ti / tiles_x) * TILE_SIZE;
        let x1 = (x0 + TILE_SIZE).min(w);
        let mut i = 0;
        for y in y0..(y0 + TILE_SIZE).min(h) {
            for x in x0..x1 {
                let p = y * w + x;
                maps.color.set(x, y, tp.color[i]);
                maps.depth.data[p] = tp.depth[i];
                maps.score.data[p] = tp.score[i];
                maps.alpha.data[p] = 1.0 - tp.t[i];
                n_contrib[p] = tp.n[i];
                final_t[p] = tp.t[i];
                i += 1;
            }
        }
    }

    let state = ForwardState {
        revision: scene.revision(),
        pose: *pose,
        k: *k,
        prim_count: scene.len(),
        splats,
        tiles,
        tiles_x,
        n_contrib,
        final_t,
    };
    (maps, state)
}

/// Screen-space gradient of one splat.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    mx: f64,
    my: f64,
    ca: f64,
    cb: f64,
    cc: f64,
    opacity: f64,
    color: [f64; 3],
    depth: f64,
    score: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.mx += o.mx;
        self.my += o.my;
        self.ca += o.ca;
        self.cb += o.cb;
        self.cc += o.cc;
        self.opacity += o.opacity;
        for c in 0..3 {
            self.color[c] += o.color[c];
        }
        self.depth += o.depth;
        self.score += o.score;
    }
}

/// Gradients of a scalar loss with respect to every primitive parameter,
/// given ∂L/∂map for each rendered channel.
pub fn render_backward(
    scene: &SceneModel,
    pose: &Pose,
    k: &CameraIntrinsics,
    state: &ForwardState,
    grads: &MapGradients,
    opts: &BackwardOptions,
) -> Result<PrimitiveGradients, RenderError> {
    if state.revision != scene.revision() || state.prim_count != scene.len() {
        return Err(RenderError::StateMismatch(format!(
            "state revision {} / {} primitives, scene revision {} / {} primitives",
            state.revision,
            state.prim_count,
            scene.revision(),
            scene.len()
        )));
    }
    if state.pose != *pose || state.k != *k {
        return Err(RenderError::StateMismatch("pose or intrinsics differ from the forward pass".into()));
    }
    grads.check()?;
    if grads.width != k.width || grads.height != k.height {
        return Err(RenderError::ShapeMismatch(format!(
            "gradients are {}x{}, view is {}x{}",
            grads.width, grads.height, k.width, k.height
        )));
    }

    let (w, h) = (k.width, k.height);
    let splats = &state.splats;
    let tiles_x = state.tiles_x;

    let per_tile: Vec<Vec<SplatGrad>> = state
        .tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let mut local = vec![SplatGrad::default(); list.len()];
            if list.is_empty() {
                return local;
            }
            let x0 = (ti % tiles_x) * TILE_SIZE;
            let y0 = (ti / tiles_x) * TILE_SIZE;
            for y in y0..(y0 + TILE_SIZE).min(h) {
                for x in x0..(x0 + TILE_SIZE).min(w) {
                    let p = y * w + x;
                    let gc = [grads.color[3 * p], grads.color[3 * p + 1], grads.color[3 * p + 2]];
                    let gd = grads.depth[p];
                    let gs = grads.score[p];
                    let ga = grads.alpha[p];
                    if gc == [0.0; 3] && gd == 0.0 && gs == 0.0 && ga == 0.0 {
                        continue;
                    }
                    let (px, py) = (x as f64, y as f64);
                    let mut t = state.final_t[p];
                    let mut acc_c = [0.0; 3];
                    let mut acc_d = 0.0;
                    let mut acc_s = 0.0;
                    let mut acc_a = 0.0;
                    let mut last_alpha = 0.0;
                    let mut last_c = [0.0; 3];
                    let mut last_d = 0.0;
                    let mut last_s = 0.0;
                    let n = state.n_contrib[p] as usize;
                    for pos in (0..n).rev() {
                        let s = &splats[list[pos] as usize];
                        let Some((g, _, dx, dy)) = fragment(s, px, py) else {
                            continue;
                        };
                        let raw = s.opacity * g;
                        let alpha = raw.min(ALPHA_CLAMP);
                        t /= 1.0 - alpha;
                        for c in 0..3 {
                            acc_c[c] = last_alpha * last_c[c] + (1.0 - last_alpha) * acc_c[c];
                        }
                        acc_d = last_alpha * last_d + (1.0 - last_alpha) * acc_d;
                        acc_s = last_alpha * last_s + (1.0 - last_alpha) * acc_s;
                        acc_a = last_alpha + (1.0 - last_alpha) * acc_a;

                        let wgt = alpha * t;
                        let lg = &mut local[pos];
                        for c in 0..3 {
                            lg.color[c] += wgt * gc[c];
                        }
                        lg.depth += wgt * gd;
                        lg.score += wgt * gs;

                        let mut dl_dalpha = (ga) * (1.0 - acc_a);
                        for c in 0..3 {
                            dl_dalpha += (s.color[c] - acc_c[c]) * gc[c];
                        }
                        dl_dalpha += (s.depth - acc_d) * gd + (s.score - acc_s) * gs;
                        dl_dalpha *= t;

                        last_alpha = alpha;
                        last_c = s.color;
                        last_d = s.depth;
                        last_s = s.score;

                        if raw < ALPHA_CLAMP {
                            lg.opacity += dl_dalpha * g;
                            let dpower = dl_dalpha * s.opacity * g;
                            lg.mx += dpower * (s.ca * dx + s.cb * dy);
                            lg.my += dpower * (s.cb * dx + s.cc * dy);
                            lg.ca += dpower * (-0.5 * dx * dx);
                            lg.cb += dpower * (-dx * dy);
                            lg.cc += dpower * (-0.5 * dy * dy);
                        }
                    }
                }
            }
            local
        })
        .collect();

    // Deterministic merge in tile order.
    let mut splat_grads = vec![SplatGrad::default(); splats.len()];
    for (list, local) in state.tiles.iter().zip(&per_tile) {
        for (&si, g) in list.iter().zip(local) {
            splat_grads[si as usize].add(g);
        }
    }

    let sh_degree = scene.sh_degree();
    let n_rest = sh_rest_count(sh_degree);
    let mut out = PrimitiveGradients::zeros(scene.len(), sh_degree);
    let prims = scene.primitives();
    let chained: Vec<(usize, PrimGrad)> = splats
        .par_iter()
        .zip(splat_grads.par_iter())
        .map(|(s, sg)| {
            let i = s.prim as usize;
            (i, chain_to_primitive(&prims[i], sh_degree, pose, k, sg))
        })
        .collect();
    for (i, g) in chained {
        out.mu[i] = if opts.freeze_key_centers && prims[i].is_key {
            Vector3::zeros()
        } else {
            g.mu
        };
        out.q[i] = g.q;
        out.log_scale[i] = g.log_scale;
        out.opacity_logit[i] = g.opacity_logit;
        out.color[i] = g.color;
        out.landmark_logit[i] = g.landmark_logit;
        for (r, v) in g.sh_rest.iter().enumerate() {
            out.sh_rest[i * n_rest + r] = *v;
        }
    }
    Ok(out)
}

struct PrimGrad {
    mu: Vector3<f64>,
    q: [f64; 4],
    log_scale: Vector3<f64>,
    opacity_logit: f64,
    color: Vector3<f64>,
    sh_rest: Vec<[f64; 3]>,
    landmark_logit: f64,
}

fn chain_to_primitive(
    prim: &crate::scene::GaussianPrimitive,
    sh_degree: u8,
    pose: &Pose,
    k: &CameraIntrinsics,
    sg: &SplatGrad,
) -> PrimGrad {
    let parts = projection_parts(prim, pose, k).expect("culled primitives never reach backward");
    let (x, y, z) = (parts.p_cam.x, parts.p_cam.y, parts.p_cam.z);
    let t_mat = parts.j * parts.w;

    // Conic (a, b, c) → full symmetric matrix gradient → Σ̃ gradient.
    let cov2d = {
        let mut c = t_mat * parts.cov3d * t_mat.transpose();
        c[(0, 0)] += super::LOWPASS;
        c[(1, 1)] += super::LOWPASS;
        let off = 0.5 * (c[(0, 1)] + c[(1, 0)]);
        c[(0, 1)] = off;
        c[(1, 0)] = off;
        c
    };
    let conic = cov2d.try_inverse().unwrap_or_else(Matrix2::zeros);
    let g_conic = Matrix2::new(sg.ca, 0.5 * sg.cb, 0.5 * sg.cb, sg.cc);
    let g_cov2d = -(conic * g_conic * conic);

    let g_cov3d = t_mat.transpose() * g_cov2d * t_mat;
    let g_t = 2.0 * g_cov2d * t_mat * parts.cov3d;
    let g_j = g_t * parts.w.transpose();

    let (fx, fy) = (k.fx, k.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut g_pc = Vector3::zeros();
    g_pc.z += g_j[(0, 0)] * (-fx / z2);
    // Clamped entries are −f·t/z with t constant.
    match parts.clamped[0] {
        None => {
            g_pc.x += g_j[(0, 2)] * (-fx / z2);
            g_pc.z += g_j[(0, 2)] * (2.0 * fx * x / z3);
        }
        Some(t) => g_pc.z += g_j[(0, 2)] * (fx * t / z2),
    }
    g_pc.z += g_j[(1, 1)] * (-fy / z2);
    match parts.clamped[1] {
        None => {
            g_pc.y += g_j[(1, 2)] * (-fy / z2);
            g_pc.z += g_j[(1, 2)] * (2.0 * fy * y / z3);
        }
        Some(t) => g_pc.z += g_j[(1, 2)] * (fy * t / z2),
    }
    g_pc.x += sg.mx * fx / z;
    g_pc.z += sg.mx * (-fx * x / z2);
    g_pc.y += sg.my * fy / z;
    g_pc.z += sg.my * (-fy * y / z2);
    g_pc.z += sg.depth;
    let mut g_mu = parts.w.transpose() * g_pc;

    // Color: base plus spherical-harmonics rest through the view direction.
    let g_col = Vector3::from(sg.color);
    let n_rest = sh_rest_count(sh_degree).min(prim.sh_rest.len());
    let mut g_rest = vec![[0.0; 3]; sh_rest_count(sh_degree)];
    if n_rest > 0 {
        let norm = parts.view.norm();
        if norm > 1e-12 {
            let dir = parts.view / norm;
            let mut basis = [0.0; 15];
            let mut jac = [Vector3::zeros(); 15];
            sh::basis(&dir, n_rest, &mut basis);
            sh::basis_jacobian(&dir, n_rest, &mut jac);
            let mut g_dir = Vector3::zeros();
            for r in 0..n_rest {
                g_rest[r] = [g_col.x * basis[r], g_col.y * basis[r], g_col.z * basis[r]];
                let coeff = Vector3::from(prim.sh_rest[r]);
                g_dir += jac[r] * g_col.dot(&coeff);
            }
            let g_view = (g_dir - dir * dir.dot(&g_dir)) / norm;
            g_mu += g_view;
        }
    }

    // Σ = M Mᵀ, M = R S.
    let s_mat = Matrix3::from_diagonal(&parts.scale);
    let m = parts.rot * s_mat;
    let g_m = 2.0 * g_cov3d * m;
    let g_s = parts.rot.transpose() * g_m;
    let log_scale = Vector3::new(
        g_s[(0, 0)] * parts.scale.x,
        g_s[(1, 1)] * parts.scale.y,
        g_s[(2, 2)] * parts.scale.z,
    );
    let g_r = g_m * s_mat;
    let q = quat_gradient(&prim.q, &g_r);

    let op = prim.opacity();
    let a = prim.landmark_probability();
    PrimGrad {
        mu: g_mu,
        q,
        log_scale,
        opacity_logit: sg.opacity * op * (1.0 - op),
        color: g_col,
        sh_rest: g_rest,
        landmark_logit: sg.score * a * (1.0 - a),
    }
}

/// ∂L/∂q (raw, unnormalized `[w,x,y,z]`) from ∂L/∂R where R = R(q/‖q‖).
fn quat_gradient(q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gn = [gw, gx, gy, gz];
    let qn = [w, x, y, z];
    let dot: f64 = gn.iter().zip(&qn).map(|(a, b)| a * b).sum();
    [
        (gn[0] - qn[0] * dot) / n,
        (gn[1] - qn[1] * dot) / n,
        (gn[2] - qn[2] * dot) / n,
        (gn[3] - qn[3] * dot) / n,
    ]
}
