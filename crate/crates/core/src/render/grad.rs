//! Analytic backward pass of the splat renderer.
//!
//! Stage 1 accumulates per-splat screen-space gradients (projected mean,
//! inverse-covariance quadratic form, opacity, color) over all pixels, in
//! fixed row bands merged in band order so the result is bit-identical for
//! any thread count. Stage 2 chains each splat's screen gradients through the
//! projection Jacobian, the covariance factorization and the SH evaluation to
//! the primitive parameters.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::{prepare_splats, proj_jacobian, Prepared, RenderOutput, ALPHA_MAX, DEPTH_ALPHA_EPS, SH_C1};
use crate::buffer::{DepthBuffer, ImageBuffer};
use crate::scene::{quat_normalize, Camera, GaussianSet};

/// Per-primitive loss gradients, shaped like the primitive fields.
/// Primitives with no pixel coverage have exactly-zero blocks.
#[derive(Debug, Clone)]
pub struct ParamGradients {
    pub d_mean: Vec<[f64; 3]>,
    pub d_log_scale: Vec<[f64; 3]>,
    pub d_rotation: Vec<[f64; 4]>,
    pub d_opacity_logit: Vec<f64>,
    pub d_sh: Vec<Vec<[f64; 3]>>,
}

impl ParamGradients {
    pub fn zeros_like(set: &GaussianSet) -> Self {
        let n = set.primitives.len();
        ParamGradients {
            d_mean: vec![[0.0; 3]; n],
            d_log_scale: vec![[0.0; 3]; n],
            d_rotation: vec![[0.0; 4]; n],
            d_opacity_logit: vec![0.0; n],
            d_sh: set
                .primitives
                .iter()
                .map(|g| vec![[0.0; 3]; g.sh_coeffs.len()])
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_mean.iter().flatten().all(|v| v.is_finite())
            && self.d_log_scale.iter().flatten().all(|v| v.is_finite())
            && self.d_rotation.iter().flatten().all(|v| v.is_finite())
            && self.d_opacity_logit.iter().all(|v| v.is_finite())
            && self
                .d_sh
                .iter()
                .flatten()
                .flatten()
                .all(|v| v.is_finite())
    }
}

/// Screen-space accumulator layout per splat:
/// [d_mean2d.x, d_mean2d.y, quad_xx, quad_xy, quad_yy, d_delta, d_r, d_g, d_b]
const SG: usize = 9;
/// Rows per gradient band. Fixed so the band partition (and therefore the
/// merge order) depends only on the image height, never on thread count.
const BAND_ROWS: usize = 8;

#[allow(clippy::too_many_arguments)]
fn backward_rows(
    y0: usize,
    width: usize,
    splats: &[Prepared],
    background: [f64; 3],
    loss_grad: &ImageBuffer,
    img_rows: &mut [f64],
    depth_rows: &mut [f64],
    alpha_rows: &mut [f64],
    grads: &mut [f64],
) {
    let rows = depth_rows.len() / width;
    let mut contribs: Vec<(usize, f64, f64)> = Vec::new();
    for r in 0..rows {
        let y = y0 + r;
        let py = y as f64 + 0.5;
        let row_splats: Vec<(usize, &Prepared)> = splats
            .iter()
            .enumerate()
            .filter(|(_, s)| (py - s.mean2d.y).abs() <= s.radius)
            .collect();
        for x in 0..width {
            let px = x as f64 + 0.5;
            contribs.clear();
            let mut color = [0.0f64; 3];
            let mut depth_acc = 0.0;
            let mut transmittance = 1.0;
            for &(si, s) in &row_splats {
                let dx = px - s.mean2d.x;
                if dx.abs() > s.radius {
                    continue;
                }
                let dy = py - s.mean2d.y;
                let rho = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                let g = (-0.5 * rho).exp();
                let alpha = (s.opacity * g).min(ALPHA_MAX);
                let w = alpha * transmittance;
                for c in 0..3 {
                    color[c] += s.color[c] * w;
                }
                depth_acc += s.depth * w;
                transmittance *= 1.0 - alpha;
                contribs.push((si, alpha, g));
            }
            let accumulated = 1.0 - transmittance;
            let base = (r * width + x) * 3;
            for c in 0..3 {
                img_rows[base + c] = color[c] + background[c] * transmittance;
            }
            depth_rows[r * width + x] = if accumulated > DEPTH_ALPHA_EPS {
                depth_acc / accumulated
            } else {
                0.0
            };
            alpha_rows[r * width + x] = accumulated;

            // Backward walk, front to back. `rest` holds the color composed
            // behind the current splat (including the background term).
            let lg = loss_grad.get(x, y);
            if lg == [0.0, 0.0, 0.0] {
                continue;
            }
            let mut rest = [
                color[0] + background[0] * transmittance,
                color[1] + background[1] * transmittance,
                color[2] + background[2] * transmittance,
            ];
            let mut t_run = 1.0;
            for &(si, alpha, g) in &contribs {
                let s = &splats[si];
                let w = alpha * t_run;
                let mut d_alpha = 0.0;
                let slot = &mut grads[si * SG..(si + 1) * SG];
                for c in 0..3 {
                    rest[c] -= s.color[c] * w;
                    d_alpha += lg[c] * (s.color[c] * t_run - rest[c] / (1.0 - alpha));
                    slot[6 + c] += lg[c] * w;
                }
                if s.opacity * g < ALPHA_MAX {
                    slot[5] += g * d_alpha;
                    let d_rho = d_alpha * s.opacity * (-0.5 * g);
                    let dx = px - s.mean2d.x;
                    let dy = py - s.mean2d.y;
                    slot[2] += d_rho * dx * dx;
                    slot[3] += d_rho * dx * dy;
                    slot[4] += d_rho * dy * dy;
                    slot[0] += d_rho * (-2.0) * (s.conic[0] * dx + s.conic[1] * dy);
                    slot[1] += d_rho * (-2.0) * (s.conic[1] * dx + s.conic[2] * dy);
                }
                t_run *= 1.0 - alpha;
            }
        }
    }
}

/// Partials of R(q) entries with respect to the unit quaternion components.
/// Returns dL/dq for a loss gradient on the rotation matrix.
fn quat_matrix_backward(q: [f64; 4], dl_dr: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let g = dl_dr;
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [dw, dx, dy, dz]
}

struct SplatGrads {
    prim_index: usize,
    d_mean: Vector3<f64>,
    d_log_scale: [f64; 3],
    d_rotation: [f64; 4],
    d_opacity_logit: f64,
    d_sh: Vec<[f64; 3]>,
}

fn chain_to_params(
    set: &GaussianSet,
    cam: &Camera,
    prep: &Prepared,
    screen: &[f64],
) -> SplatGrads {
    let g = &set.primitives[prep.prim_index];
    let mean = g.mean_v();
    let t = cam.world_to_camera(&mean);
    let rotm = g.rotation_matrix();
    let s = g.scales();
    let a_mat = rotm * Matrix3::from_diagonal(&s);
    let sigma = a_mat * a_mat.transpose();
    let j = proj_jacobian(cam, &t);
    let m = j * cam.rotation_w2c;

    // dL/dQ (Q = conic) accumulated as the symmetric quadratic-form factor;
    // Q = cov2d^-1 gives dL/dcov2d = -Q (dL/dQ) Q.
    let q = Matrix2::new(prep.conic[0], prep.conic[1], prep.conic[1], prep.conic[2]);
    let ghat = Matrix2::new(screen[2], screen[3], screen[3], screen[4]);
    let g2 = -(q * ghat * q);

    let g_sigma = m.transpose() * g2 * m;
    let dl_dm = (g2 + g2.transpose()) * m * sigma;
    let dl_dj = dl_dm * cam.rotation_w2c.transpose();

    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut dl_dt = Vector3::new(
        dl_dj[(0, 2)] * (-cam.fx * iz2),
        dl_dj[(1, 2)] * (-cam.fy * iz2),
        dl_dj[(0, 0)] * (-cam.fx * iz2)
            + dl_dj[(1, 1)] * (-cam.fy * iz2)
            + dl_dj[(0, 2)] * (2.0 * cam.fx * t.x * iz3)
            + dl_dj[(1, 2)] * (2.0 * cam.fy * t.y * iz3),
    );
    let d_mean2d = Vector2::new(screen[0], screen[1]);
    dl_dt += j.transpose() * d_mean2d;
    let mut d_mean = cam.rotation_w2c.transpose() * dl_dt;

    let dl_da = 2.0 * g_sigma * a_mat;
    let rt_dla = rotm.transpose() * dl_da;
    let d_log_scale = [
        s.x * rt_dla[(0, 0)],
        s.y * rt_dla[(1, 1)],
        s.z * rt_dla[(2, 2)],
    ];
    let dl_dr = dl_da * Matrix3::from_diagonal(&s);

    let qn = quat_normalize(g.rotation);
    let dq_hat = quat_matrix_backward(qn, &dl_dr);
    // Project onto the tangent of the unit sphere; accounts for the
    // normalization inside rotation_matrix().
    let raw_norm: f64 = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = qn.iter().zip(&dq_hat).map(|(a, b)| a * b).sum();
    let mut d_rotation = [0.0; 4];
    for k in 0..4 {
        d_rotation[k] = (dq_hat[k] - qn[k] * dot) / raw_norm;
    }

    let delta = prep.opacity;
    let d_opacity_logit = delta * (1.0 - delta) * screen[5];

    let mut dcol = [screen[6], screen[7], screen[8]];
    for c in 0..3 {
        if prep.color_clamped[c] {
            dcol[c] = 0.0;
        }
    }
    let mut d_sh = vec![[0.0; 3]; g.sh_coeffs.len()];
    d_sh[0] = dcol;
    if g.sh_coeffs.len() >= 4 {
        let dir_un = mean - cam.center();
        let norm = dir_un.norm();
        let dir = dir_un / norm;
        let mut d_dir = Vector3::zeros();
        for c in 0..3 {
            d_sh[1][c] = -SH_C1 * dir.y * dcol[c];
            d_sh[2][c] = SH_C1 * dir.z * dcol[c];
            d_sh[3][c] = -SH_C1 * dir.x * dcol[c];
            d_dir += dcol[c]
                * SH_C1
                * Vector3::new(-g.sh_coeffs[3][c], -g.sh_coeffs[1][c], g.sh_coeffs[2][c]);
        }
        d_mean += (Matrix3::identity() - dir * dir.transpose()) * d_dir / norm;
    }

    SplatGrads {
        prim_index: prep.prim_index,
        d_mean,
        d_log_scale,
        d_rotation,
        d_opacity_logit,
        d_sh,
    }
}

/// Renders the set and returns the loss gradient with respect to every
/// primitive parameter, for the per-pixel image gradient `loss_grad`.
/// The returned `RenderOutput` is bit-identical to [`super::render`].
pub fn render_with_grad(
    set: &GaussianSet,
    cam: &Camera,
    loss_grad: &ImageBuffer,
) -> (RenderOutput, ParamGradients) {
    assert_eq!(
        (loss_grad.width, loss_grad.height),
        (cam.width, cam.height),
        "loss gradient dimensions must match the camera"
    );
    let splats = prepare_splats(set, cam);
    let (w, h) = (cam.width, cam.height);
    let mut image = ImageBuffer::new(w, h);
    let mut depth = DepthBuffer::new(w, h);
    let mut alpha = vec![0.0f64; w * h];

    let band_grads: Vec<Vec<f64>> = image
        .pixels
        .par_chunks_mut(BAND_ROWS * w * 3)
        .zip(depth.values.par_chunks_mut(BAND_ROWS * w))
        .zip(alpha.par_chunks_mut(BAND_ROWS * w))
        .enumerate()
        .map(|(band, ((img_rows, depth_rows), alpha_rows))| {
            let mut grads = vec![0.0f64; splats.len() * SG];
            backward_rows(
                band * BAND_ROWS,
                w,
                &splats,
                set.background_color,
                loss_grad,
                img_rows,
                depth_rows,
                alpha_rows,
                &mut grads,
            );
            grads
        })
        .collect();

    // Merge bands in fixed order.
    let mut screen = vec![0.0f64; splats.len() * SG];
    for band in &band_grads {
        for (acc, v) in screen.iter_mut().zip(band) {
            *acc += v;
        }
    }

    let per_splat: Vec<SplatGrads> = splats
        .par_iter()
        .enumerate()
        .map(|(si, prep)| chain_to_params(set, cam, prep, &screen[si * SG..(si + 1) * SG]))
        .collect();

    let mut grads = ParamGradients::zeros_like(set);
    for sg in per_splat {
        let i = sg.prim_index;
        for k in 0..3 {
            grads.d_mean[i][k] = sg.d_mean[k];
            grads.d_log_scale[i][k] = sg.d_log_scale[k];
        }
        grads.d_rotation[i] = sg.d_rotation;
        grads.d_opacity_logit[i] = sg.d_opacity_logit;
        grads.d_sh[i] = sg.d_sh;
    }
    (RenderOutput { image, depth, alpha }, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::render;
    use crate::scene::{logit, GaussianPrimitive};
    use rand::Rng;

    fn random_scene(seed: u64, n: usize) -> (GaussianSet, Camera) {
        let mut rng = crate::rng::seeded_rng(seed, &[0xABCD]);
        let prims = (0..n)
            .map(|_| {
                let q = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                GaussianPrimitive {
                    mean: [
                        rng.gen_range(-0.28..0.28),
                        rng.gen_range(-0.28..0.28),
                        rng.gen_range(1.4..2.6),
                    ],
                    log_scale: [
                        rng.gen_range(0.03f64..0.09).ln(),
                        rng.gen_range(0.03f64..0.09).ln(),
                        rng.gen_range(0.03f64..0.09).ln(),
                    ],
                    rotation: crate::scene::quat_normalize(q),
                    opacity_logit: logit(rng.gen_range(0.2..0.9)),
                    sh_coeffs: vec![
                        [
                            rng.gen_range(0.15..0.85),
                            rng.gen_range(0.15..0.85),
                            rng.gen_range(0.15..0.85),
                        ],
                        [rng.gen_range(-0.03..0.03); 3],
                        [rng.gen_range(-0.03..0.03); 3],
                        [rng.gen_range(-0.03..0.03); 3],
                    ],
                }
            })
            .collect();
        let cam = Camera {
            fx: 32.0,
            fy: 32.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
            rotation_w2c: Matrix3::identity(),
            translation_w2c: Vector3::zeros(),
        };
        (GaussianSet { primitives: prims, background_color: [0.1, 0.12, 0.15] }, cam)
    }

    fn mse_and_grad(set: &GaussianSet, cam: &Camera, target: &ImageBuffer) -> (f64, ImageBuffer) {
        let out = render(set, cam);
        let n = out.image.pixels.len() as f64;
        let mut grad = ImageBuffer::new(cam.width, cam.height);
        let mut loss = 0.0;
        for (i, (&p, &t)) in out.image.pixels.iter().zip(&target.pixels).enumerate() {
            let d = p - t;
            loss += d * d / n;
            grad.pixels[i] = 2.0 * d / n;
        }
        (loss, grad)
    }

    /// Central-difference check of every parameter gradient on small random
    /// scenes. Tolerance: relative 1e-3 with absolute floor 1e-6.
    fn gradcheck_scene(seed: u64) -> (f64, usize) {
        let (set, cam) = random_scene(seed, 4);
        let mut rng = crate::rng::seeded_rng(seed, &[0xEEF]);
        let mut target = ImageBuffer::new(cam.width, cam.height);
        for v in &mut target.pixels {
            *v = rng.gen_range(0.0..1.0);
        }
        let (_, grad_img) = mse_and_grad(&set, &cam, &target);
        let (_, grads) = render_with_grad(&set, &cam, &grad_img);

        let eps = 1e-4;
        let mut worst = 0.0f64;
        let mut checked = 0usize;
        let mut fd = |set: &GaussianSet, mutate: &dyn Fn(&mut GaussianSet, f64), analytic: f64| {
            let mut plus = set.clone();
            mutate(&mut plus, eps);
            let mut minus = set.clone();
            mutate(&mut minus, -eps);
            let lp = mse_and_grad(&plus, &cam, &target).0;
            let lm = mse_and_grad(&minus, &cam, &target).0;
            let numeric = (lp - lm) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            let rel = (analytic - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
            checked += 1;
        };

        for i in 0..set.primitives.len() {
            for k in 0..3 {
                fd(&set, &|s, e| s.primitives[i].mean[k] += e, grads.d_mean[i][k]);
                fd(
                    &set,
                    &|s, e| s.primitives[i].log_scale[k] += e,
                    grads.d_log_scale[i][k],
                );
            }
            for k in 0..4 {
                fd(
                    &set,
                    &|s, e| s.primitives[i].rotation[k] += e,
                    grads.d_rotation[i][k],
                );
            }
            fd(
                &set,
                &|s, e| s.primitives[i].opacity_logit += e,
                grads.d_opacity_logit[i],
            );
            for j in 0..set.primitives[i].sh_coeffs.len() {
                for k in 0..3 {
                    fd(
                        &set,
                        &|s, e| s.primitives[i].sh_coeffs[j][k] += e,
                        grads.d_sh[i][j][k],
                    );
                }
            }
        }
        (worst, checked)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let (worst, checked) = gradcheck_scene(seed);
            assert!(checked > 0);
            assert!(
                worst < 1e-3,
                "seed {seed}: worst relative gradient error {worst:.3e}"
            );
        }
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradients() {
        let (set, cam) = random_scene(5, 6);
        let zeros = ImageBuffer::new(cam.width, cam.height);
        let (_, grads) = render_with_grad(&set, &cam, &zeros);
        assert!(grads.d_mean.iter().flatten().all(|&v| v == 0.0));
        assert!(grads.d_rotation.iter().flatten().all(|&v| v == 0.0));
        assert!(grads.d_opacity_logit.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_frustum_primitive_has_exact_zero_block() {
        let (mut set, cam) = random_scene(6, 3);
        set.primitives[1].mean = [0.0, 0.0, -3.0];
        let mut lg = ImageBuffer::new(cam.width, cam.height);
        for v in &mut lg.pixels {
            *v = 0.5;
        }
        let (_, grads) = render_with_grad(&set, &cam, &lg);
        assert_eq!(grads.d_mean[1], [0.0; 3]);
        assert_eq!(grads.d_log_scale[1], [0.0; 3]);
        assert_eq!(grads.d_rotation[1], [0.0; 4]);
        assert_eq!(grads.d_opacity_logit[1], 0.0);
        assert!(grads.d_sh[1].iter().all(|c| *c == [0.0; 3]));
    }

    #[test]
    fn forward_output_matches_plain_render() {
        let (set, cam) = random_scene(7, 8);
        let lg = ImageBuffer::filled(cam.width, cam.height, [0.3, -0.2, 0.1]);
        let (out, _) = render_with_grad(&set, &cam, &lg);
        let plain = render(&set, &cam);
        assert_eq!(out.image, plain.image);
        assert_eq!(out.depth, plain.depth);
        assert_eq!(out.alpha, plain.alpha);
    }
}
