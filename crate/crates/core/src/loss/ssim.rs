//! SSIM over an 11x11 Gaussian window (sigma 1.5), valid-window convention,
//! with the analytic gradient with respect to the first image.
//!
//! Moment maps and the gradient back-spread are separable convolutions, so a
//! full forward+backward pass costs a few multiplies per pixel per tap.

use crate::buffer::{BinaryMask, ImageBuffer};

pub const WINDOW: usize = 11;
const HALF: usize = WINDOW / 2;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - HALF as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-mode separable convolution of a full plane: output is
/// (w - 10) x (h - 10), indexed by window position.
fn conv_valid(plane: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let mut tmp = vec![0.0; vw * h];
    for y in 0..h {
        for vx in 0..vw {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + vx + t];
            }
            tmp[y * vw + vx] = acc;
        }
    }
    let mut out = vec![0.0; vw * vh];
    for vy in 0..vh {
        for vx in 0..vw {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * tmp[(vy + t) * vw + vx];
            }
            out[vy * vw + vx] = acc;
        }
    }
    out
}

/// Transpose of [`conv_valid`]: spreads a valid-grid map back onto the full
/// pixel grid with the same kernel weights.
fn spread_valid(valid: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let mut tmp = vec![0.0; w * vh];
    for vy in 0..vh {
        for vx in 0..vw {
            let v = valid[vy * vw + vx];
            if v == 0.0 {
                continue;
            }
            for (t, kv) in k.iter().enumerate() {
                tmp[vy * w + vx + t] += kv * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for vy in vy_range(y, vh) {
            let kv = k[y - vy];
            if kv == 0.0 {
                continue;
            }
            for x in 0..w {
                out[y * w + x] += kv * tmp[vy * w + x];
            }
        }
    }
    out
}

#[inline]
fn vy_range(y: usize, vh: usize) -> std::ops::Range<usize> {
    let lo = y.saturating_sub(WINDOW - 1);
    let hi = (y + 1).min(vh);
    lo..hi
}

fn channel_plane(img: &ImageBuffer, c: usize) -> Vec<f64> {
    img.pixels.iter().skip(c).step_by(3).copied().collect()
}

/// Per-channel SSIM statistics on the valid-window grid.
struct ChannelMoments {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov_ab: Vec<f64>,
}

fn moments(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> ChannelMoments {
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = conv_valid(a, w, h, k);
    let mu_b = conv_valid(b, w, h, k);
    let e_aa = conv_valid(&aa, w, h, k);
    let e_bb = conv_valid(&bb, w, h, k);
    let e_ab = conv_valid(&ab, w, h, k);
    let var_a: Vec<f64> = e_aa
        .iter()
        .zip(&mu_a)
        .map(|(e, m)| e - m * m)
        .collect();
    let var_b: Vec<f64> = e_bb
        .iter()
        .zip(&mu_b)
        .map(|(e, m)| e - m * m)
        .collect();
    let cov_ab: Vec<f64> = e_ab
        .iter()
        .zip(mu_a.iter().zip(&mu_b))
        .map(|(e, (ma, mb))| e - ma * mb)
        .collect();
    ChannelMoments { mu_a, mu_b, var_a, var_b, cov_ab }
}

#[inline]
fn ssim_terms(ma: f64, mb: f64, va: f64, vb: f64, cab: f64) -> (f64, f64, f64, f64, f64) {
    let a1 = 2.0 * ma * mb + C1;
    let a2 = 2.0 * cab + C2;
    let b1 = ma * ma + mb * mb + C1;
    let b2 = va + vb + C2;
    (a1, a2, b1, b2, (a1 * a2) / (b1 * b2))
}

/// Result of an SSIM evaluation: mean SSIM plus (optionally) the gradient of
/// the mean with respect to the first image.
pub struct SsimEval {
    pub mean: f64,
    pub grad: Option<ImageBuffer>,
}

/// Which valid windows participate: all of them, or a boolean subset.
enum WindowSel<'a> {
    All,
    Subset(&'a [bool]),
}

fn ssim_eval(a: &ImageBuffer, b: &ImageBuffer, sel: WindowSel, with_grad: bool) -> SsimEval {
    let (w, h) = (a.width, a.height);
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let k = kernel();
    let n_windows = match &sel {
        WindowSel::All => vw * vh,
        WindowSel::Subset(inc) => inc.iter().filter(|&&i| i).count(),
    };
    if n_windows == 0 {
        return SsimEval {
            mean: 1.0,
            grad: with_grad.then(|| ImageBuffer::new(w, h)),
        };
    }
    let mut total = 0.0;
    let mut grad = with_grad.then(|| ImageBuffer::new(w, h));
    for c in 0..3 {
        let pa = channel_plane(a, c);
        let pb = channel_plane(b, c);
        let m = moments(&pa, &pb, w, h, &k);
        let mut p_map = vec![0.0; vw * vh];
        let mut q_map = vec![0.0; vw * vh];
        let mut r_map = vec![0.0; vw * vh];
        let mut qmu_map = vec![0.0; vw * vh];
        let mut rmu_map = vec![0.0; vw * vh];
        for j in 0..vw * vh {
            if let WindowSel::Subset(inc) = &sel {
                if !inc[j] {
                    continue;
                }
            }
            let (a1, a2, b1, b2, s) =
                ssim_terms(m.mu_a[j], m.mu_b[j], m.var_a[j], m.var_b[j], m.cov_ab[j]);
            total += s;
            if with_grad {
                let p = 2.0 * m.mu_b[j] * a2 / (b1 * b2)
                    - 2.0 * m.mu_a[j] * a1 * a2 / (b1 * b1 * b2);
                let q = -a1 * a2 / (b1 * b2 * b2);
                let r = 2.0 * a1 / (b1 * b2);
                p_map[j] = p;
                q_map[j] = q;
                r_map[j] = r;
                qmu_map[j] = q * m.mu_a[j];
                rmu_map[j] = r * m.mu_b[j];
            }
        }
        if let Some(g) = grad.as_mut() {
            // dS/da_i = (k*P)_i + 2 a_i (k*Q)_i - 2 (k*(Q mu_a))_i
            //         + b_i (k*R)_i - (k*(R mu_b))_i
            let sp = spread_valid(&p_map, w, h, &k);
            let sq = spread_valid(&q_map, w, h, &k);
            let sqmu = spread_valid(&qmu_map, w, h, &k);
            let sr = spread_valid(&r_map, w, h, &k);
            let srmu = spread_valid(&rmu_map, w, h, &k);
            let scale = 1.0 / (3.0 * n_windows as f64);
            for i in 0..w * h {
                let ds = sp[i] + 2.0 * pa[i] * sq[i] - 2.0 * sqmu[i] + pb[i] * sr[i] - srmu[i];
                g.pixels[i * 3 + c] = ds * scale;
            }
        }
    }
    SsimEval { mean: total / (3.0 * n_windows as f64), grad }
}

/// Mean SSIM over all valid windows and channels.
pub fn mean_ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    ssim_eval(a, b, WindowSel::All, false).mean
}

/// Mean SSIM plus its gradient with respect to `a`.
pub fn mean_ssim_with_grad(a: &ImageBuffer, b: &ImageBuffer) -> (f64, ImageBuffer) {
    let e = ssim_eval(a, b, WindowSel::All, true);
    (e.mean, e.grad.unwrap())
}

/// Mean SSIM over the valid windows that contain no masked pixel.
/// Returns mean 1.0 (no dissimilarity) when every window is excluded.
pub fn mean_ssim_excluding_windows(
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: &BinaryMask,
) -> (f64, ImageBuffer) {
    let (w, h) = (a.width, a.height);
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let mut include = vec![true; vw * vh];
    for vy in 0..vh {
        for vx in 0..vw {
            'win: for dy in 0..WINDOW {
                for dx in 0..WINDOW {
                    if mask.get(vx + dx, vy + dy) {
                        include[vy * vw + vx] = false;
                        break 'win;
                    }
                }
            }
        }
    }
    let e = ssim_eval(a, b, WindowSel::Subset(&include), true);
    (e.mean, e.grad.unwrap())
}
