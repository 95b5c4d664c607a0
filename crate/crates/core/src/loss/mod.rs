//! Photometric losses (L1, D-SSIM, masked variants), the combined training
//! objectives, and evaluation metrics (PSNR, SSIM, score-map MAE).

pub mod ssim;

use serde::{Deserialize, Serialize};

use crate::buffer::{BinaryMask, ImageBuffer, ScoreMap};
use crate::error::{HadError, Result};

/// Input-view objective weights: 0.8 L1 + 0.2 D-SSIM.
pub const INPUT_L1_WEIGHT: f64 = 0.8;
pub const INPUT_DSSIM_WEIGHT: f64 = 0.2;

/// PSNR ceiling reported for exact (or near-exact) matches.
pub const PSNR_CAP_DB: f64 = 99.0;

/// A scalar loss plus its gradient with respect to the first image argument.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad_image: ImageBuffer,
}

impl LossValue {
    fn zero(width: usize, height: usize) -> Self {
        LossValue { value: 0.0, grad_image: ImageBuffer::new(width, height) }
    }
}

/// How a mask applies to the D-SSIM term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SsimMaskMode {
    /// Zero both operands at masked pixels before SSIM (the literal reading
    /// of the masked objective). Default.
    #[default]
    ZeroOperands,
    /// Drop every window that contains a masked pixel.
    ExcludeWindows,
}

fn check_mask(img: &ImageBuffer, mask: &BinaryMask) -> Result<()> {
    if mask.width != img.width || mask.height != img.height {
        return Err(HadError::Contract(format!(
            "mask {}x{} does not match image {}x{}",
            mask.width, mask.height, img.width, img.height
        )));
    }
    Ok(())
}

/// Mean absolute difference over channels of the included (`!mask`) pixels.
/// An empty inclusion set yields loss 0 with a zero gradient (skip the view).
pub fn l1_loss(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&BinaryMask>) -> Result<LossValue> {
    a.require_same_dims(b, "l1_loss")?;
    if let Some(m) = mask {
        check_mask(a, m)?;
    }
    let included = |x: usize, y: usize| mask.map_or(true, |m| !m.get(x, y));
    let mut count = 0usize;
    for y in 0..a.height {
        for x in 0..a.width {
            if included(x, y) {
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(LossValue::zero(a.width, a.height));
    }
    let norm = 1.0 / (count as f64 * 3.0);
    let mut value = 0.0;
    let mut grad = ImageBuffer::new(a.width, a.height);
    for y in 0..a.height {
        for x in 0..a.width {
            if !included(x, y) {
                continue;
            }
            let i = a.idx(x, y);
            for c in 0..3 {
                let d = a.pixels[i + c] - b.pixels[i + c];
                value += d.abs() * norm;
                grad.pixels[i + c] = d.signum() * norm;
            }
        }
    }
    Ok(LossValue { value, grad_image: grad })
}

fn apply_zero_mask(img: &ImageBuffer, mask: &BinaryMask) -> ImageBuffer {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            if mask.get(x, y) {
                out.set(x, y, [0.0; 3]);
            }
        }
    }
    out
}

/// D-SSIM = (1 - mean SSIM) / 2 with the analytic gradient. Masking follows
/// `mode`; the default zeroes both operands at masked pixels.
pub fn d_ssim_loss_with_mode(
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: Option<&BinaryMask>,
    mode: SsimMaskMode,
) -> Result<LossValue> {
    a.require_same_dims(b, "d_ssim_loss")?;
    if a.width < ssim::WINDOW || a.height < ssim::WINDOW {
        return Err(HadError::Contract(format!(
            "d_ssim_loss needs images of at least {0}x{0}",
            ssim::WINDOW
        )));
    }
    if let Some(m) = mask {
        check_mask(a, m)?;
    }
    let (mean, mut grad) = match (mask, mode) {
        (None, _) => ssim::mean_ssim_with_grad(a, b),
        (Some(m), SsimMaskMode::ZeroOperands) => {
            let az = apply_zero_mask(a, m);
            let bz = apply_zero_mask(b, m);
            let (mean, mut grad) = ssim::mean_ssim_with_grad(&az, &bz);
            // Chain through the zeroing: masked pixels carry no gradient.
            for y in 0..a.height {
                for x in 0..a.width {
                    if m.get(x, y) {
                        grad.set(x, y, [0.0; 3]);
                    }
                }
            }
            (mean, grad)
        }
        (Some(m), SsimMaskMode::ExcludeWindows) => ssim::mean_ssim_excluding_windows(a, b, m),
    };
    // D-SSIM = (1 - mean)/2, so the gradient flips sign and halves.
    for v in &mut grad.pixels {
        *v *= -0.5;
    }
    Ok(LossValue { value: (1.0 - mean) / 2.0, grad_image: grad })
}

pub fn d_ssim_loss(
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: Option<&BinaryMask>,
) -> Result<LossValue> {
    d_ssim_loss_with_mode(a, b, mask, SsimMaskMode::ZeroOperands)
}

fn combine(l1: LossValue, dssim: LossValue, w1: f64, w2: f64) -> LossValue {
    let mut grad = l1.grad_image;
    for (g, d) in grad.pixels.iter_mut().zip(&dssim.grad_image.pixels) {
        *g = *g * w1 + d * w2;
    }
    LossValue { value: w1 * l1.value + w2 * dssim.value, grad_image: grad }
}

/// Input-view rendering loss: 0.8 L1 + 0.2 D-SSIM.
pub fn input_view_loss(rendered: &ImageBuffer, gt: &ImageBuffer) -> Result<LossValue> {
    let l1 = l1_loss(rendered, gt, None)?;
    let ds = d_ssim_loss(rendered, gt, None)?;
    Ok(combine(l1, ds, INPUT_L1_WEIGHT, INPUT_DSSIM_WEIGHT))
}

/// Novel-view loss: masked L1 plus masked D-SSIM, unweighted sum.
pub fn novel_view_loss(
    rendered: &ImageBuffer,
    aug: &ImageBuffer,
    mask: &BinaryMask,
) -> Result<LossValue> {
    novel_view_loss_with(rendered, aug, mask, 1.0, 1.0, SsimMaskMode::ZeroOperands)
}

/// Novel-view loss with configurable term weights and SSIM mask handling
/// (the 0.8/0.2 variant and the window-exclusion variant live behind this).
pub fn novel_view_loss_with(
    rendered: &ImageBuffer,
    aug: &ImageBuffer,
    mask: &BinaryMask,
    l1_weight: f64,
    dssim_weight: f64,
    mode: SsimMaskMode,
) -> Result<LossValue> {
    if mask.all_true() {
        // Empty inclusion set: skip the view entirely.
        return Ok(LossValue::zero(rendered.width, rendered.height));
    }
    let l1 = l1_loss(rendered, aug, Some(mask))?;
    let ds = d_ssim_loss_with_mode(rendered, aug, Some(mask), mode)?;
    Ok(combine(l1, ds, l1_weight, dssim_weight))
}

/// Peak signal-to-noise ratio over unit dynamic range, single MSE across all
/// channels; exact matches report the 99 dB sentinel cap.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    assert!(a.same_dims(b), "psnr requires matching dimensions");
    let n = a.pixels.len() as f64;
    let mse: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Mean SSIM metric (no mask), symmetric in its arguments.
pub fn ssim_metric(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    assert!(a.same_dims(b), "ssim requires matching dimensions");
    ssim::mean_ssim(a, b)
}

/// Mean absolute error between two score maps.
pub fn score_map_mae(predicted: &ScoreMap, gt: &ScoreMap) -> Result<f64> {
    if !predicted.same_dims(gt) {
        return Err(HadError::Contract("score map dimensions differ".into()));
    }
    let n = predicted.values.len();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(predicted
        .values
        .iter()
        .zip(&gt.values)
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / n as f64)
}
