//! Simulated augmentation prior with exact hallucination ground truth.
//!
//! The simulator stands in for a pretrained view-enhancement prior. It starts
//! from the true render at the novel pose (perfect artifact removal), leaves
//! a configurable fraction of the splat-render artifact in, then injects the
//! failure mode the scorer must catch: alien patches copied from the
//! conditioning reference view, plus smooth low-frequency color drift.
//! Corruption placement is a deterministic function of
//! `(seed, view_key, reference index)`, so conditioning on different
//! references yields different corruption patterns — which is exactly what
//! makes multi-sample fusion effective.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{BinaryMask, DepthBuffer, ImageBuffer, ScoreMap};
use crate::error::{HadError, Result};
use crate::render::render;
use crate::rng::seeded_rng;
use crate::scene::{Camera, GaussianSet, ViewRecord, ViewRole, ViewSet};

/// Controls for the hallucination-injection simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentorConfig {
    /// Expected fraction of pixels corrupted by alien patches.
    pub hallucination_rate: f64,
    /// Inclusive range of alien patch side lengths, pixels.
    pub patch_size_range: (usize, usize),
    /// Inclusive clamp on the number of patches per view.
    pub num_patches_range: (usize, usize),
    /// Amplitude of the smooth color-drift field, [0, 1].
    pub color_drift_amplitude: f64,
    /// Fraction of the splat-render artifact left in after the simulated
    /// "denoising", [0, 1].
    pub residual_blend: f64,
    pub seed: u64,
}

impl Default for AugmentorConfig {
    fn default() -> Self {
        AugmentorConfig {
            hallucination_rate: 0.25,
            patch_size_range: (6, 14),
            num_patches_range: (1, 14),
            color_drift_amplitude: 0.04,
            residual_blend: 0.1,
            seed: 0,
        }
    }
}

impl AugmentorConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        if !frac(self.hallucination_rate)
            || !frac(self.color_drift_amplitude)
            || !frac(self.residual_blend)
        {
            return Err(HadError::Config("augmentor fraction outside [0,1]".into()));
        }
        if self.patch_size_range.0 > self.patch_size_range.1 || self.patch_size_range.1 == 0 {
            return Err(HadError::Config("empty patch size range".into()));
        }
        if self.num_patches_range.0 > self.num_patches_range.1 {
            return Err(HadError::Config("empty patch count range".into()));
        }
        Ok(())
    }
}

/// One simulator output: the augmented image plus its exact score oracle.
#[derive(Debug, Clone)]
pub struct AugmentedView {
    pub image: ImageBuffer,
    pub camera: Camera,
    /// Ordinal of the conditioning reference among the input views.
    pub ref_view_index: usize,
    /// Exact per-pixel hallucination ground truth (synthetic mode only).
    pub gt_score: ScoreMap,
    /// The splat render that was fed to the prior.
    pub rendered_input: ImageBuffer,
}

/// One aligned training sample for the scorer.
#[derive(Debug, Clone)]
pub struct ScorerTriplet {
    pub gt_image: ImageBuffer,
    pub augmented: ImageBuffer,
    pub splat_render: ImageBuffer,
    pub camera: Camera,
    pub gt_score: ScoreMap,
    /// Depth of the splat render at the triplet's pose; the consistency
    /// features reproject through it.
    pub novel_depth: DepthBuffer,
}

/// Per-pixel channel-mean absolute error between an augmented image and the
/// ground-truth render: the score oracle.
pub fn gt_hallucination_score(aug: &ImageBuffer, gt: &ImageBuffer) -> Result<ScoreMap> {
    aug.require_same_dims(gt, "gt_hallucination_score")?;
    let mut score = ScoreMap::new(aug.width, aug.height);
    for i in 0..aug.width * aug.height {
        let mut acc = 0.0;
        for c in 0..3 {
            acc += (aug.pixels[i * 3 + c] - gt.pixels[i * 3 + c]).abs();
        }
        score.values[i] = acc / 3.0;
    }
    Ok(score)
}

struct PatchPlan {
    size: usize,
    src: (usize, usize),
    dst: (usize, usize),
}

fn overlaps(a: &PatchPlan, b: &PatchPlan) -> bool {
    a.dst.0 < b.dst.0 + b.size
        && b.dst.0 < a.dst.0 + a.size
        && a.dst.1 < b.dst.1 + b.size
        && b.dst.1 < a.dst.1 + a.size
}

/// Draws up to `want` pairwise-disjoint patch placements. The candidate
/// stream is consumed in a fixed order, so the accepted list for a smaller
/// `want` is a prefix of the list for a larger one (which is what makes the
/// mean ground-truth score monotone in the hallucination rate).
fn plan_patches(
    rng: &mut ChaCha8Rng,
    cfg: &AugmentorConfig,
    want: usize,
    out_w: usize,
    out_h: usize,
    ref_w: usize,
    ref_h: usize,
) -> Vec<PatchPlan> {
    let mut accepted: Vec<PatchPlan> = Vec::new();
    let budget = cfg.num_patches_range.1 * 6 + 8;
    for _ in 0..budget {
        if accepted.len() >= want {
            break;
        }
        let max_side = cfg
            .patch_size_range
            .1
            .min(out_w.saturating_sub(1))
            .min(out_h.saturating_sub(1))
            .min(ref_w.saturating_sub(1))
            .min(ref_h.saturating_sub(1));
        let min_side = cfg.patch_size_range.0.max(2).min(max_side);
        if max_side < 2 {
            break;
        }
        let size = rng.gen_range(min_side..=max_side);
        let src = (
            rng.gen_range(0..=ref_w - size),
            rng.gen_range(0..=ref_h - size),
        );
        let dst = (
            rng.gen_range(0..=out_w - size),
            rng.gen_range(0..=out_h - size),
        );
        let cand = PatchPlan { size, src, dst };
        if accepted.iter().all(|p| !overlaps(p, &cand)) {
            accepted.push(cand);
        }
    }
    accepted
}

/// Cosine feather weight for position `i` along a patch axis of length `size`.
fn feather(i: usize, size: usize) -> f64 {
    let band = (size / 4).clamp(1, 4);
    let edge = (i + 1).min(size - i);
    if edge > band {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * edge as f64 / (band + 1) as f64).cos())
    }
}

/// Feathered borders and content-coincident pixels fall below any detection
/// threshold, so the raw patch-area budget systematically under-delivers
/// visibly corrupted pixels. Measured compensation factor.
const PATCH_COVERAGE_COMPENSATION: f64 = 1.6;

fn patch_count(cfg: &AugmentorConfig, w: usize, h: usize) -> usize {
    if cfg.hallucination_rate == 0.0 {
        return 0;
    }
    let mean_side = (cfg.patch_size_range.0 + cfg.patch_size_range.1) as f64 / 2.0;
    let mean_area = (mean_side * mean_side).max(1.0);
    let target =
        PATCH_COVERAGE_COMPENSATION * cfg.hallucination_rate * (w * h) as f64 / mean_area;
    (target.round() as usize)
        .max(1)
        .clamp(cfg.num_patches_range.0, cfg.num_patches_range.1)
}

/// Simulator core. Also returns the exact support of the injected patches so
/// tests can verify the score oracle is zero outside corrupted regions.
#[allow(clippy::too_many_arguments)]
pub fn simulate_prior_with_support(
    splat_render: &ImageBuffer,
    gt_render: &ImageBuffer,
    novel_cam: &Camera,
    reference: &ViewRecord,
    ref_view_index: usize,
    cfg: &AugmentorConfig,
    view_key: u64,
) -> Result<(AugmentedView, BinaryMask)> {
    cfg.validate()?;
    splat_render.require_same_dims(gt_render, "simulate_prior")?;
    let (w, h) = (gt_render.width, gt_render.height);

    // Simulated denoising: the true render, with a residual of the splat
    // artifact left in.
    let mut out = gt_render.clone();
    if cfg.residual_blend > 0.0 {
        let rb = cfg.residual_blend;
        for (o, s) in out.pixels.iter_mut().zip(&splat_render.pixels) {
            *o = *o * (1.0 - rb) + s * rb;
        }
    }

    // Independent streams per corruption type: toggling one leaves the other
    // pattern unchanged.
    let tags = |kind: u64| [view_key, ref_view_index as u64, kind];
    if cfg.color_drift_amplitude > 0.0 {
        let mut rng = seeded_rng(cfg.seed, &tags(1));
        for c in 0..3 {
            let amp = cfg.color_drift_amplitude * rng.gen_range(0.5..1.0);
            let fx = rng.gen_range(1..=2) as f64;
            let fy = rng.gen_range(1..=2) as f64;
            let px = rng.gen_range(0.0..1.0);
            let py = rng.gen_range(0.0..1.0);
            for y in 0..h {
                let sy = (std::f64::consts::TAU * (fy * (y as f64 + 0.5) / h as f64 + py)).sin();
                for x in 0..w {
                    let sx =
                        (std::f64::consts::TAU * (fx * (x as f64 + 0.5) / w as f64 + px)).sin();
                    out.pixels[(y * w + x) * 3 + c] += amp * sx * sy;
                }
            }
        }
    }

    let mut support = BinaryMask::new_false(w, h);
    let want = patch_count(cfg, w, h);
    if want > 0 {
        let mut rng = seeded_rng(cfg.seed, &tags(2));
        let plans = plan_patches(
            &mut rng,
            cfg,
            want,
            w,
            h,
            reference.image.width,
            reference.image.height,
        );
        for p in &plans {
            for dy in 0..p.size {
                let wy = feather(dy, p.size);
                for dx in 0..p.size {
                    let wgt = wy * feather(dx, p.size);
                    let x = p.dst.0 + dx;
                    let y = p.dst.1 + dy;
                    let alien = reference.image.get(p.src.0 + dx, p.src.1 + dy);
                    let cur = out.get(x, y);
                    out.set(
                        x,
                        y,
                        [
                            cur[0] * (1.0 - wgt) + alien[0] * wgt,
                            cur[1] * (1.0 - wgt) + alien[1] * wgt,
                            cur[2] * (1.0 - wgt) + alien[2] * wgt,
                        ],
                    );
                    support.set(x, y, true);
                }
            }
        }
    }

    for v in &mut out.pixels {
        *v = v.clamp(0.0, 1.0);
    }
    let gt_score = gt_hallucination_score(&out, gt_render)?;
    Ok((
        AugmentedView {
            image: out,
            camera: novel_cam.clone(),
            ref_view_index,
            gt_score,
            rendered_input: splat_render.clone(),
        },
        support,
    ))
}

/// Converts a splat render at a novel pose into a photorealistic-but-
/// hallucinated augmented view conditioned on one reference input view.
#[allow(clippy::too_many_arguments)]
pub fn simulate_prior(
    splat_render: &ImageBuffer,
    gt_render: &ImageBuffer,
    novel_cam: &Camera,
    reference: &ViewRecord,
    ref_view_index: usize,
    cfg: &AugmentorConfig,
    view_key: u64,
) -> Result<AugmentedView> {
    simulate_prior_with_support(
        splat_render,
        gt_render,
        novel_cam,
        reference,
        ref_view_index,
        cfg,
        view_key,
    )
    .map(|(aug, _)| aug)
}

/// Ordinal of the input view whose camera center is nearest to `cam`,
/// counted within the input subset.
pub fn nearest_input_index(views: &ViewSet, cam: &Camera) -> usize {
    let c = cam.center();
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (ord, v) in views.views_with_role(ViewRole::Input).enumerate() {
        let d = (v.camera.center() - c).norm();
        if d < best_d {
            best_d = d;
            best = ord;
        }
    }
    best
}

/// Input views ordered by camera-center distance to `cam` (nearest first),
/// as ordinals within the input subset.
pub fn nearest_input_indices(views: &ViewSet, cam: &Camera, k: usize) -> Vec<usize> {
    let c = cam.center();
    let mut dists: Vec<(usize, f64)> = views
        .views_with_role(ViewRole::Input)
        .enumerate()
        .map(|(ord, v)| (ord, (v.camera.center() - c).norm()))
        .collect();
    dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    dists.into_iter().take(k).map(|(ord, _)| ord).collect()
}

/// Curates one aligned scorer-training triplet per non-input view: the splat
/// render from the fitted model, the true image, and the simulator output
/// conditioned on the nearest input view.
pub fn curate_triplets(
    gt_scene: &GaussianSet,
    views: &ViewSet,
    trained_set: &GaussianSet,
    cfg: &AugmentorConfig,
) -> Result<Vec<ScorerTriplet>> {
    cfg.validate()?;
    let inputs: Vec<&ViewRecord> = views.views_with_role(ViewRole::Input).collect();
    if inputs.is_empty() {
        return Err(HadError::Contract("curate_triplets needs input views".into()));
    }
    let mut triplets = Vec::new();
    for (vi, view) in views.views.iter().enumerate() {
        if view.role == ViewRole::Input {
            continue;
        }
        let splat = render(trained_set, &view.camera);
        // Stored images are exact ground-truth renders by construction.
        let gt_image = view.image.clone();
        debug_assert_eq!(render(gt_scene, &view.camera).image, gt_image);
        let ref_ord = nearest_input_index(views, &view.camera);
        let aug = simulate_prior(
            &splat.image,
            &gt_image,
            &view.camera,
            inputs[ref_ord],
            ref_ord,
            cfg,
            vi as u64,
        )?;
        triplets.push(ScorerTriplet {
            gt_image,
            augmented: aug.image,
            splat_render: splat.image,
            camera: view.camera.clone(),
            gt_score: aug.gt_score,
            novel_depth: splat.depth,
        });
    }
    Ok(triplets)
}
