//! Hallucination score estimation: multi-view reprojection-consistency
//! features, a ridge-regression score head supervised with L2 against the
//! MAE ground truth, and score-to-mask thresholding.
//!
//! Feature layout per pixel:
//!   0: min photometric residual over non-occluded reference views
//!   1: median photometric residual over non-occluded reference views
//!   2: occlusion fraction
//!   3: local gradient magnitude of the augmented image
//!   4: channel-mean |augmented - splat render| residual

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::augment::ScorerTriplet;
use crate::buffer::{BinaryMask, DepthBuffer, ImageBuffer, ScoreMap};
use crate::error::{HadError, Result};
use crate::render::{render, NEAR_PLANE};
use crate::scene::{Camera, GaussianSet, ViewRecord, ViewRole, ViewSet};

pub const NUM_FEATURES: usize = 5;

/// Default score-to-mask threshold (absolute mode).
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.9;

/// Fallback neutral residual when a view has no reprojectable pixel at all.
const NEUTRAL_FALLBACK: f64 = 0.25;

/// Per-pixel consistency feature vectors, H x W x NUM_FEATURES.
#[derive(Debug, Clone)]
pub struct ConsistencyFeatures {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ConsistencyFeatures {
    pub fn get(&self, x: usize, y: usize) -> [f64; NUM_FEATURES] {
        let i = (y * self.width + x) * NUM_FEATURES;
        let mut out = [0.0; NUM_FEATURES];
        out.copy_from_slice(&self.values[i..i + NUM_FEATURES]);
        out
    }
}

/// A reference input view paired with its depth render from the current
/// splat model.
#[derive(Debug, Clone, Copy)]
pub struct RefView<'a> {
    pub view: &'a ViewRecord,
    pub depth: &'a DepthBuffer,
}

/// Geometry tolerances for the feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    /// Reprojected depth may exceed the reference depth by this much before
    /// the sample counts as occluded (2% of scene diameter).
    pub depth_tolerance: f64,
}

impl FeatureParams {
    /// Derives the occlusion tolerance from the camera geometry: 2% of the
    /// largest input camera-center separation (the scene-diameter estimate).
    pub fn for_views(views: &ViewSet) -> FeatureParams {
        let centers: Vec<Vector3<f64>> = views
            .views_with_role(ViewRole::Input)
            .map(|v| v.camera.center())
            .collect();
        let mut diameter = 0.0f64;
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                diameter = diameter.max((centers[i] - centers[j]).norm());
            }
        }
        FeatureParams { depth_tolerance: 0.02 * diameter.max(1e-6) }
    }
}

fn median_of(mut vals: Vec<f64>) -> f64 {
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

/// Extracts the per-pixel consistency feature vectors for one augmented view.
///
/// Each pixel is back-projected through the novel-view depth and reprojected
/// into every reference view; a reprojection counts as occluded when it falls
/// outside the reference image, lands behind the camera, or its depth exceeds
/// the reference's rendered depth by more than the tolerance. Residual
/// features of fully-occluded pixels take the view's median valid residual.
pub fn extract_features(
    aug: &ImageBuffer,
    novel_cam: &Camera,
    novel_depth: &DepthBuffer,
    inputs: &[RefView],
    splat_render: &ImageBuffer,
    params: &FeatureParams,
) -> Result<ConsistencyFeatures> {
    if inputs.is_empty() {
        return Err(HadError::Contract("extract_features needs >= 1 reference view".into()));
    }
    aug.require_same_dims(splat_render, "extract_features")?;
    if aug.width != novel_cam.width || aug.height != novel_cam.height {
        return Err(HadError::Contract("augmented image does not match camera".into()));
    }
    let (w, h) = (aug.width, aug.height);
    let rot_c2w = novel_cam.rotation_w2c.transpose();
    let mut values = vec![0.0f64; w * h * NUM_FEATURES];
    // Pixels whose residual features must be backfilled with the neutral.
    let mut needs_neutral: Vec<usize> = Vec::new();
    let mut valid_min: Vec<f64> = Vec::new();
    let mut valid_med: Vec<f64> = Vec::new();

    for y in 0..h {
        for x in 0..w {
            let pi = y * w + x;
            let px = aug.get(x, y);
            let z = novel_depth.get(x, y);
            let mut residuals: Vec<f64> = Vec::with_capacity(inputs.len());
            let mut occluded = 0usize;
            if z > 0.0 {
                let pc = Vector3::new(
                    (x as f64 + 0.5 - novel_cam.cx) / novel_cam.fx * z,
                    (y as f64 + 0.5 - novel_cam.cy) / novel_cam.fy * z,
                    z,
                );
                let world = rot_c2w * (pc - novel_cam.translation_w2c);
                for r in inputs {
                    let q = r.view.camera.world_to_camera(&world);
                    if q.z <= NEAR_PLANE {
                        occluded += 1;
                        continue;
                    }
                    let (u, v) = r.view.camera.project_cam(&q);
                    let (sample, ref_depth) = match (
                        r.view.image.sample_bilinear(u, v),
                        r.depth.sample_bilinear(u, v),
                    ) {
                        (Some(s), Some(d)) => (s, d),
                        _ => {
                            occluded += 1;
                            continue;
                        }
                    };
                    if ref_depth > 1e-9 && q.z > ref_depth + params.depth_tolerance {
                        occluded += 1;
                        continue;
                    }
                    let resid = ((px[0] - sample[0]).abs()
                        + (px[1] - sample[1]).abs()
                        + (px[2] - sample[2]).abs())
                        / 3.0;
                    residuals.push(resid.min(1.0));
                }
            } else {
                occluded = inputs.len();
            }

            let occl_frac = occluded as f64 / inputs.len() as f64;
            let base = pi * NUM_FEATURES;
            if residuals.is_empty() {
                needs_neutral.push(pi);
            } else {
                let min_r = residuals.iter().cloned().fold(f64::INFINITY, f64::min);
                let med_r = median_of(residuals);
                values[base] = min_r;
                values[base + 1] = med_r;
                valid_min.push(min_r);
                valid_med.push(med_r);
            }
            values[base + 2] = occl_frac;

            // Local gradient magnitude of the augmented image, border
            // replicated, channel mean, clamped to [0, 1].
            let xm = aug.get(x.saturating_sub(1), y);
            let xp = aug.get((x + 1).min(w - 1), y);
            let ym = aug.get(x, y.saturating_sub(1));
            let yp = aug.get(x, (y + 1).min(h - 1));
            let mut gmag = 0.0;
            for c in 0..3 {
                let gx = (xp[c] - xm[c]) / 2.0;
                let gy = (yp[c] - ym[c]) / 2.0;
                gmag += (gx * gx + gy * gy).sqrt();
            }
            values[base + 3] = (gmag / 3.0).min(1.0);

            let sp = splat_render.get(x, y);
            values[base + 4] =
                ((px[0] - sp[0]).abs() + (px[1] - sp[1]).abs() + (px[2] - sp[2]).abs()) / 3.0;
        }
    }

    let neutral_min = if valid_min.is_empty() { NEUTRAL_FALLBACK } else { median_of(valid_min) };
    let neutral_med = if valid_med.is_empty() { NEUTRAL_FALLBACK } else { median_of(valid_med) };
    for pi in needs_neutral {
        values[pi * NUM_FEATURES] = neutral_min;
        values[pi * NUM_FEATURES + 1] = neutral_med;
    }
    Ok(ConsistencyFeatures { width: w, height: h, values })
}

/// The fitted per-pixel score regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub weights: [f64; NUM_FEATURES],
    pub bias: f64,
    pub feature_mask: [bool; NUM_FEATURES],
    pub ridge: f64,
    /// Hash of the training pixels, for provenance.
    pub dataset_hash: u64,
}

impl ScorerModel {
    pub fn validate(&self) -> Result<()> {
        if !self.feature_mask.iter().any(|&m| m) {
            return Err(HadError::Config("scorer needs at least one enabled feature".into()));
        }
        if !self.weights.iter().all(|w| w.is_finite()) || !self.bias.is_finite() {
            return Err(HadError::Numerical("non-finite scorer weights".into()));
        }
        Ok(())
    }
}

fn fnv1a(hash: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *hash ^= b as u64;
        *hash = hash.wrapping_mul(0x100_0000_01b3);
    }
}

/// Closed-form ridge regression from enabled features to targets. The bias
/// column is not penalized.
pub fn fit_ridge(
    rows: &[[f64; NUM_FEATURES]],
    targets: &[f64],
    ridge: f64,
    feature_mask: [bool; NUM_FEATURES],
) -> Result<ScorerModel> {
    if rows.is_empty() || rows.len() != targets.len() {
        return Err(HadError::Contract("ridge fit needs matching nonempty rows/targets".into()));
    }
    if ridge < 0.0 {
        return Err(HadError::Config("ridge must be >= 0".into()));
    }
    if !feature_mask.iter().any(|&m| m) {
        return Err(HadError::Config("ridge fit needs at least one enabled feature".into()));
    }
    let enabled: Vec<usize> = (0..NUM_FEATURES).filter(|&i| feature_mask[i]).collect();
    let dim = enabled.len() + 1;
    let mut xtx = DMatrix::<f64>::zeros(dim, dim);
    let mut xty = DVector::<f64>::zeros(dim);
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    let mut row_buf = vec![0.0f64; dim];
    for (row, &t) in rows.iter().zip(targets) {
        for (j, &f) in enabled.iter().enumerate() {
            row_buf[j] = row[f];
        }
        row_buf[dim - 1] = 1.0;
        for a in 0..dim {
            for b in a..dim {
                xtx[(a, b)] += row_buf[a] * row_buf[b];
            }
            xty[a] += row_buf[a] * t;
        }
        fnv1a(&mut hash, &t.to_le_bytes());
    }
    for a in 0..dim {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    for j in 0..dim - 1 {
        xtx[(j, j)] += ridge;
    }
    let solution = xtx
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&xty))
        .or_else(|| xtx.lu().solve(&xty))
        .ok_or_else(|| {
            HadError::Numerical(
                "singular normal equations; increase ridge above 0".into(),
            )
        })?;
    let mut weights = [0.0; NUM_FEATURES];
    for (j, &f) in enabled.iter().enumerate() {
        weights[f] = solution[j];
    }
    let model = ScorerModel {
        weights,
        bias: solution[dim - 1],
        feature_mask,
        ridge,
        dataset_hash: hash,
    };
    model.validate()?;
    Ok(model)
}

/// Reference views used per triplet: the three nearest inputs.
pub const REFS_PER_TRIPLET: usize = 3;

/// Input views paired with depth renders from a splat model; the reference
/// context for feature extraction.
pub fn render_input_refs(views: &ViewSet, set: &GaussianSet) -> Vec<(ViewRecord, DepthBuffer)> {
    views
        .views_with_role(ViewRole::Input)
        .map(|v| (v.clone(), render(set, &v.camera).depth))
        .collect()
}

fn select_refs<'a>(
    inputs: &'a [(ViewRecord, DepthBuffer)],
    cam: &Camera,
    k: usize,
) -> Vec<RefView<'a>> {
    let c = cam.center();
    let mut order: Vec<(usize, f64)> = inputs
        .iter()
        .enumerate()
        .map(|(i, (v, _))| (i, (v.camera.center() - c).norm()))
        .collect();
    order.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    order
        .into_iter()
        .take(k)
        .map(|(i, _)| RefView { view: &inputs[i].0, depth: &inputs[i].1 })
        .collect()
}

/// Per-pixel regression rows (features, ground-truth scores) from triplets,
/// each using its three nearest input views as references.
pub fn scorer_rows(
    triplets: &[ScorerTriplet],
    inputs: &[(ViewRecord, DepthBuffer)],
    params: &FeatureParams,
) -> Result<(Vec<[f64; NUM_FEATURES]>, Vec<f64>)> {
    let mut rows: Vec<[f64; NUM_FEATURES]> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for t in triplets {
        let refs = select_refs(inputs, &t.camera, REFS_PER_TRIPLET);
        let feats = extract_features(
            &t.augmented,
            &t.camera,
            &t.novel_depth,
            &refs,
            &t.splat_render,
            params,
        )?;
        for pi in 0..feats.width * feats.height {
            let mut row = [0.0; NUM_FEATURES];
            row.copy_from_slice(&feats.values[pi * NUM_FEATURES..(pi + 1) * NUM_FEATURES]);
            rows.push(row);
            targets.push(t.gt_score.values[pi]);
        }
    }
    Ok((rows, targets))
}

/// Extracts features for every pixel of every triplet (three nearest input
/// views as references) and solves the ridge regression to the ground-truth
/// scores. Deterministic.
pub fn train_scorer(
    triplets: &[ScorerTriplet],
    inputs: &[(ViewRecord, DepthBuffer)],
    ridge: f64,
    feature_mask: [bool; NUM_FEATURES],
    params: &FeatureParams,
) -> Result<ScorerModel> {
    if triplets.is_empty() {
        return Err(HadError::Contract("train_scorer needs >= 1 triplet".into()));
    }
    let (rows, targets) = scorer_rows(triplets, inputs, params)?;
    fit_ridge(&rows, &targets, ridge, feature_mask)
}

/// Per-pixel affine score prediction, clamped below at zero. Disabled
/// features have no influence on the output.
pub fn predict_score(model: &ScorerModel, features: &ConsistencyFeatures) -> ScoreMap {
    let mut score = ScoreMap::new(features.width, features.height);
    for pi in 0..features.width * features.height {
        let mut s = model.bias;
        for f in 0..NUM_FEATURES {
            if model.feature_mask[f] {
                s += model.weights[f] * features.values[pi * NUM_FEATURES + f];
            }
        }
        score.values[pi] = s.max(0.0);
    }
    score
}

/// Thresholding rule for converting scores to exclusion masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Mask pixels whose score exceeds the threshold value. Default.
    #[default]
    Absolute,
    /// Mask pixels whose score exceeds the per-image q-quantile.
    Quantile,
}

/// Converts a score map to a binary exclusion mask. Absolute mode masks
/// `score > threshold`; quantile mode masks pixels above the per-image
/// q-quantile of scores.
pub fn score_to_mask(score: &ScoreMap, threshold: f64, mode: ThresholdMode) -> Result<BinaryMask> {
    let cutoff = match mode {
        ThresholdMode::Absolute => {
            if threshold < 0.0 {
                return Err(HadError::Config("absolute threshold must be >= 0".into()));
            }
            threshold
        }
        ThresholdMode::Quantile => {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(HadError::Config("quantile threshold must lie in [0,1]".into()));
            }
            let mut sorted = score.values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = sorted.len();
            if n == 0 {
                return Ok(BinaryMask::new_false(score.width, score.height));
            }
            let rank = ((threshold * n as f64).ceil() as usize).clamp(1, n);
            sorted[rank - 1]
        }
    };
    let mut mask = BinaryMask::new_false(score.width, score.height);
    for (bit, &s) in mask.bits.iter_mut().zip(&score.values) {
        *bit = s > cutoff;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{curate_triplets, simulate_prior_with_support, AugmentorConfig};
    use crate::scene::{make_synthetic_scene, SceneKind, SceneSpec};
    use rand::Rng;

    fn fixture(seed: u64) -> (GaussianSet, ViewSet) {
        make_synthetic_scene(&SceneSpec {
            scene_kind: SceneKind::BlobField,
            num_gaussians: 48,
            num_input_views: 5,
            num_target_views: 2,
            num_test_views: 2,
            image_size: (48, 48),
            seed,
        })
        .unwrap()
    }

    #[test]
    fn clean_view_has_near_zero_min_residual() {
        // Smooth content isolates what the feature measures: with the true
        // image and exact depths, the min residual reduces to bilinear
        // interpolation error.
        let mut rng = crate::rng::seeded_rng(31, &[0x50F7]);
        let prims = (0..12)
            .map(|_| crate::scene::GaussianPrimitive {
                mean: [
                    rng.gen_range(-0.6..0.6),
                    rng.gen_range(-0.6..0.6),
                    rng.gen_range(-0.6..0.6),
                ],
                log_scale: [rng.gen_range(0.2f64..0.35).ln(); 3],
                rotation: [1.0, 0.0, 0.0, 0.0],
                opacity_logit: crate::scene::logit(rng.gen_range(0.5..0.85)),
                sh_coeffs: vec![[
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.2..0.8),
                ]],
            })
            .collect();
        let set = GaussianSet { primitives: prims, background_color: [0.1, 0.1, 0.12] };
        let cam_at = |theta_deg: f64| {
            let t = (theta_deg as f64).to_radians();
            Camera::look_at(
                48.0,
                48.0,
                24.0,
                24.0,
                48,
                48,
                Vector3::new(3.0 * t.sin(), 0.7, -3.0 * t.cos()),
                Vector3::zeros(),
                Vector3::new(0.0, 1.0, 0.0),
            )
        };
        let input_views: Vec<(ViewRecord, DepthBuffer)> = [-20.0, 0.0, 20.0]
            .iter()
            .map(|&th| {
                let cam = cam_at(th);
                let out = render(&set, &cam);
                (
                    ViewRecord { camera: cam, image: out.image, role: ViewRole::Input },
                    out.depth,
                )
            })
            .collect();
        let novel_cam = cam_at(9.0);
        let out = render(&set, &novel_cam);
        let refs: Vec<RefView> = input_views
            .iter()
            .map(|(v, d)| RefView { view: v, depth: d })
            .collect();
        let feats = extract_features(
            &out.image,
            &novel_cam,
            &out.depth,
            &refs,
            &out.image,
            &FeatureParams { depth_tolerance: 0.07 },
        )
        .unwrap();
        let n = feats.width * feats.height;
        let good = (0..n)
            .filter(|&pi| feats.values[pi * NUM_FEATURES] < 0.02)
            .count();
        assert!(
            good as f64 / n as f64 >= 0.95,
            "only {good}/{n} pixels below 0.02 min residual"
        );
    }

    #[test]
    fn fully_occluded_pixels_take_neutral_values() {
        // A novel camera on the far side of the scene pointing outward:
        // every reprojection lands outside the only reference view.
        let (set, views) = fixture(32);
        let inputs = render_input_refs(&views, &set);
        let base = &views.views[0].camera;
        let pos = base.center();
        let away = Camera::look_at(
            base.fx,
            base.fy,
            base.cx,
            base.cy,
            base.width,
            base.height,
            pos,
            pos * 2.0,
            Vector3::new(0.0, 1.0, 0.0),
        );
        assert!(away.validate().is_ok());
        let out = render(&set, &away);
        let refs = vec![RefView { view: &inputs[0].0, depth: &inputs[0].1 }];
        // Synthetic depth so every pixel back-projects to geometry in front
        // of the away-facing camera (all behind the reference camera).
        let mut depth = DepthBuffer::new(base.width, base.height);
        for v in &mut depth.values {
            *v = 2.0;
        }
        let feats = extract_features(
            &out.image,
            &away,
            &depth,
            &refs,
            &out.image,
            &FeatureParams { depth_tolerance: 0.06 },
        )
        .unwrap();
        for pi in 0..feats.width * feats.height {
            assert_eq!(feats.values[pi * NUM_FEATURES + 2], 1.0);
            assert_eq!(feats.values[pi * NUM_FEATURES], NEUTRAL_FALLBACK);
            assert_eq!(feats.values[pi * NUM_FEATURES + 1], NEUTRAL_FALLBACK);
        }
    }

    #[test]
    fn alien_patches_raise_min_residual() {
        let (set, views) = fixture(33);
        let inputs = render_input_refs(&views, &set);
        let params = FeatureParams::for_views(&views);
        for seed in 0..10u64 {
            let novel = &views.views[6];
            let out = render(&set, &novel.camera);
            let cfg = AugmentorConfig {
                hallucination_rate: 0.2,
                residual_blend: 0.0,
                color_drift_amplitude: 0.0,
                seed,
                ..AugmentorConfig::default()
            };
            let (aug, support) = simulate_prior_with_support(
                &out.image,
                &out.image,
                &novel.camera,
                &views.views[0],
                0,
                &cfg,
                9,
            )
            .unwrap();
            let refs = select_refs(&inputs, &novel.camera, 3);
            let feats = extract_features(
                &aug.image,
                &novel.camera,
                &out.depth,
                &refs,
                &out.image,
                &params,
            )
            .unwrap();
            let mut inside = (0.0, 0usize);
            let mut outside = (0.0, 0usize);
            for pi in 0..feats.width * feats.height {
                let v = feats.values[pi * NUM_FEATURES];
                if support.bits[pi] {
                    inside = (inside.0 + v, inside.1 + 1);
                } else {
                    outside = (outside.0 + v, outside.1 + 1);
                }
            }
            let mean_in = inside.0 / inside.1 as f64;
            let mean_out = outside.0 / outside.1 as f64;
            assert!(
                mean_in > mean_out,
                "seed {seed}: inside {mean_in:.4} <= outside {mean_out:.4}"
            );
        }
    }

    fn random_rows(seed: u64, n: usize) -> Vec<[f64; NUM_FEATURES]> {
        let mut rng = crate::rng::seeded_rng(seed, &[0x5C0]);
        (0..n)
            .map(|_| {
                let mut row = [0.0; NUM_FEATURES];
                for v in &mut row {
                    *v = rng.gen_range(0.0..1.0);
                }
                row
            })
            .collect()
    }

    #[test]
    fn exact_linear_target_recovers_weights() {
        let rows = random_rows(41, 4000);
        let w_true = [0.3, -0.15, 0.07, 0.22, 0.5];
        let b_true = 0.04;
        let targets: Vec<f64> = rows
            .iter()
            .map(|r| {
                r.iter().zip(&w_true).map(|(f, w)| f * w).sum::<f64>() + b_true
            })
            .collect();
        let model = fit_ridge(&rows, &targets, 1e-9, [true; NUM_FEATURES]).unwrap();
        for (got, want) in model.weights.iter().zip(&w_true) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        assert!((model.bias - b_true).abs() < 1e-6);
        let mse: f64 = rows
            .iter()
            .zip(&targets)
            .map(|(r, t)| {
                let p: f64 = r
                    .iter()
                    .zip(&model.weights)
                    .map(|(f, w)| f * w)
                    .sum::<f64>()
                    + model.bias;
                (p - t) * (p - t)
            })
            .sum::<f64>()
            / rows.len() as f64;
        assert!(mse < 1e-10, "training mse {mse:e}");
    }

    #[test]
    fn constant_target_gives_zero_weights_and_bias_c() {
        let rows = random_rows(42, 2000);
        let targets = vec![0.37; 2000];
        let model = fit_ridge(&rows, &targets, 0.0, [true; NUM_FEATURES]).unwrap();
        for w in model.weights {
            assert!(w.abs() < 1e-8, "weight {w}");
        }
        assert!((model.bias - 0.37).abs() < 1e-8);
    }

    #[test]
    fn duplicate_features_singular_without_ridge() {
        let mut rows = random_rows(43, 500);
        for r in &mut rows {
            r[1] = r[0];
        }
        let targets: Vec<f64> = rows.iter().map(|r| r[0] * 0.5).collect();
        let err = fit_ridge(&rows, &targets, 0.0, [true; NUM_FEATURES]);
        assert!(matches!(err, Err(HadError::Numerical(_))), "{err:?}");
        assert!(fit_ridge(&rows, &targets, 1e-6, [true; NUM_FEATURES]).is_ok());
    }

    #[test]
    fn predict_basics_and_masked_feature_has_no_influence() {
        let model = ScorerModel {
            weights: [0.0; NUM_FEATURES],
            bias: 0.2,
            feature_mask: [true; NUM_FEATURES],
            ridge: 0.0,
            dataset_hash: 0,
        };
        let feats = ConsistencyFeatures {
            width: 4,
            height: 4,
            values: vec![0.5; 4 * 4 * NUM_FEATURES],
        };
        let s = predict_score(&model, &feats);
        assert!(s.values.iter().all(|&v| v == 0.2));

        let mut masked = model.clone();
        masked.weights = [0.4, 0.3, 0.2, 0.1, 0.9];
        masked.feature_mask[4] = false;
        let base = predict_score(&masked, &feats);
        let mut bumped = feats.clone();
        for pi in 0..16 {
            bumped.values[pi * NUM_FEATURES + 4] += 123.0;
        }
        let after = predict_score(&masked, &bumped);
        assert_eq!(base.values, after.values);
    }

    #[test]
    fn prediction_clamps_below_zero() {
        let model = ScorerModel {
            weights: [-1.0, 0.0, 0.0, 0.0, 0.0],
            bias: 0.0,
            feature_mask: [true; NUM_FEATURES],
            ridge: 0.0,
            dataset_hash: 0,
        };
        let feats = ConsistencyFeatures {
            width: 2,
            height: 1,
            values: vec![0.5; 2 * NUM_FEATURES],
        };
        let s = predict_score(&model, &feats);
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_thresholding_rules() {
        let mut score = ScoreMap::new(4, 4);
        assert!(
            !score_to_mask(&score, DEFAULT_MASK_THRESHOLD, ThresholdMode::Absolute)
                .unwrap()
                .bits
                .iter()
                .any(|&b| b)
        );
        for v in &mut score.values {
            *v = 1.0;
        }
        assert!(score_to_mask(&score, 0.9, ThresholdMode::Absolute)
            .unwrap()
            .all_true());
        // Default configuration readback.
        assert_eq!(DEFAULT_MASK_THRESHOLD, 0.9);
        assert_eq!(ThresholdMode::default(), ThresholdMode::Absolute);
        // Monotone in the absolute threshold.
        let mut rng = crate::rng::seeded_rng(44, &[1]);
        let mut s = ScoreMap::new(8, 8);
        for v in &mut s.values {
            *v = rng.gen_range(0.0..1.0);
        }
        let mut last = usize::MAX;
        for t in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
            let m = score_to_mask(&s, t, ThresholdMode::Absolute).unwrap();
            assert!(m.count_true() <= last);
            last = m.count_true();
        }
        // Quantile mode masks roughly the top (1-q) fraction.
        let m = score_to_mask(&s, 0.9, ThresholdMode::Quantile).unwrap();
        assert!(m.count_true() <= 7);
        assert!(score_to_mask(&s, 1.5, ThresholdMode::Quantile).is_err());
        assert!(score_to_mask(&s, -0.1, ThresholdMode::Absolute).is_err());
    }

    #[test]
    fn trained_scorer_beats_constant_baseline_on_held_out_scene() {
        let (set_a, views_a) = fixture(51);
        let (set_b, views_b) = fixture(52);
        let cfg = AugmentorConfig { seed: 3, ..AugmentorConfig::default() };
        let trips_a = curate_triplets(&set_a, &views_a, &set_a, &cfg).unwrap();
        let trips_b = curate_triplets(&set_b, &views_b, &set_b, &cfg).unwrap();
        let inputs_a = render_input_refs(&views_a, &set_a);
        let inputs_b = render_input_refs(&views_b, &set_b);
        let params = FeatureParams::for_views(&views_a);
        let model =
            train_scorer(&trips_a, &inputs_a, 1e-6, [true; NUM_FEATURES], &params).unwrap();

        // Held-out evaluation on scene B.
        let mut mae_model = 0.0;
        let mut mae_const = 0.0;
        let mut count = 0usize;
        let mean_train: f64 = trips_a
            .iter()
            .flat_map(|t| t.gt_score.values.iter())
            .sum::<f64>()
            / trips_a
                .iter()
                .map(|t| t.gt_score.values.len())
                .sum::<usize>() as f64;
        for t in &trips_b {
            let refs = select_refs(&inputs_b, &t.camera, REFS_PER_TRIPLET);
            let feats = extract_features(
                &t.augmented,
                &t.camera,
                &t.novel_depth,
                &refs,
                &t.splat_render,
                &params,
            )
            .unwrap();
            let pred = predict_score(&model, &feats);
            for (p, g) in pred.values.iter().zip(&t.gt_score.values) {
                mae_model += (p - g).abs();
                mae_const += (mean_train - g).abs();
                count += 1;
            }
        }
        mae_model /= count as f64;
        mae_const /= count as f64;
        assert!(
            mae_model < mae_const,
            "model MAE {mae_model:.4} not below constant baseline {mae_const:.4}"
        );
    }
}
