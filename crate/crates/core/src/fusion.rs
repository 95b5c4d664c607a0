//! Multi-sampling fusion: combines K augmented versions of one novel view
//! into a single image and score map.

use crate::buffer::{ImageBuffer, ScoreMap};
use crate::error::{HadError, Result};

/// K augmented versions of the same novel view, each with its score map and
/// the index of the reference view it was conditioned on.
#[derive(Debug, Clone)]
pub struct VersionStack {
    pub versions: Vec<(ImageBuffer, ScoreMap)>,
    pub ref_indices: Vec<usize>,
}

impl VersionStack {
    pub fn new(versions: Vec<(ImageBuffer, ScoreMap)>, ref_indices: Vec<usize>) -> Result<Self> {
        if versions.is_empty() {
            return Err(HadError::Contract("version stack needs K >= 1".into()));
        }
        if ref_indices.len() != versions.len() {
            return Err(HadError::Contract("ref_indices length mismatch".into()));
        }
        let mut seen = ref_indices.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != ref_indices.len() {
            return Err(HadError::Contract("duplicate reference indices".into()));
        }
        let (w, h) = (versions[0].0.width, versions[0].0.height);
        for (img, score) in &versions {
            if img.width != w || img.height != h || score.width != w || score.height != h {
                return Err(HadError::Contract("version dimensions disagree".into()));
            }
        }
        Ok(VersionStack { versions, ref_indices })
    }

    pub fn k(&self) -> usize {
        self.versions.len()
    }
}

/// Per-pixel argmin fusion: each pixel takes the version with the lowest
/// hallucination score; ties break toward the lowest version index. The
/// fused score map is the pixelwise minimum of the inputs.
pub fn fuse_argmin(stack: &VersionStack) -> (ImageBuffer, ScoreMap) {
    let (w, h) = (stack.versions[0].0.width, stack.versions[0].0.height);
    let mut image = ImageBuffer::new(w, h);
    let mut score = ScoreMap::new(w, h);
    for i in 0..w * h {
        let mut best_k = 0usize;
        let mut best_s = stack.versions[0].1.values[i];
        for (k, (_, s)) in stack.versions.iter().enumerate().skip(1) {
            if s.values[i] < best_s {
                best_s = s.values[i];
                best_k = k;
            }
        }
        let src = &stack.versions[best_k].0;
        image.pixels[i * 3..i * 3 + 3].copy_from_slice(&src.pixels[i * 3..i * 3 + 3]);
        score.values[i] = best_s;
    }
    (image, score)
}

/// Weighted-average fusion baseline: per-pixel softmax of negative scores.
pub fn fuse_weighted(stack: &VersionStack, temperature: f64) -> Result<(ImageBuffer, ScoreMap)> {
    if temperature <= 0.0 {
        return Err(HadError::Config(format!(
            "fuse_weighted temperature must be positive, got {temperature}"
        )));
    }
    let (w, h) = (stack.versions[0].0.width, stack.versions[0].0.height);
    let mut image = ImageBuffer::new(w, h);
    let mut score = ScoreMap::new(w, h);
    let k_count = stack.k();
    let mut weights = vec![0.0f64; k_count];
    for i in 0..w * h {
        let min_s = stack
            .versions
            .iter()
            .map(|(_, s)| s.values[i])
            .fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for (k, (_, s)) in stack.versions.iter().enumerate() {
            let wgt = (-(s.values[i] - min_s) / temperature).exp();
            weights[k] = wgt;
            total += wgt;
        }
        let mut px = [0.0f64; 3];
        let mut sc = 0.0;
        for (k, (img, s)) in stack.versions.iter().enumerate() {
            let wgt = weights[k] / total;
            for c in 0..3 {
                px[c] += wgt * img.pixels[i * 3 + c];
            }
            sc += wgt * s.values[i];
        }
        image.pixels[i * 3..i * 3 + 3].copy_from_slice(&px);
        score.values[i] = sc;
    }
    Ok((image, score))
}
