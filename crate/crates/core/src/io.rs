//! File formats and persistence: PPM/PFM/PNG rasters, camera sidecars,
//! Gaussian-set checkpoints (JSON header + f64 blob), scene directories,
//! scorer triplet directories, and the metrics CSV.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::ScorerTriplet;
use crate::buffer::{BinaryMask, DepthBuffer, ImageBuffer, ScoreMap};
use crate::error::{HadError, Result};
use crate::scene::{Camera, GaussianPrimitive, GaussianSet, SceneSpec, ViewRecord, ViewRole, ViewSet};
use crate::scorer::ScorerModel;

/// Raster format for image dumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    #[default]
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ppm" => Ok(ImageFormat::Ppm),
            "png" => Ok(ImageFormat::Png),
            other => Err(HadError::Config(format!("unknown image format '{other}'"))),
        }
    }
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit binary PPM (P6, maxval 255, row-major RGB).
pub fn write_ppm(path: &Path, img: &ImageBuffer) -> Result<()> {
    let mut data = Vec::with_capacity(32 + img.pixels.len());
    data.extend_from_slice(format!("P6\n{} {}\n255\n", img.width, img.height).as_bytes());
    data.extend(img.pixels.iter().map(|&v| quantize(v)));
    fs::write(path, data)?;
    Ok(())
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn parse_err<T>(&self, what: &str) -> Result<T> {
        Err(HadError::Parse { offset: self.pos, what: what.to_string() })
    }

    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn read_uint(&mut self, field: &str) -> Result<usize> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return self.parse_err(&format!("missing {field}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map_or_else(|| self.parse_err(&format!("invalid {field}")), Ok)
    }

    fn read_line(&mut self, field: &str) -> Result<&'a str> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return self.parse_err(&format!("missing {field}"));
        }
        let line = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| HadError::Parse { offset: start, what: format!("invalid {field}") })?;
        self.pos += 1;
        Ok(line)
    }
}

/// Reads a binary PPM written by [`write_ppm`]. Malformed input yields a
/// parse error naming the missing field and its byte offset.
pub fn read_ppm(path: &Path) -> Result<ImageBuffer> {
    let bytes = fs::read(path)?;
    let mut cur = ByteCursor { bytes: &bytes, pos: 0 };
    if !bytes.starts_with(b"P6") {
        return cur.parse_err("missing P6 magic");
    }
    cur.pos = 2;
    let width = cur.read_uint("width")?;
    let height = cur.read_uint("height")?;
    let maxval = cur.read_uint("maxval")?;
    if maxval != 255 {
        return cur.parse_err("unsupported maxval (expected 255)");
    }
    // Exactly one whitespace byte separates the header from the raster.
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return cur.parse_err("missing raster separator");
    }
    cur.pos += 1;
    let need = width * height * 3;
    if bytes.len() - cur.pos < need {
        return cur.parse_err("truncated pixel data");
    }
    let mut img = ImageBuffer::new(width, height);
    for (dst, &src) in img.pixels.iter_mut().zip(&bytes[cur.pos..cur.pos + need]) {
        *dst = src as f64 / 255.0;
    }
    Ok(img)
}

/// Writes a single-channel PFM: little-endian f32, rows bottom-to-top.
pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(HadError::Contract("pfm value count mismatch".into()));
    }
    let mut data = Vec::with_capacity(32 + values.len() * 4);
    data.extend_from_slice(format!("Pf\n{width} {height}\n-1.0\n").as_bytes());
    for y in (0..height).rev() {
        for x in 0..width {
            data.extend_from_slice(&(values[y * width + x] as f32).to_le_bytes());
        }
    }
    fs::write(path, data)?;
    Ok(())
}

/// Reads a single-channel PFM into (width, height, row-major values).
pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let mut cur = ByteCursor { bytes: &bytes, pos: 0 };
    let magic = cur.read_line("PFM magic")?;
    if magic.trim() != "Pf" {
        return Err(HadError::Parse { offset: 0, what: "missing Pf magic".into() });
    }
    let dims = cur.read_line("dimensions")?;
    let mut it = dims.split_whitespace();
    let width: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(HadError::Parse { offset: cur.pos, what: "missing width".into() })?;
    let height: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(HadError::Parse { offset: cur.pos, what: "missing height".into() })?;
    let scale_line = cur.read_line("scale")?;
    let scale: f64 = scale_line
        .trim()
        .parse()
        .map_err(|_| HadError::Parse { offset: cur.pos, what: "invalid scale".into() })?;
    if scale >= 0.0 {
        return cur.parse_err("big-endian PFM unsupported (scale must be negative)");
    }
    let need = width * height * 4;
    if bytes.len() - cur.pos < need {
        return cur.parse_err("truncated PFM data");
    }
    let mut values = vec![0.0f64; width * height];
    let mut off = cur.pos;
    for y in (0..height).rev() {
        for x in 0..width {
            let mut b = [0u8; 4];
            b.copy_from_slice(&bytes[off..off + 4]);
            values[y * width + x] = f32::from_le_bytes(b) as f64;
            off += 4;
        }
    }
    Ok((width, height, values))
}

pub fn write_score_map(path: &Path, score: &ScoreMap) -> Result<()> {
    write_pfm(path, score.width, score.height, &score.values)
}

pub fn read_score_map(path: &Path) -> Result<ScoreMap> {
    let (width, height, values) = read_pfm(path)?;
    Ok(ScoreMap { width, height, values })
}

pub fn write_depth_map(path: &Path, depth: &DepthBuffer) -> Result<()> {
    write_pfm(path, depth.width, depth.height, &depth.values)
}

pub fn read_depth_map(path: &Path) -> Result<DepthBuffer> {
    let (width, height, values) = read_pfm(path)?;
    Ok(DepthBuffer { width, height, values })
}

pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    let mut out = image::RgbImage::new(img.width as u32, img.height as u32);
    for (i, px) in out.pixels_mut().enumerate() {
        px.0 = [
            quantize(img.pixels[i * 3]),
            quantize(img.pixels[i * 3 + 1]),
            quantize(img.pixels[i * 3 + 2]),
        ];
    }
    out.save(path)
        .map_err(|e| HadError::Config(format!("png write failed: {e}")))?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path)
        .map_err(|e| HadError::Parse { offset: 0, what: format!("png read failed: {e}") })?
        .to_rgb8();
    let mut out = ImageBuffer::new(img.width() as usize, img.height() as usize);
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out.pixels[i * 3 + c] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

pub fn write_image(path: &Path, img: &ImageBuffer, format: ImageFormat) -> Result<()> {
    match format {
        ImageFormat::Ppm => write_ppm(path, img),
        ImageFormat::Png => write_png(path, img),
    }
}

pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => read_ppm(path),
        Some("png") => read_png(path),
        other => Err(HadError::Config(format!("unsupported image extension {other:?}"))),
    }
}

/// Masks dump as 0/255 PPMs: white marks excluded pixels.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let mut img = ImageBuffer::new(mask.width, mask.height);
    for (i, &b) in mask.bits.iter().enumerate() {
        let v = if b { 1.0 } else { 0.0 };
        img.pixels[i * 3..i * 3 + 3].copy_from_slice(&[v, v, v]);
    }
    write_ppm(path, &img)
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    /// Row-major world-to-camera rotation.
    r: [f64; 9],
    t: [f64; 3],
    role: ViewRole,
}

pub fn write_camera_json(path: &Path, cam: &Camera, role: ViewRole) -> Result<()> {
    let mut r = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            r[i * 3 + j] = cam.rotation_w2c[(i, j)];
        }
    }
    let doc = CameraJson {
        fx: cam.fx,
        fy: cam.fy,
        cx: cam.cx,
        cy: cam.cy,
        width: cam.width,
        height: cam.height,
        r,
        t: [cam.translation_w2c.x, cam.translation_w2c.y, cam.translation_w2c.z],
        role,
    };
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn read_camera_json(path: &Path) -> Result<(Camera, ViewRole)> {
    let doc: CameraJson = serde_json::from_str(&fs::read_to_string(path)?)?;
    let mut rotation = nalgebra::Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            rotation[(i, j)] = doc.r[i * 3 + j];
        }
    }
    let cam = Camera {
        fx: doc.fx,
        fy: doc.fy,
        cx: doc.cx,
        cy: doc.cy,
        width: doc.width,
        height: doc.height,
        rotation_w2c: rotation,
        translation_w2c: nalgebra::Vector3::new(doc.t[0], doc.t[1], doc.t[2]),
    };
    cam.validate()?;
    Ok((cam, doc.role))
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    primitive_count: usize,
    sh_lens: Vec<usize>,
    background_color: [f64; 3],
    blob: String,
}

/// Checkpoint: JSON header next to a packed little-endian f64 blob holding
/// [mean 3][log_scale 3][rotation 4][opacity 1][sh 3k] per primitive.
pub fn write_gaussian_set(json_path: &Path, set: &GaussianSet) -> Result<()> {
    let blob_path = json_path.with_extension("bin");
    let header = CheckpointHeader {
        primitive_count: set.primitives.len(),
        sh_lens: set.primitives.iter().map(|p| p.sh_coeffs.len()).collect(),
        background_color: set.background_color,
        blob: blob_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let mut blob: Vec<u8> = Vec::new();
    let mut push = |v: f64| blob.extend_from_slice(&v.to_le_bytes());
    for p in &set.primitives {
        for v in p.mean {
            push(v);
        }
        for v in p.log_scale {
            push(v);
        }
        for v in p.rotation {
            push(v);
        }
        push(p.opacity_logit);
        for coeff in &p.sh_coeffs {
            for &v in coeff {
                push(v);
            }
        }
    }
    fs::write(json_path, serde_json::to_string_pretty(&header)?)?;
    fs::write(blob_path, blob)?;
    Ok(())
}

pub fn read_gaussian_set(json_path: &Path) -> Result<GaussianSet> {
    let header: CheckpointHeader = serde_json::from_str(&fs::read_to_string(json_path)?)?;
    let blob_path = json_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.blob);
    let blob = fs::read(&blob_path)?;
    let mut off = 0usize;
    let mut next = |what: &str| -> Result<f64> {
        if off + 8 > blob.len() {
            return Err(HadError::Parse { offset: off, what: format!("truncated blob at {what}") });
        }
        let mut b = [0u8; 8];
        b.copy_from_slice(&blob[off..off + 8]);
        off += 8;
        Ok(f64::from_le_bytes(b))
    };
    if header.sh_lens.len() != header.primitive_count {
        return Err(HadError::Parse { offset: 0, what: "sh_lens length mismatch".into() });
    }
    let mut primitives = Vec::with_capacity(header.primitive_count);
    for &sh_len in &header.sh_lens {
        let mut p = GaussianPrimitive {
            mean: [0.0; 3],
            log_scale: [0.0; 3],
            rotation: [0.0; 4],
            opacity_logit: 0.0,
            sh_coeffs: vec![[0.0; 3]; sh_len],
        };
        for v in &mut p.mean {
            *v = next("mean")?;
        }
        for v in &mut p.log_scale {
            *v = next("log_scale")?;
        }
        for v in &mut p.rotation {
            *v = next("rotation")?;
        }
        p.opacity_logit = next("opacity")?;
        for coeff in &mut p.sh_coeffs {
            for v in coeff.iter_mut() {
                *v = next("sh")?;
            }
        }
        primitives.push(p);
    }
    let set = GaussianSet { primitives, background_color: header.background_color };
    set.validate()?;
    Ok(set)
}

pub fn write_scorer_model(path: &Path, model: &ScorerModel) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(model)?)?;
    Ok(())
}

pub fn read_scorer_model(path: &Path) -> Result<ScorerModel> {
    let model: ScorerModel = serde_json::from_str(&fs::read_to_string(path)?)?;
    model.validate()?;
    Ok(model)
}

/// Scene directory layout:
/// `scene.json` (spec), `gaussians.json`/`.bin` (ground truth),
/// `views/view_NNNN.{ppm|png}` + `views/view_NNNN.json` sidecars.
pub fn write_scene_dir(
    dir: &Path,
    spec: &SceneSpec,
    set: &GaussianSet,
    views: &ViewSet,
    format: ImageFormat,
) -> Result<()> {
    fs::create_dir_all(dir.join("views"))?;
    fs::write(dir.join("scene.json"), serde_json::to_string_pretty(spec)?)?;
    write_gaussian_set(&dir.join("gaussians.json"), set)?;
    for (i, v) in views.views.iter().enumerate() {
        let stem = format!("view_{i:04}");
        write_image(
            &dir.join("views").join(format!("{stem}.{}", format.extension())),
            &v.image,
            format,
        )?;
        write_camera_json(&dir.join("views").join(format!("{stem}.json")), &v.camera, v.role)?;
    }
    Ok(())
}

pub fn read_scene_dir(dir: &Path) -> Result<(SceneSpec, GaussianSet, ViewSet)> {
    let spec: SceneSpec = serde_json::from_str(&fs::read_to_string(dir.join("scene.json"))?)?;
    let set = read_gaussian_set(&dir.join("gaussians.json"))?;
    let views_dir = dir.join("views");
    let mut stems: Vec<String> = fs::read_dir(&views_dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix(".json").map(|s| s.to_string())
        })
        .collect();
    stems.sort();
    let mut views = Vec::new();
    for stem in stems {
        let (camera, role) = read_camera_json(&views_dir.join(format!("{stem}.json")))?;
        let ppm = views_dir.join(format!("{stem}.ppm"));
        let png = views_dir.join(format!("{stem}.png"));
        let image = if ppm.exists() { read_ppm(&ppm)? } else { read_png(&png)? };
        views.push(ViewRecord { camera, image, role });
    }
    let set_views = ViewSet { views };
    set_views.validate()?;
    Ok((spec, set, set_views))
}

/// Triplet directory layout: one `view_NNNN/` per triplet holding
/// `gt.ppm`, `aug.ppm`, `splat.ppm`, `score.pfm`, `depth.pfm`, `camera.json`.
pub fn write_triplets_dir(dir: &Path, triplets: &[ScorerTriplet]) -> Result<()> {
    for (i, t) in triplets.iter().enumerate() {
        let tdir = dir.join(format!("view_{i:04}"));
        fs::create_dir_all(&tdir)?;
        write_ppm(&tdir.join("gt.ppm"), &t.gt_image)?;
        write_ppm(&tdir.join("aug.ppm"), &t.augmented)?;
        write_ppm(&tdir.join("splat.ppm"), &t.splat_render)?;
        write_score_map(&tdir.join("score.pfm"), &t.gt_score)?;
        write_depth_map(&tdir.join("depth.pfm"), &t.novel_depth)?;
        write_camera_json(&tdir.join("camera.json"), &t.camera, ViewRole::Novel)?;
    }
    Ok(())
}

pub fn read_triplets_dir(dir: &Path) -> Result<Vec<ScorerTriplet>> {
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut triplets = Vec::new();
    for tdir in subdirs {
        let (camera, _) = read_camera_json(&tdir.join("camera.json"))?;
        triplets.push(ScorerTriplet {
            gt_image: read_ppm(&tdir.join("gt.ppm"))?,
            augmented: read_ppm(&tdir.join("aug.ppm"))?,
            splat_render: read_ppm(&tdir.join("splat.ppm"))?,
            camera,
            gt_score: read_score_map(&tdir.join("score.pfm"))?,
            novel_depth: read_depth_map(&tdir.join("depth.pfm"))?,
        });
    }
    Ok(triplets)
}

#[derive(Serialize, Deserialize)]
struct StackMeta {
    ref_indices: Vec<usize>,
}

/// Sidecar for a version-stack directory: which reference views fed it.
pub fn write_stack_meta(path: &Path, ref_indices: &[usize]) -> Result<()> {
    let meta = StackMeta { ref_indices: ref_indices.to_vec() };
    fs::write(path, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_stack_meta(path: &Path) -> Result<Vec<usize>> {
    let meta: StackMeta = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(meta.ref_indices)
}

/// Input views with per-view depth renders, as input context for scorer
/// training: `inputs/input_NN.ppm`, `input_NN_depth.pfm`, `input_NN.json`.
pub fn write_ref_views(dir: &Path, refs: &[(ViewRecord, DepthBuffer)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, (view, depth)) in refs.iter().enumerate() {
        write_ppm(&dir.join(format!("input_{i:02}.ppm")), &view.image)?;
        write_depth_map(&dir.join(format!("input_{i:02}_depth.pfm")), depth)?;
        write_camera_json(&dir.join(format!("input_{i:02}.json")), &view.camera, view.role)?;
    }
    Ok(())
}

pub fn read_ref_views(dir: &Path) -> Result<Vec<(ViewRecord, DepthBuffer)>> {
    let mut idx = 0usize;
    let mut out = Vec::new();
    loop {
        let json = dir.join(format!("input_{idx:02}.json"));
        if !json.exists() {
            break;
        }
        let (camera, role) = read_camera_json(&json)?;
        let image = read_ppm(&dir.join(format!("input_{idx:02}.ppm")))?;
        let depth = read_depth_map(&dir.join(format!("input_{idx:02}_depth.pfm")))?;
        out.push((ViewRecord { camera, image, role }, depth));
        idx += 1;
    }
    if out.is_empty() {
        return Err(HadError::Config(format!("no input views under {}", dir.display())));
    }
    Ok(out)
}

/// One evaluation row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub psnr: f64,
    pub ssim: f64,
    pub score_mae: Option<f64>,
    pub scene: String,
    pub method: String,
    pub seed: u64,
}

pub const METRICS_HEADER: &str = "psnr,ssim,score_mae,scene,method,seed";

impl MetricRow {
    pub fn to_csv_line(&self) -> String {
        let mae = self.score_mae.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{:.6},{:.6},{},{},{},{}",
            self.psnr, self.ssim, mae, self.scene, self.method, self.seed
        )
    }
}

/// Appends rows to a CSV file, writing the header when the file is new.
pub fn append_metric_rows(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let new_file = !path.exists();
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    if new_file {
        writeln!(f, "{METRICS_HEADER}")?;
    }
    for r in rows {
        writeln!(f, "{}", r.to_csv_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_synthetic_scene, SceneKind, SceneSpec};
    use rand::Rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn ppm_round_trip_quantization_bound() {
        let dir = tmp();
        let mut rng = crate::rng::seeded_rng(1, &[0x10]);
        let mut img = ImageBuffer::new(13, 9);
        for v in &mut img.pixels {
            *v = rng.gen_range(0.0..1.0);
        }
        let path = dir.path().join("x.ppm");
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        let max_dev = img
            .pixels
            .iter()
            .zip(&back.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev <= 1.0 / 255.0 + 1e-12, "max deviation {max_dev}");
        // Re-quantizing already-quantized data is the identity.
        let path2 = dir.path().join("y.ppm");
        write_ppm(&path2, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_ppm_names_missing_field() {
        let dir = tmp();
        let path = dir.path().join("bad.ppm");
        fs::write(&path, b"P6\n13 ").unwrap();
        match read_ppm(&path) {
            Err(HadError::Parse { what, .. }) => assert!(what.contains("height"), "{what}"),
            other => panic!("expected parse error, got {other:?}"),
        }
        fs::write(&path, b"P6\n4 4\n255\n\0\0\0").unwrap();
        match read_ppm(&path) {
            Err(HadError::Parse { what, offset }) => {
                assert!(what.contains("truncated"), "{what}");
                assert!(offset > 0);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let dir = tmp();
        let mut rng = crate::rng::seeded_rng(2, &[0x11]);
        // f32-representable values round-trip bit-exactly through PFM.
        let vals: Vec<f64> = (0..7 * 5)
            .map(|_| rng.gen_range(-2.0f32..2.0) as f64)
            .collect();
        let path = dir.path().join("x.pfm");
        write_pfm(&path, 7, 5, &vals).unwrap();
        let (w, h, back) = read_pfm(&path).unwrap();
        assert_eq!((w, h), (7, 5));
        assert!(vals.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn png_round_trip_quantization_bound() {
        let dir = tmp();
        let mut rng = crate::rng::seeded_rng(3, &[0x12]);
        let mut img = ImageBuffer::new(8, 6);
        for v in &mut img.pixels {
            *v = rng.gen_range(0.0..1.0);
        }
        let path = dir.path().join("x.png");
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        let max_dev = img
            .pixels
            .iter()
            .zip(&back.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev <= 1.0 / 255.0 + 1e-12);
    }

    #[test]
    fn gaussian_set_checkpoint_round_trip() {
        let dir = tmp();
        let (set, _) = make_synthetic_scene(&SceneSpec {
            scene_kind: SceneKind::BlobField,
            num_gaussians: 17,
            num_input_views: 2,
            num_target_views: 1,
            num_test_views: 1,
            image_size: (16, 16),
            seed: 5,
        })
        .unwrap();
        let path = dir.path().join("ckpt.json");
        write_gaussian_set(&path, &set).unwrap();
        let back = read_gaussian_set(&path).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn scene_dir_round_trip() {
        let dir = tmp();
        let spec = SceneSpec {
            scene_kind: SceneKind::TexturedRoom,
            num_gaussians: 30,
            num_input_views: 3,
            num_target_views: 2,
            num_test_views: 1,
            image_size: (24, 24),
            seed: 8,
        };
        let (set, views) = make_synthetic_scene(&spec).unwrap();
        write_scene_dir(dir.path(), &spec, &set, &views, ImageFormat::Ppm).unwrap();
        let (spec2, set2, views2) = read_scene_dir(dir.path()).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(set, set2);
        assert_eq!(views.views.len(), views2.views.len());
        for (a, b) in views.views.iter().zip(&views2.views) {
            assert_eq!(a.role, b.role);
            assert!((a.camera.fx - b.camera.fx).abs() < 1e-12);
            assert!(a.image.mean_abs_diff(&b.image) <= 1.0 / 255.0);
        }
    }

    #[test]
    fn camera_json_round_trip() {
        let dir = tmp();
        let (_, views) = make_synthetic_scene(&SceneSpec {
            scene_kind: SceneKind::BlobField,
            num_gaussians: 5,
            num_input_views: 2,
            num_target_views: 1,
            num_test_views: 1,
            image_size: (12, 12),
            seed: 3,
        })
        .unwrap();
        let cam = &views.views[1].camera;
        let path = dir.path().join("cam.json");
        write_camera_json(&path, cam, ViewRole::Target).unwrap();
        let (back, role) = read_camera_json(&path).unwrap();
        assert_eq!(role, ViewRole::Target);
        assert_eq!(cam.rotation_w2c, back.rotation_w2c);
        assert_eq!(cam.translation_w2c, back.translation_w2c);
    }

    #[test]
    fn metric_rows_append_with_single_header() {
        let dir = tmp();
        let path = dir.path().join("m.csv");
        let row = MetricRow {
            psnr: 21.5,
            ssim: 0.71,
            score_mae: None,
            scene: "blob_01".into(),
            method: "had".into(),
            seed: 3,
        };
        append_metric_rows(&path, &[row.clone()]).unwrap();
        append_metric_rows(&path, &[MetricRow { score_mae: Some(0.043), ..row }]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1], "21.500000,0.710000,,blob_01,had,3");
        assert_eq!(lines[2], "21.500000,0.710000,0.043000,blob_01,had,3");
    }
}
