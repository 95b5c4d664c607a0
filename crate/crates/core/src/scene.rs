//! Scene and camera data model plus deterministic synthetic-scene generation.
//!
//! Scenes are generated from a [`SceneSpec`] and are fully reproducible: the
//! ground-truth Gaussian set is sampled from a seeded stream and every view's
//! stored image is *defined* as the render of that set, so input views are
//! perfectly consistent by construction.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::error::{HadError, Result};
use crate::rng::{self, seeded_rng};

/// Quaternion stored as `[w, x, y, z]`, kept unit-norm by every mutation path.
pub type Quat = [f64; 4];

pub fn quat_normalize(q: Quat) -> Quat {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
pub fn quat_to_matrix(q: Quat) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Unit quaternion of a proper rotation matrix (Shepperd's method).
pub fn matrix_to_quat(m: &Matrix3<f64>) -> Quat {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    quat_normalize(q)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic Gaussian primitive of the scene representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub mean: [f64; 3],
    /// Exponentiated per-axis to the scaling matrix diagonal.
    pub log_scale: [f64; 3],
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: Quat,
    /// Sigmoid-mapped to the opacity in (0, 1).
    pub opacity_logit: f64,
    /// Per-channel spherical-harmonic coefficients. One entry = degree 0
    /// (plain RGB); four entries add the three degree-1 bands.
    pub sh_coeffs: Vec<[f64; 3]>,
}

impl GaussianPrimitive {
    pub fn mean_v(&self) -> Vector3<f64> {
        Vector3::new(self.mean[0], self.mean[1], self.mean[2])
    }

    pub fn scales(&self) -> Vector3<f64> {
        Vector3::new(
            self.log_scale[0].exp(),
            self.log_scale[1].exp(),
            self.log_scale[2].exp(),
        )
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(quat_normalize(self.rotation))
    }

    pub fn normalize_rotation(&mut self) {
        self.rotation = quat_normalize(self.rotation);
    }

    pub fn validate(&self) -> Result<()> {
        let qn: f64 = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-6 {
            return Err(HadError::Contract(format!("quaternion norm {qn} != 1")));
        }
        let finite = self.mean.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh_coeffs.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(HadError::Contract("non-finite primitive parameter".into()));
        }
        if self.sh_coeffs.is_empty() || self.sh_coeffs.len() > 4 {
            return Err(HadError::Contract(format!(
                "sh_coeffs length {} unsupported (expected 1 or 4)",
                self.sh_coeffs.len()
            )));
        }
        Ok(())
    }
}

/// The optimizable scene: a fixed-count list of primitives plus background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSet {
    pub primitives: Vec<GaussianPrimitive>,
    pub background_color: [f64; 3],
}

impl GaussianSet {
    pub fn validate(&self) -> Result<()> {
        for p in &self.primitives {
            p.validate()?;
        }
        Ok(())
    }
}

/// Calibrated pinhole camera; extrinsics stored world-to-camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation_w2c: Matrix3<f64>,
    pub translation_w2c: Vector3<f64>,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(HadError::Contract("camera with zero extent".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(HadError::Contract("nonpositive focal length".into()));
        }
        let gram = self.rotation_w2c.transpose() * self.rotation_w2c;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > 1e-9 {
            return Err(HadError::Contract(format!(
                "rotation not orthonormal (deviation {dev:.3e})"
            )));
        }
        if self.rotation_w2c.determinant() < 0.0 {
            return Err(HadError::Contract("rotation has negative determinant".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_w2c.transpose() * self.translation_w2c)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_w2c * p + self.translation_w2c
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    pub fn project_cam(&self, pc: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        )
    }

    pub fn same_intrinsics(&self, other: &Camera) -> bool {
        self.fx == other.fx
            && self.fy == other.fy
            && self.cx == other.cx
            && self.cy == other.cy
            && self.width == other.width
            && self.height == other.height
    }

    /// Camera at `pos` looking at `target`, with image-down roughly opposite
    /// `up`. `pos - target` must not be parallel to `up`.
    pub fn look_at(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        pos: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Camera {
        let z = (target - pos).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let rotation_w2c = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation_w2c = -(rotation_w2c * pos);
        Camera { fx, fy, cx, cy, width, height, rotation_w2c, translation_w2c }
    }
}

/// Role of a view in the training/evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewRole {
    Input,
    Target,
    Test,
    Novel,
}

impl std::fmt::Display for ViewRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ViewRole::Input => "input",
            ViewRole::Target => "target",
            ViewRole::Test => "test",
            ViewRole::Novel => "novel",
        };
        f.write_str(s)
    }
}

/// A calibrated view: camera pose plus a stored image with its role.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub camera: Camera,
    pub image: ImageBuffer,
    pub role: ViewRole,
}

impl ViewRecord {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.image.width != self.camera.width || self.image.height != self.camera.height {
            return Err(HadError::Contract(
                "view image dimensions do not match camera".into(),
            ));
        }
        Ok(())
    }
}

/// The full set of calibrated views of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub views: Vec<ViewRecord>,
}

impl ViewSet {
    pub fn role_count(&self, role: ViewRole) -> usize {
        self.views.iter().filter(|v| v.role == role).count()
    }

    pub fn indices_with_role(&self, role: ViewRole) -> Vec<usize> {
        self.views
            .iter()
            .enumerate()
            .filter(|(_, v)| v.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn views_with_role(&self, role: ViewRole) -> impl Iterator<Item = &ViewRecord> {
        self.views.iter().filter(move |v| v.role == role)
    }

    pub fn validate(&self) -> Result<()> {
        if self.role_count(ViewRole::Input) == 0 {
            return Err(HadError::Contract("view set has no input views".into()));
        }
        for v in &self.views {
            v.validate()?;
        }
        Ok(())
    }
}

/// Procedural scene family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Random colored blobs in a bounded box: texture-rich volumetric content.
    BlobField,
    /// Gaussians arranged on axis-aligned planes with procedural patterns:
    /// flat, structured content.
    TexturedRoom,
}

/// Deterministic recipe for one synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_kind: SceneKind,
    pub num_gaussians: usize,
    pub num_input_views: usize,
    pub num_target_views: usize,
    pub num_test_views: usize,
    /// (width, height) in pixels.
    pub image_size: (usize, usize),
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.num_gaussians > 0
            && self.num_input_views > 0
            && self.num_target_views > 0
            && self.num_test_views > 0
            && self.image_size.0 > 0
            && self.image_size.1 > 0;
        if ok {
            Ok(())
        } else {
            Err(HadError::Config("scene spec has a zero count".into()))
        }
    }
}

/// Half extent of the box all generated scene content lives in.
pub const SCENE_HALF_EXTENT: f64 = 0.9;
const CAMERA_RADIUS: f64 = 3.2;
const CAMERA_ELEVATION_DEG: f64 = 14.0;
const INPUT_ARC_DEG: f64 = 100.0;
const EXTENSION_ARC_DEG: f64 = 42.0;

fn random_unit_quat<R: Rng>(rng: &mut R) -> Quat {
    loop {
        let q: Quat = [
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        ];
        let n2: f64 = q.iter().map(|v| v * v).sum();
        if n2 > 1e-4 && n2 < 1.0 {
            let n = n2.sqrt();
            return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        }
    }
}

fn gen_blob_field<R: Rng>(rng: &mut R, n: usize) -> Vec<GaussianPrimitive> {
    let e = SCENE_HALF_EXTENT;
    (0..n)
        .map(|_| {
            let mean = [
                rng.gen_range(-e..e),
                rng.gen_range(-e..e),
                rng.gen_range(-e..e),
            ];
            let log_scale = [
                rng.gen_range(0.045f64..0.11).ln(),
                rng.gen_range(0.045f64..0.11).ln(),
                rng.gen_range(0.045f64..0.11).ln(),
            ];
            let rotation = random_unit_quat(rng);
            let opacity_logit = logit(rng.gen_range(0.35..0.9));
            let sh0 = [
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
            ];
            let sh1 = |rng: &mut R| {
                [
                    rng.gen_range(-0.04..0.04),
                    rng.gen_range(-0.04..0.04),
                    rng.gen_range(-0.04..0.04),
                ]
            };
            GaussianPrimitive {
                mean,
                log_scale,
                rotation,
                opacity_logit,
                sh_coeffs: vec![sh0, sh1(rng), sh1(rng), sh1(rng)],
            }
        })
        .collect()
}

/// Procedural plate color: two-tone checker with a stripe accent.
fn room_pattern(u: f64, v: f64, palette: usize) -> [f64; 3] {
    let checker = ((u * 4.0).floor() as i64 + (v * 4.0).floor() as i64) % 2 == 0;
    let stripe = ((u * 11.0).sin() * (v * 7.0).cos()) > 0.55;
    let (a, b, c) = match palette % 3 {
        0 => ([0.82, 0.31, 0.25], [0.92, 0.78, 0.55], [0.2, 0.45, 0.75]),
        1 => ([0.25, 0.62, 0.33], [0.85, 0.85, 0.8], [0.75, 0.55, 0.2]),
        _ => ([0.3, 0.35, 0.72], [0.78, 0.72, 0.85], [0.85, 0.3, 0.5]),
    };
    if stripe {
        c
    } else if checker {
        a
    } else {
        b
    }
}

fn gen_textured_room<R: Rng>(rng: &mut R, n: usize) -> Vec<GaussianPrimitive> {
    let e = SCENE_HALF_EXTENT;
    // Planes visible from the camera arc (which sits at z < 0 looking at +z):
    // floor, back wall, two side walls.
    struct Plane {
        origin: Vector3<f64>,
        tan_u: Vector3<f64>,
        tan_v: Vector3<f64>,
        rotation: Quat,
        share: f64,
        palette: usize,
    }
    // Quaternions rotating the local z axis onto each plane normal.
    let planes = [
        Plane {
            // floor y = -e, normal +y: rotate z onto y (90 deg about x)
            origin: Vector3::new(0.0, -e, 0.0),
            tan_u: Vector3::new(1.0, 0.0, 0.0),
            tan_v: Vector3::new(0.0, 0.0, 1.0),
            rotation: quat_normalize([std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0]),
            share: 0.35,
            palette: 0,
        },
        Plane {
            // back wall z = +e, normal -z: identity keeps local z on the normal axis
            origin: Vector3::new(0.0, 0.0, e),
            tan_u: Vector3::new(1.0, 0.0, 0.0),
            tan_v: Vector3::new(0.0, 1.0, 0.0),
            rotation: [1.0, 0.0, 0.0, 0.0],
            share: 0.35,
            palette: 1,
        },
        Plane {
            // left wall x = -e, normal +x: rotate z onto x (90 deg about y)
            origin: Vector3::new(-e, 0.0, 0.0),
            tan_u: Vector3::new(0.0, 0.0, 1.0),
            tan_v: Vector3::new(0.0, 1.0, 0.0),
            rotation: quat_normalize([std::f64::consts::FRAC_1_SQRT_2, 0.0, std::f64::consts::FRAC_1_SQRT_2, 0.0]),
            share: 0.15,
            palette: 2,
        },
        Plane {
            origin: Vector3::new(e, 0.0, 0.0),
            tan_u: Vector3::new(0.0, 0.0, 1.0),
            tan_v: Vector3::new(0.0, 1.0, 0.0),
            rotation: quat_normalize([std::f64::consts::FRAC_1_SQRT_2, 0.0, -std::f64::consts::FRAC_1_SQRT_2, 0.0]),
            share: 0.15,
            palette: 2,
        },
    ];
    let mut prims = Vec::with_capacity(n);
    for plane in &planes {
        let count = ((n as f64) * plane.share).round() as usize;
        for _ in 0..count {
            if prims.len() == n {
                break;
            }
            let u = rng.gen_range(-1.0..1.0);
            let v = rng.gen_range(-1.0..1.0);
            let pos = plane.origin + plane.tan_u * (u * e) + plane.tan_v * (v * e);
            let color = room_pattern(u * 2.0 + 2.0, v * 2.0 + 2.0, plane.palette);
            let t = rng.gen_range(0.06f64..0.12);
            prims.push(GaussianPrimitive {
                mean: [pos.x, pos.y, pos.z],
                log_scale: [t.ln(), t.ln(), 0.016f64.ln()],
                rotation: plane.rotation,
                opacity_logit: logit(rng.gen_range(0.7..0.95)),
                sh_coeffs: vec![
                    color,
                    [rng.gen_range(-0.02..0.02); 3],
                    [rng.gen_range(-0.02..0.02); 3],
                    [rng.gen_range(-0.02..0.02); 3],
                ],
            });
        }
    }
    // Fill any rounding shortfall with floor points.
    while prims.len() < n {
        let u = rng.gen_range(-1.0..1.0);
        let v = rng.gen_range(-1.0..1.0);
        let pos = Vector3::new(u * e, -e, v * e);
        let t = rng.gen_range(0.06f64..0.12);
        prims.push(GaussianPrimitive {
            mean: [pos.x, pos.y, pos.z],
            log_scale: [t.ln(), t.ln(), 0.016f64.ln()],
            rotation: quat_normalize([std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0]),
            opacity_logit: logit(rng.gen_range(0.7..0.95)),
            sh_coeffs: vec![
                room_pattern(u * 2.0 + 2.0, v * 2.0 + 2.0, 0),
                [0.0; 3],
                [0.0; 3],
                [0.0; 3],
            ],
        });
    }
    prims
}

fn arc_camera(theta_deg: f64, phi_deg: f64, width: usize, height: usize) -> Camera {
    let theta = theta_deg.to_radians();
    let phi = phi_deg.to_radians();
    let pos = Vector3::new(
        CAMERA_RADIUS * phi.cos() * theta.sin(),
        CAMERA_RADIUS * phi.sin(),
        -CAMERA_RADIUS * phi.cos() * theta.cos(),
    );
    let fx = width as f64;
    let fy = width as f64;
    Camera::look_at(
        fx,
        fy,
        width as f64 / 2.0,
        height as f64 / 2.0,
        width,
        height,
        pos,
        Vector3::zeros(),
        Vector3::new(0.0, 1.0, 0.0),
    )
}

/// Generates the ground-truth scene and its role-partitioned view set.
///
/// Input cameras sit on an arc facing the scene center; target cameras extend
/// the arc past one end (the extrapolation regime) and test cameras are
/// sampled between the inputs and the targets. Every stored image is the
/// render of the ground-truth set at its camera.
pub fn make_synthetic_scene(spec: &SceneSpec) -> Result<(GaussianSet, ViewSet)> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed, &[rng::stream::SCENE]);
    let primitives = match spec.scene_kind {
        SceneKind::BlobField => gen_blob_field(&mut rng, spec.num_gaussians),
        SceneKind::TexturedRoom => gen_textured_room(&mut rng, spec.num_gaussians),
    };
    let background_color = [
        rng.gen_range(0.02..0.08),
        rng.gen_range(0.02..0.08),
        rng.gen_range(0.04..0.1),
    ];
    let set = GaussianSet { primitives, background_color };
    set.validate()?;

    let (w, h) = spec.image_size;
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng, amp: f64| rng.gen_range(-amp..amp);

    let mut cams: Vec<(Camera, ViewRole)> = Vec::new();
    let half_arc = INPUT_ARC_DEG / 2.0;
    for i in 0..spec.num_input_views {
        let frac = if spec.num_input_views == 1 {
            0.5
        } else {
            i as f64 / (spec.num_input_views - 1) as f64
        };
        let theta = -half_arc + INPUT_ARC_DEG * frac + jitter(&mut rng, 1.5);
        let phi = CAMERA_ELEVATION_DEG + jitter(&mut rng, 2.5);
        cams.push((arc_camera(theta, phi, w, h), ViewRole::Input));
    }
    // Extension region past the arc end: tests first (nearer the inputs),
    // targets at the far end.
    let n_ext = spec.num_test_views + spec.num_target_views;
    for i in 0..n_ext {
        let frac = (i + 1) as f64 / n_ext as f64;
        let theta = half_arc + EXTENSION_ARC_DEG * frac + jitter(&mut rng, 1.0);
        let phi = CAMERA_ELEVATION_DEG + jitter(&mut rng, 2.0);
        let role = if i < spec.num_test_views {
            ViewRole::Test
        } else {
            ViewRole::Target
        };
        cams.push((arc_camera(theta, phi, w, h), role));
    }

    let views = cams
        .into_iter()
        .map(|(camera, role)| {
            let image = crate::render::render(&set, &camera).image;
            ViewRecord { camera, image, role }
        })
        .collect();
    let view_set = ViewSet { views };
    view_set.validate()?;
    Ok((set, view_set))
}

/// Pose interpolation between two cameras sharing intrinsics: geodesic
/// (shortest-arc slerp) on rotations, linear on camera centers.
pub fn interpolate_pose(c0: &Camera, c1: &Camera, u: f64) -> Result<Camera> {
    if !c0.same_intrinsics(c1) {
        return Err(HadError::Contract(
            "interpolate_pose requires identical intrinsics and resolution".into(),
        ));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(HadError::Contract(format!("interpolation fraction {u} outside [0,1]")));
    }
    if u == 0.0 {
        return Ok(c0.clone());
    }
    if u == 1.0 {
        return Ok(c1.clone());
    }

    let q0 = matrix_to_quat(&c0.rotation_w2c);
    let mut q1 = matrix_to_quat(&c1.rotation_w2c);
    let mut dot: f64 = q0.iter().zip(&q1).map(|(a, b)| a * b).sum();
    if dot < 0.0 {
        for v in &mut q1 {
            *v = -*v;
        }
        dot = -dot;
    }
    let q = if dot > 0.9995 {
        // Nearly parallel: normalized lerp avoids the 0/0 of slerp.
        let mut q = [0.0; 4];
        for k in 0..4 {
            q[k] = q0[k] * (1.0 - u) + q1[k] * u;
        }
        quat_normalize(q)
    } else {
        let theta = dot.clamp(-1.0, 1.0).acos();
        let s = theta.sin();
        let w0 = ((1.0 - u) * theta).sin() / s;
        let w1 = (u * theta).sin() / s;
        let mut q = [0.0; 4];
        for k in 0..4 {
            q[k] = q0[k] * w0 + q1[k] * w1;
        }
        quat_normalize(q)
    };

    let center = c0.center() * (1.0 - u) + c1.center() * u;
    let rotation_w2c = quat_to_matrix(q);
    let translation_w2c = -(rotation_w2c * center);
    Ok(Camera {
        rotation_w2c,
        translation_w2c,
        ..c0.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            scene_kind: SceneKind::BlobField,
            num_gaussians: 24,
            num_input_views: 9,
            num_target_views: 4,
            num_test_views: 3,
            image_size: (32, 32),
            seed,
        }
    }

    #[test]
    fn quat_matrix_round_trip() {
        let mut rng = seeded_rng(3, &[99]);
        for _ in 0..50 {
            let q = random_unit_quat(&mut rng);
            let m = quat_to_matrix(q);
            let q2 = matrix_to_quat(&m);
            // Quaternion double cover: q and -q encode the same rotation.
            let dot: f64 = q.iter().zip(&q2).map(|(a, b)| a * b).sum();
            assert!(dot.abs() > 1.0 - 1e-12, "round trip drift: dot={dot}");
            let gram = m.transpose() * m;
            assert!((gram - Matrix3::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn split_counts_follow_spec() {
        let (_, views) = make_synthetic_scene(&small_spec(1)).unwrap();
        assert_eq!(views.role_count(ViewRole::Input), 9);
        assert_eq!(views.role_count(ViewRole::Target), 4);
        assert_eq!(views.role_count(ViewRole::Test), 3);
        assert_eq!(views.views.len(), 16);
    }

    #[test]
    fn generation_is_deterministic() {
        let (set_a, views_a) = make_synthetic_scene(&small_spec(7)).unwrap();
        let (set_b, views_b) = make_synthetic_scene(&small_spec(7)).unwrap();
        assert_eq!(set_a, set_b);
        assert_eq!(views_a, views_b);
    }

    #[test]
    fn different_seeds_differ() {
        let (set_a, _) = make_synthetic_scene(&small_spec(1)).unwrap();
        let (set_b, _) = make_synthetic_scene(&small_spec(2)).unwrap();
        let any_diff = set_a
            .primitives
            .iter()
            .zip(&set_b.primitives)
            .any(|(a, b)| a.mean != b.mean);
        assert!(any_diff);
    }

    #[test]
    fn stored_images_are_exact_renders() {
        let (set, views) = make_synthetic_scene(&small_spec(5)).unwrap();
        for v in &views.views {
            let re = crate::render::render(&set, &v.camera).image;
            assert_eq!(re, v.image);
        }
    }

    #[test]
    fn zero_count_spec_rejected() {
        let mut spec = small_spec(1);
        spec.num_input_views = 0;
        assert!(matches!(
            make_synthetic_scene(&spec),
            Err(HadError::Config(_))
        ));
    }

    #[test]
    fn interpolation_endpoints_exact() {
        let (_, views) = make_synthetic_scene(&small_spec(2)).unwrap();
        let c0 = &views.views[0].camera;
        let c1 = &views.views[3].camera;
        assert_eq!(&interpolate_pose(c0, c1, 0.0).unwrap(), c0);
        assert_eq!(&interpolate_pose(c0, c1, 1.0).unwrap(), c1);
    }

    #[test]
    fn interpolation_rotations_stay_orthonormal() {
        let (_, views) = make_synthetic_scene(&small_spec(2)).unwrap();
        let c0 = &views.views[0].camera;
        let c1 = &views.views[8].camera;
        for i in 0..=10 {
            let u = i as f64 / 10.0;
            let c = interpolate_pose(c0, c1, u).unwrap();
            let gram = c.rotation_w2c.transpose() * c.rotation_w2c;
            assert!((gram - Matrix3::identity()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn halfway_rotation_bisects_a_fixed_axis_rotation() {
        // Two cameras differing by 60 degrees about a fixed axis: the
        // geodesic midpoint must differ from c0 by 30 degrees.
        let base = arc_camera(0.0, 10.0, 32, 32);
        let axis = Vector3::new(0.3, 1.0, -0.2).normalize();
        let rot60 = quat_to_matrix([
            (30f64).to_radians().cos(),
            axis.x * (30f64).to_radians().sin(),
            axis.y * (30f64).to_radians().sin(),
            axis.z * (30f64).to_radians().sin(),
        ]);
        let c1 = Camera {
            rotation_w2c: base.rotation_w2c * rot60,
            ..base.clone()
        };
        let mid = interpolate_pose(&base, &c1, 0.5).unwrap();
        let rel = base.rotation_w2c.transpose() * mid.rotation_w2c;
        let angle = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        assert!(
            (angle.to_degrees() - 30.0).abs() < 1e-9,
            "midpoint angle {} deg",
            angle.to_degrees()
        );
        // And about the same axis: the relative rotation axis matches.
        let rel_q = matrix_to_quat(&rel);
        let rel_axis = Vector3::new(rel_q[1], rel_q[2], rel_q[3]).normalize();
        assert!((rel_axis.dot(&axis)).abs() > 1.0 - 1e-9);
    }

    #[test]
    fn mismatched_intrinsics_rejected() {
        let a = arc_camera(0.0, 10.0, 32, 32);
        let mut b = arc_camera(10.0, 10.0, 32, 32);
        b.fx += 1.0;
        assert!(matches!(
            interpolate_pose(&a, &b, 0.5),
            Err(HadError::Contract(_))
        ));
    }
}
