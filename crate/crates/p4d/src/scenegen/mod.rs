//! Deterministic synthetic 4D scenes with analytic ground truth.
//!
//! Scenes are axis-aligned boxes drifting at constant velocity in front of a
//! checkerboard background plane, viewed by a pinhole camera with per-frame
//! pose. Rendering is exact ray casting against the boxes' camera-facing
//! planes, so depth, optical flow, motion masks, and Plucker camera rays all
//! come from the same closed-form geometry rather than from pixels.

pub mod io;
pub mod overlay;
pub mod render;
pub mod sampler;
pub mod vqa;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::{P4dError, Result};

pub use render::{generate_scene, plucker_rays};
pub use sampler::{sample_scene, SamplerConfig};
pub use vqa::{make_vqa, Category, Split, TemplateSet, VQASample};

/// Camera pose: world-to-camera, `x_cam = R x_world + t`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
        }
    }

    /// Yaw about the world y axis plus a translation of the camera center.
    pub fn from_yaw_and_center(yaw: f64, center: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        // camera-from-world rotation for a camera yawed by `yaw`
        let rotation = [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]];
        let t = [
            -(rotation[0][0] * center[0] + rotation[0][1] * center[1] + rotation[0][2] * center[2]),
            -(rotation[1][0] * center[0] + rotation[1][1] * center[1] + rotation[1][2] * center[2]),
            -(rotation[2][0] * center[0] + rotation[2][1] * center[1] + rotation[2][2] * center[2]),
        ];
        Self { rotation, translation: t }
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CameraSpec {
    /// Focal length in pixels.
    pub focal: f64,
    pub principal_point: [f64; 2],
    /// One pose per frame.
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ObjectSpec {
    /// Box extent in meters (x, y, z).
    pub size: [f64; 3],
    /// Center position at t = 0, world meters.
    pub position: [f64; 3],
    /// Constant velocity, m/s.
    pub velocity: [f64; 3],
    pub color: [f64; 3],
}

impl ObjectSpec {
    pub fn position_at(&self, t: f64) -> [f64; 3] {
        [
            self.position[0] + self.velocity[0] * t,
            self.position[1] + self.velocity[1] * t,
            self.position[2] + self.velocity[2] * t,
        ]
    }

    pub fn speed(&self) -> f64 {
        let v = &self.velocity;
        (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
    }

    pub fn is_moving(&self) -> bool {
        self.speed() > 0.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_frames: usize,
    pub fps: f64,
    /// (H, W) in pixels.
    pub image_size: (usize, usize),
    pub camera: CameraSpec,
    pub objects: Vec<ObjectSpec>,
    /// World-z of the static background plane.
    pub background_depth: f64,
}

impl SceneSpec {
    pub fn timestamps(&self) -> Vec<f64> {
        (0..self.n_frames).map(|n| n as f64 / self.fps).collect()
    }

    pub fn duration(&self) -> f64 {
        (self.n_frames as f64 - 1.0) / self.fps
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(P4dError::InvalidScene(format!("need N >= 2 frames, got {}", self.n_frames)));
        }
        if self.fps <= 0.0 {
            return Err(P4dError::InvalidScene(format!("fps must be > 0, got {}", self.fps)));
        }
        if self.camera.focal <= 0.0 {
            return Err(P4dError::InvalidScene(format!("focal must be > 0, got {}", self.camera.focal)));
        }
        if self.camera.poses.len() != self.n_frames {
            return Err(P4dError::InvalidScene(format!(
                "camera has {} poses for {} frames",
                self.camera.poses.len(),
                self.n_frames
            )));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            for (n, t) in self.timestamps().iter().enumerate() {
                let p = obj.position_at(*t);
                let pose = &self.camera.poses[n];
                let r = &pose.rotation;
                let zc = r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + pose.translation[2];
                let front = zc - obj.size[2] / 2.0;
                if front <= 0.0 {
                    return Err(P4dError::InvalidScene(format!(
                        "object {i} leaves the positive-depth half-space at frame {n} (front depth {front:.3} m)"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Frame stack with per-frame timestamps.
#[derive(Debug, Clone)]
pub struct VideoTensor {
    /// `(N, H, W, 3)`, values in `[0, 1]`.
    pub frames: Array4<f64>,
    /// Seconds, strictly increasing.
    pub timestamps: Vec<f64>,
}

impl VideoTensor {
    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }
}

/// The four per-pixel 4D signal maps, `(N, H, W, ch)` each.
#[derive(Debug, Clone)]
pub struct SignalSet {
    /// Metric depth, meters, `ch = 1`.
    pub depth: Array4<f64>,
    /// Forward flow frame n -> n+1 in pixels, `ch = 2`; all-zero at the
    /// last frame index by convention.
    pub flow: Array4<f64>,
    /// 1 where the pixel is covered by an object moving in 3-D space,
    /// independent of camera motion; `ch = 1`.
    pub motion: Array4<f64>,
    /// Plucker rays: unit direction then moment, `ch = 6`.
    pub camray: Array4<f64>,
}

pub const MODALITY_CHANNELS: [(Modality, usize); 4] = [
    (Modality::Depth, 1),
    (Modality::Flow, 2),
    (Modality::Motion, 1),
    (Modality::Camray, 6),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Depth,
    Flow,
    Motion,
    Camray,
}

impl Modality {
    pub fn all() -> [Modality; 4] {
        [Modality::Depth, Modality::Flow, Modality::Motion, Modality::Camray]
    }

    pub fn channels(self) -> usize {
        match self {
            Modality::Depth => 1,
            Modality::Flow => 2,
            Modality::Motion => 1,
            Modality::Camray => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Depth => "depth",
            Modality::Flow => "flow",
            Modality::Motion => "motion",
            Modality::Camray => "camray",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = P4dError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(Modality::Depth),
            "flow" => Ok(Modality::Flow),
            "motion" => Ok(Modality::Motion),
            "camray" => Ok(Modality::Camray),
            other => Err(P4dError::InvalidArgument(format!("unknown modality `{other}`"))),
        }
    }
}

/// Everything the VQA templates need, derived from the spec kinematics and
/// never from pixels.
#[derive(Debug, Clone)]
pub struct SceneMeta {
    pub video_id: String,
    pub fps: f64,
    pub n_frames: usize,
    pub duration: f64,
    pub image_size: (usize, usize),
    pub camera_poses: Vec<Pose>,
    /// Signed yaw increment per frame (0 for a non-rotating camera).
    pub camera_yaw_rate: f64,
    pub objects: Vec<ObjectMeta>,
}

#[derive(Debug, Clone)]
pub struct ObjectMeta {
    /// Region id, 1-based.
    pub region_id: usize,
    pub spec: ObjectSpec,
    /// Per-frame world position of the center.
    pub positions: Vec<[f64; 3]>,
    /// Per-frame camera-frame depth of the center.
    pub depths: Vec<f64>,
    /// Per-frame projected 2-D box `(x0, y0, x1, y1)` clamped to the image.
    pub boxes: Vec<[usize; 4]>,
    /// Per-frame image-space velocity of the center, px/s, from the first
    /// two frames.
    pub image_velocity: [f64; 2],
    pub displacement: f64,
    pub path_length: f64,
    pub speed: f64,
}
