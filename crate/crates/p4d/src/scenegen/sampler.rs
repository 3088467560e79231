//! Random scene sampling: draws varied but always-valid scene specs from a
//! seeded stream, so whole datasets are reproducible from one master seed.

use rand::Rng;

use crate::nnkit::rng::stage_rng;
use crate::{P4dError, Result};

use super::{CameraSpec, ObjectSpec, Pose, SceneSpec};

/// Knobs for the random scene distribution. All sampled scenes pass
/// `SceneSpec::validate` by construction.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub image_size: (usize, usize),
    pub n_frames: usize,
    /// Frame rates drawn uniformly per scene; more than one entry gives a
    /// mixed-fps dataset (distinct clip durations at a fixed frame count).
    pub fps_choices: Vec<f64>,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Probability that a sampled object moves.
    pub moving_fraction: f64,
    /// Allow rotating / translating cameras (otherwise all poses identity).
    pub camera_motion: bool,
    pub background_depth: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            image_size: (32, 32),
            n_frames: 8,
            fps_choices: vec![2.0, 4.0, 8.0],
            min_objects: 1,
            max_objects: 2,
            moving_fraction: 0.7,
            camera_motion: true,
            background_depth: 9.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fps_choices.is_empty() || self.fps_choices.iter().any(|&f| f <= 0.0) {
            return Err(P4dError::InvalidArgument("fps choices must be positive".into()));
        }
        if self.min_objects > self.max_objects {
            return Err(P4dError::InvalidArgument("min_objects exceeds max_objects".into()));
        }
        if self.n_frames < 2 {
            return Err(P4dError::InvalidArgument("sampler needs n_frames >= 2".into()));
        }
        Ok(())
    }
}

/// Draw scene `index` of the stream for `master_seed`. The spec's own seed
/// is derived from both, so regenerating any single scene needs no state.
pub fn sample_scene(master_seed: u64, index: u64, cfg: &SamplerConfig) -> Result<SceneSpec> {
    cfg.validate()?;
    let mut rng = stage_rng(master_seed, "scene-sample", index);
    let (h, w) = cfg.image_size;
    let fps = cfg.fps_choices[rng.gen_range(0..cfg.fps_choices.len())];
    let duration = (cfg.n_frames as f64 - 1.0) / fps;

    let focal = w as f64;
    let pp = [w as f64 / 2.0, h as f64 / 2.0];

    // Camera: static, yawing, or translating sideways; speeds kept small so
    // the checkerboard plane stays in front of the camera at all times.
    let yaw_rate = if cfg.camera_motion && rng.gen_bool(0.5) {
        let mag = rng.gen_range(0.01..0.04);
        if rng.gen_bool(0.5) { mag } else { -mag }
    } else {
        0.0
    };
    let cam_velocity = if cfg.camera_motion && yaw_rate == 0.0 && rng.gen_bool(0.5) {
        [rng.gen_range(-0.2..0.2), rng.gen_range(-0.1..0.1), 0.0]
    } else {
        [0.0, 0.0, 0.0]
    };
    let poses: Vec<Pose> = (0..cfg.n_frames)
        .map(|n| {
            let t = n as f64 / fps;
            Pose::from_yaw_and_center(
                yaw_rate * n as f64,
                [cam_velocity[0] * t, cam_velocity[1] * t, cam_velocity[2] * t],
            )
        })
        .collect();

    let n_objects = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut objects = Vec::with_capacity(n_objects);
    for i in 0..n_objects {
        // Lateral offset keeps each object on its own side of the image so
        // first-frame masks do not fully occlude each other.
        let lane = if n_objects == 1 { 0.0 } else { (i as f64 - 0.5) * 2.4 };
        let z = rng.gen_range(3.5..6.0);
        let size = rng.gen_range(0.8..1.8);
        let moving = rng.gen_bool(cfg.moving_fraction.clamp(0.0, 1.0));
        let velocity = if moving {
            // Bounded so depth stays positive and the box stays near frame
            // over the longest possible clip.
            let cap = 0.9 / duration.max(1.0);
            let v = [
                rng.gen_range(-cap..cap),
                rng.gen_range(-cap..cap),
                rng.gen_range(-cap..cap),
            ];
            // Degenerate all-zero draws would silently change the motion
            // label; nudge one axis instead.
            if v[0] == 0.0 && v[1] == 0.0 && v[2] == 0.0 {
                [cap / 2.0, 0.0, 0.0]
            } else {
                v
            }
        } else {
            [0.0, 0.0, 0.0]
        };
        objects.push(ObjectSpec {
            size: [size, size, size],
            position: [lane + rng.gen_range(-0.4..0.4), rng.gen_range(-0.6..0.6), z],
            velocity,
            color: [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)],
        });
    }

    let spec = SceneSpec {
        seed: master_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index),
        n_frames: cfg.n_frames,
        fps,
        image_size: cfg.image_size,
        camera: CameraSpec { focal, principal_point: pp, poses },
        objects,
        background_depth: cfg.background_depth,
    };
    spec.validate()?;
    Ok(spec)
}
