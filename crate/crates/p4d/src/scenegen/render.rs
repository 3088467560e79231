//! Exact ray-cast rendering and the analytic signal maps.

use ndarray::{Array3, Array4};

use super::{ObjectMeta, Pose, SceneMeta, SceneSpec, SignalSet, VideoTensor};
use crate::{P4dError, Result};

pub(crate) fn mat_vec(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

pub(crate) fn mat_t_vec(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
        r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
        r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
    ]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Project a world point; returns `(u, v, depth)` with depth the camera-frame z.
pub fn project(pose: &Pose, focal: f64, pp: [f64; 2], point: [f64; 3]) -> Option<(f64, f64, f64)> {
    let q = {
        let r = mat_vec(&pose.rotation, point);
        [r[0] + pose.translation[0], r[1] + pose.translation[1], r[2] + pose.translation[2]]
    };
    if q[2] <= 1e-9 {
        return None;
    }
    Some((focal * q[0] / q[2] + pp[0], focal * q[1] / q[2] + pp[1], q[2]))
}

/// World-space ray through integer pixel `(u, v)`: camera center and unit direction.
pub fn pixel_ray(pose: &Pose, focal: f64, pp: [f64; 2], u: usize, v: usize) -> ([f64; 3], [f64; 3]) {
    let cam_dir = [(u as f64 - pp[0]) / focal, (v as f64 - pp[1]) / focal, 1.0];
    let mut d = mat_t_vec(&pose.rotation, cam_dir);
    let n = norm(d);
    d = [d[0] / n, d[1] / n, d[2] / n];
    (pose.center(), d)
}

fn rotation_is_orthonormal(r: &[[f64; 3]; 3]) -> bool {
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if (dot - expect).abs() > 1e-9 {
                return false;
            }
        }
    }
    true
}

/// Per-pixel Plucker ray map `(H, W, 6)`: unit direction, then the moment
/// `o x d` with `o` the camera center in world coordinates.
pub fn plucker_rays(focal: f64, pp: [f64; 2], pose: &Pose, h: usize, w: usize) -> Result<Array3<f64>> {
    if focal <= 0.0 || !focal.is_finite() {
        return Err(P4dError::InvalidArgument(format!("singular intrinsics: focal {focal}")));
    }
    if !rotation_is_orthonormal(&pose.rotation) {
        return Err(P4dError::InvalidArgument("rotation is not orthonormal".into()));
    }
    let mut out = Array3::<f64>::zeros((h, w, 6));
    for v in 0..h {
        for u in 0..w {
            let (o, d) = pixel_ray(pose, focal, pp, u, v);
            let m = cross(o, d);
            for k in 0..3 {
                out[[v, u, k]] = d[k];
                out[[v, u, 3 + k]] = m[k];
            }
        }
    }
    Ok(out)
}

/// What a pixel's ray hits at one instant.
struct Hit {
    /// Index into the object list, or `None` for the background plane.
    object: Option<usize>,
    /// World coordinates of the visible surface point.
    point: [f64; 3],
    /// Camera-frame z.
    depth: f64,
}

fn cast(spec: &SceneSpec, pose: &Pose, t: f64, u: usize, v: usize) -> Option<Hit> {
    let (o, d) = pixel_ray(pose, spec.camera.focal, spec.camera.principal_point, u, v);
    let mut best: Option<Hit> = None;
    for (i, obj) in spec.objects.iter().enumerate() {
        let pos = obj.position_at(t);
        let z_face = pos[2] - obj.size[2] / 2.0;
        if d[2].abs() < 1e-12 {
            continue;
        }
        let t_ray = (z_face - o[2]) / d[2];
        if t_ray <= 0.0 {
            continue;
        }
        let p = [o[0] + t_ray * d[0], o[1] + t_ray * d[1], o[2] + t_ray * d[2]];
        if (p[0] - pos[0]).abs() > obj.size[0] / 2.0 || (p[1] - pos[1]).abs() > obj.size[1] / 2.0 {
            continue;
        }
        let q = mat_vec(&pose.rotation, p);
        let depth = q[2] + pose.translation[2];
        if depth <= 0.0 {
            continue;
        }
        if best.as_ref().map_or(true, |b| depth < b.depth) {
            best = Some(Hit { object: Some(i), point: p, depth });
        }
    }
    if best.is_some() {
        return best;
    }
    // background plane
    if d[2].abs() < 1e-12 {
        return None;
    }
    let t_ray = (spec.background_depth - o[2]) / d[2];
    if t_ray <= 0.0 {
        return None;
    }
    let p = [o[0] + t_ray * d[0], o[1] + t_ray * d[1], o[2] + t_ray * d[2]];
    let q = mat_vec(&pose.rotation, p);
    let depth = q[2] + pose.translation[2];
    if depth <= 0.0 {
        return None;
    }
    Some(Hit { object: None, point: p, depth })
}

fn checker_color(x: f64, y: f64) -> f64 {
    let parity = (x.floor() as i64 + y.floor() as i64).rem_euclid(2);
    if parity == 0 {
        0.35
    } else {
        0.65
    }
}

/// Render a scene and compute all four ground-truth signal maps analytically.
pub fn generate_scene(spec: &SceneSpec) -> Result<(VideoTensor, SignalSet, SceneMeta)> {
    spec.validate()?;
    let (h, w) = spec.image_size;
    let n = spec.n_frames;
    let ts = spec.timestamps();
    let focal = spec.camera.focal;
    let pp = spec.camera.principal_point;

    let mut frames = Array4::<f64>::zeros((n, h, w, 3));
    let mut depth = Array4::<f64>::zeros((n, h, w, 1));
    let mut flow = Array4::<f64>::zeros((n, h, w, 2));
    let mut motion = Array4::<f64>::zeros((n, h, w, 1));
    let mut camray = Array4::<f64>::zeros((n, h, w, 6));

    for fi in 0..n {
        let pose = &spec.camera.poses[fi];
        let rays = plucker_rays(focal, pp, pose, h, w)?;
        camray.index_axis_mut(ndarray::Axis(0), fi).assign(&rays);
        let next = if fi + 1 < n { Some((&spec.camera.poses[fi + 1], ts[fi + 1] - ts[fi])) } else { None };
        for v in 0..h {
            for u in 0..w {
                let hit = match cast(spec, pose, ts[fi], u, v) {
                    Some(hit) => hit,
                    None => {
                        depth[[fi, v, u, 0]] = spec.background_depth;
                        continue;
                    }
                };
                depth[[fi, v, u, 0]] = hit.depth;
                match hit.object {
                    Some(i) => {
                        let obj = &spec.objects[i];
                        for k in 0..3 {
                            frames[[fi, v, u, k]] = obj.color[k];
                        }
                        if obj.is_moving() {
                            motion[[fi, v, u, 0]] = 1.0;
                        }
                    }
                    None => {
                        let c = checker_color(hit.point[0], hit.point[1]);
                        for k in 0..3 {
                            frames[[fi, v, u, k]] = c;
                        }
                    }
                }
                if let Some((next_pose, dt)) = next {
                    let point_moves = matches!(hit.object, Some(i) if spec.objects[i].is_moving());
                    if !point_moves && next_pose == pose {
                        // nothing moved: flow is zero by construction, so skip
                        // the project/unproject roundtrip and its fp residue
                        continue;
                    }
                    let moved = match hit.object {
                        Some(i) => {
                            let vel = spec.objects[i].velocity;
                            [
                                hit.point[0] + vel[0] * dt,
                                hit.point[1] + vel[1] * dt,
                                hit.point[2] + vel[2] * dt,
                            ]
                        }
                        None => hit.point,
                    };
                    if let Some((u2, v2, _)) = project(next_pose, focal, pp, moved) {
                        flow[[fi, v, u, 0]] = u2 - u as f64;
                        flow[[fi, v, u, 1]] = v2 - v as f64;
                    }
                }
            }
        }
    }

    let meta = build_meta(spec)?;
    let video = VideoTensor { frames, timestamps: ts };
    let signals = SignalSet { depth, flow, motion, camray };
    Ok((video, signals, meta))
}

fn yaw_of(pose: &Pose) -> f64 {
    pose.rotation[2][0].atan2(pose.rotation[0][0])
}

fn build_meta(spec: &SceneSpec) -> Result<SceneMeta> {
    let ts = spec.timestamps();
    let (h, w) = spec.image_size;
    let focal = spec.camera.focal;
    let pp = spec.camera.principal_point;
    let mut objects = Vec::new();
    for (i, obj) in spec.objects.iter().enumerate() {
        let mut positions = Vec::new();
        let mut depths = Vec::new();
        let mut boxes = Vec::new();
        let mut centers_px: Vec<(f64, f64)> = Vec::new();
        for (fi, &t) in ts.iter().enumerate() {
            let pos = obj.position_at(t);
            positions.push(pos);
            let pose = &spec.camera.poses[fi];
            let q = mat_vec(&pose.rotation, pos);
            depths.push(q[2] + pose.translation[2]);
            let z_face = pos[2] - obj.size[2] / 2.0;
            let corners = [
                [pos[0] - obj.size[0] / 2.0, pos[1] - obj.size[1] / 2.0, z_face],
                [pos[0] + obj.size[0] / 2.0, pos[1] - obj.size[1] / 2.0, z_face],
                [pos[0] - obj.size[0] / 2.0, pos[1] + obj.size[1] / 2.0, z_face],
                [pos[0] + obj.size[0] / 2.0, pos[1] + obj.size[1] / 2.0, z_face],
            ];
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for c in corners {
                if let Some((u, v, _)) = project(pose, focal, pp, c) {
                    x0 = x0.min(u);
                    y0 = y0.min(v);
                    x1 = x1.max(u);
                    y1 = y1.max(v);
                }
            }
            if x0 > x1 {
                return Err(P4dError::InvalidScene(format!("object {i} projects behind the camera")));
            }
            let clamp = |v: f64, hi: usize| (v.round().max(0.0) as usize).min(hi - 1);
            boxes.push([clamp(x0, w), clamp(y0, h), clamp(x1, w), clamp(y1, h)]);
            if let Some((u, v, _)) = project(pose, focal, pp, pos) {
                centers_px.push((u, v));
            }
        }
        let image_velocity = if centers_px.len() >= 2 {
            let dt = ts[1] - ts[0];
            [
                (centers_px[1].0 - centers_px[0].0) / dt,
                (centers_px[1].1 - centers_px[0].1) / dt,
            ]
        } else {
            [0.0, 0.0]
        };
        let first = positions[0];
        let last = positions[positions.len() - 1];
        let displacement = norm([last[0] - first[0], last[1] - first[1], last[2] - first[2]]);
        // constant velocity: path length equals displacement
        objects.push(ObjectMeta {
            region_id: i + 1,
            spec: obj.clone(),
            positions,
            depths,
            boxes,
            image_velocity,
            displacement,
            path_length: obj.speed() * spec.duration(),
            speed: obj.speed(),
        });
    }
    let yaw_rate = if spec.camera.poses.len() >= 2 {
        yaw_of(&spec.camera.poses[1]) - yaw_of(&spec.camera.poses[0])
    } else {
        0.0
    };
    Ok(SceneMeta {
        video_id: format!("scene-{:08x}", spec.seed),
        fps: spec.fps,
        n_frames: spec.n_frames,
        duration: spec.duration(),
        image_size: spec.image_size,
        camera_poses: spec.camera.poses.clone(),
        camera_yaw_rate: yaw_rate,
        objects,
    })
}
