//! Region-prompted VQA generation from scene metadata.
//!
//! Answers are computed from [`SceneMeta`] kinematics, never from pixels, so
//! every sample doubles as an oracle for the evaluation harness. Numeric
//! categories use multiplicative distractors at 0.25x, 0.5x, 2x and 4x of the
//! true value; categorical ones draw from a closed per-category vocabulary.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SceneMeta;
use crate::nnkit::rng::stage_rng;
use crate::{P4dError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    /// 3D video grounding (static).
    VG,
    /// Dimension measurement (static).
    DM,
    /// Spatial relationship (static).
    SR,
    /// Rotational movement (dynamic).
    R,
    /// Counting (dynamic).
    C,
    /// Translational movement (dynamic).
    T,
    /// False positive detection (dynamic).
    FP,
    /// Speed and acceleration (dynamic).
    SA,
    /// Displacement and path length (dynamic).
    DP,
    /// Duration ("how many seconds have passed"), the toy time benchmark.
    DUR,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Static,
    Dynamic,
}

impl Category {
    pub fn all() -> [Category; 10] {
        use Category::*;
        [VG, DM, SR, R, C, T, FP, SA, DP, DUR]
    }

    /// Split membership, hard-coded from the benchmark's column grouping.
    pub fn split(self) -> Split {
        use Category::*;
        match self {
            VG | DM | SR => Split::Static,
            R | C | T | FP | SA | DP | DUR => Split::Dynamic,
        }
    }

    pub fn name(self) -> &'static str {
        use Category::*;
        match self {
            VG => "VG",
            DM => "DM",
            SR => "SR",
            R => "R",
            C => "C",
            T => "T",
            FP => "FP",
            SA => "SA",
            DP => "DP",
            DUR => "DUR",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = P4dError;
    fn from_str(s: &str) -> Result<Self> {
        use Category::*;
        match s {
            "VG" => Ok(VG),
            "DM" => Ok(DM),
            "SR" => Ok(SR),
            "R" => Ok(R),
            "C" => Ok(C),
            "T" => Ok(T),
            "FP" => Ok(FP),
            "SA" => Ok(SA),
            "DP" => Ok(DP),
            "DUR" => Ok(DUR),
            other => Err(P4dError::InvalidArgument(format!("unknown category `{other}`"))),
        }
    }
}

/// First-frame region: run-length-encoded mask plus its bounding box.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RegionRef {
    /// Alternating zero/one run lengths over row-major pixel order,
    /// starting with the zero run.
    pub rle: Vec<u32>,
    #[serde(rename = "box")]
    pub bbox: [usize; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VQASample {
    pub video_id: String,
    pub timestamps: Vec<f64>,
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub regions: BTreeMap<String, RegionRef>,
    pub category: Category,
    pub split: Split,
}

impl VQASample {
    pub fn validate(&self, image_size: Option<(usize, usize)>) -> Result<()> {
        if self.options.len() < 4 || self.options.len() > 5 {
            return Err(P4dError::InvalidArgument(format!(
                "sample must have 4 or 5 options, got {}",
                self.options.len()
            )));
        }
        if self.answer_index >= self.options.len() {
            return Err(P4dError::InvalidArgument(format!(
                "answer_index {} out of {} options",
                self.answer_index,
                self.options.len()
            )));
        }
        if self.category.split() != self.split {
            return Err(P4dError::InvalidArgument(format!(
                "category {:?} is inconsistent with split {:?}",
                self.category, self.split
            )));
        }
        for token in self.question.split_whitespace().filter(|t| t.starts_with("<R")) {
            if !self.regions.contains_key(token) {
                return Err(P4dError::InvalidArgument(format!(
                    "region token {token} in the question has no mask"
                )));
            }
        }
        if let Some((h, w)) = image_size {
            for (token, region) in &self.regions {
                let total: u64 = region.rle.iter().map(|&r| r as u64).sum();
                if total != (h * w) as u64 {
                    return Err(P4dError::InvalidArgument(format!(
                        "region {token} mask covers {total} pixels, image has {}",
                        h * w
                    )));
                }
                if region.bbox[2] >= w || region.bbox[3] >= h {
                    return Err(P4dError::InvalidArgument(format!("region {token} box out of bounds")));
                }
            }
        }
        Ok(())
    }
}

/// Which categories to instantiate.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub categories: Vec<Category>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self { categories: Category::all().to_vec() }
    }
}

impl TemplateSet {
    pub fn only(categories: &[Category]) -> Self {
        Self { categories: categories.to_vec() }
    }
}

pub struct VqaOutput {
    pub samples: Vec<VQASample>,
    /// Human-readable reasons for templates that did not apply to the scene.
    pub skipped: Vec<String>,
}

/// Multiplicative distractor offsets for numeric categories.
pub const NUMERIC_MULTIPLIERS: [f64; 4] = [0.25, 0.5, 2.0, 4.0];

fn format_number(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn region_token(id: usize) -> String {
    format!("<R{id}>")
}

fn region_ref(meta: &SceneMeta, obj_index: usize) -> RegionRef {
    let (h, w) = meta.image_size;
    let b = meta.objects[obj_index].boxes[0];
    let mut mask = vec![false; h * w];
    for y in b[1]..=b[3] {
        for x in b[0]..=b[2] {
            mask[y * w + x] = true;
        }
    }
    RegionRef { rle: super::io::rle_encode(&mask), bbox: b }
}

struct Draft {
    question: String,
    /// Options in canonical order; index 0 must be the answer for numeric
    /// questions built from multipliers, otherwise `answer` names the string.
    options: Vec<String>,
    answer: String,
    regions: BTreeMap<String, RegionRef>,
    category: Category,
}

fn numeric_draft(question: String, value: f64, regions: BTreeMap<String, RegionRef>, category: Category) -> Draft {
    let mut options = vec![format_number(value)];
    for m in NUMERIC_MULTIPLIERS {
        options.push(format_number(value * m));
    }
    Draft { question, answer: options[0].clone(), options, regions, category }
}

/// Instantiate every applicable template for one scene. Option order is
/// shuffled per (seed, sample counter); skipped templates are reported, not
/// errors.
pub fn make_vqa(meta: &SceneMeta, templates: &TemplateSet, seed: u64) -> Result<VqaOutput> {
    let mut drafts: Vec<Draft> = Vec::new();
    let mut skipped: Vec<String> = Vec::new();
    let skip = |cat: Category, why: &str, skipped: &mut Vec<String>| {
        skipped.push(format!("{}: {} ({})", meta.video_id, cat.name(), why));
    };

    for &cat in &templates.categories {
        match cat {
            Category::VG => {
                if meta.objects.is_empty() {
                    skip(cat, "no objects", &mut skipped);
                    continue;
                }
                let (h, w) = meta.image_size;
                let b = meta.objects[0].boxes[0];
                let cx = (b[0] + b[2]) as f64 / 2.0;
                let cy = (b[1] + b[3]) as f64 / 2.0;
                let vert = if cy < h as f64 / 2.0 { "top" } else { "bottom" };
                let horiz = if cx < w as f64 / 2.0 { "left" } else { "right" };
                let mut regions = BTreeMap::new();
                regions.insert(region_token(1), region_ref(meta, 0));
                drafts.push(Draft {
                    question: format!("where is {} located in the first frame", region_token(1)),
                    options: ["top left", "top right", "bottom left", "bottom right"]
                        .iter()
                        .map(|s| s.to_string())
                        .collect(),
                    answer: format!("{vert} {horiz}"),
                    regions,
                    category: cat,
                });
            }
            Category::DM => {
                if meta.objects.is_empty() {
                    skip(cat, "no objects", &mut skipped);
                    continue;
                }
                let mut regions = BTreeMap::new();
                regions.insert(region_token(1), region_ref(meta, 0));
                drafts.push(numeric_draft(
                    format!("what is the width of {} in meters", region_token(1)),
                    meta.objects[0].spec.size[0],
                    regions,
                    cat,
                ));
            }
            Category::SR => {
                if meta.objects.len() < 2 {
                    skip(cat, "needs two objects", &mut skipped);
                    continue;
                }
                let d1 = meta.objects[0].depths[0];
                let d2 = meta.objects[1].depths[0];
                let answer = if (d1 - d2).abs() < 1e-9 {
                    "same distance"
                } else if d1 < d2 {
                    "yes"
                } else {
                    "no"
                };
                let mut regions = BTreeMap::new();
                regions.insert(region_token(1), region_ref(meta, 0));
                regions.insert(region_token(2), region_ref(meta, 1));
                drafts.push(Draft {
                    question: format!(
                        "is {} closer to the camera than {}",
                        region_token(1),
                        region_token(2)
                    ),
                    options: ["yes", "no", "same distance", "cannot tell"]
                        .iter()
                        .map(|s| s.to_string())
                        .collect(),
                    answer: answer.to_string(),
                    regions,
                    category: cat,
                });
            }
            Category::R => {
                let answer = if meta.camera_yaw_rate > 1e-9 {
                    "right"
                } else if meta.camera_yaw_rate < -1e-9 {
                    "left"
                } else {
                    "not rotating"
                };
                drafts.push(Draft {
                    question: "is the camera rotating left or right".to_string(),
                    options: ["left", "right", "not rotating", "cannot tell"]
                        .iter()
                        .map(|s| s.to_string())
                        .collect(),
                    answer: answer.to_string(),
                    regions: BTreeMap::new(),
                    category: cat,
                });
            }
            Category::C => {
                let count = meta.objects.iter().filter(|o| o.spec.is_moving()).count();
                let mut options: Vec<String> = vec![count.to_string()];
                let mut delta = 1i64;
                while options.len() < 4 {
                    for cand in [count as i64 + delta, count as i64 - delta] {
                        if cand >= 0 && options.len() < 4 {
                            let s = cand.to_string();
                            if !options.contains(&s) {
                                options.push(s);
                            }
                        }
                    }
                    delta += 1;
                }
                drafts.push(Draft {
                    question: "how many objects are moving in the video".to_string(),
                    answer: options[0].clone(),
                    options,
                    regions: BTreeMap::new(),
                    category: cat,
                });
            }
            Category::T => {
                match meta.objects.first() {
                    None => {
                        skip(cat, "no objects", &mut skipped);
                        continue;
                    }
                    Some(obj) => {
                        let depth_trend = obj.depths[obj.depths.len() - 1] - obj.depths[0];
                        let answer = if depth_trend < -1e-9 {
                            "yes"
                        } else if obj.spec.is_moving() {
                            "no"
                        } else {
                            "not moving"
                        };
                        let mut regions = BTreeMap::new();
                        regions.insert(region_token(obj.region_id), region_ref(meta, 0));
                        drafts.push(Draft {
                            question: format!(
                                "is {} moving closer to the camera",
                                region_token(obj.region_id)
                            ),
                            options: ["yes", "no", "not moving", "cannot tell"]
                                .iter()
                                .map(|s| s.to_string())
                                .collect(),
                            answer: answer.to_string(),
                            regions,
                            category: cat,
                        });
                    }
                }
            }
            Category::FP => {
                match meta.objects.first() {
                    None => {
                        skip(cat, "no objects", &mut skipped);
                        continue;
                    }
                    Some(obj) => {
                        let answer = if obj.spec.is_moving() { "yes" } else { "no" };
                        let mut regions = BTreeMap::new();
                        regions.insert(region_token(obj.region_id), region_ref(meta, 0));
                        drafts.push(Draft {
                            question: format!("is {} moving in 3d space", region_token(obj.region_id)),
                            options: ["yes", "no", "only the camera moves", "cannot tell"]
                                .iter()
                                .map(|s| s.to_string())
                                .collect(),
                            answer: answer.to_string(),
                            regions,
                            category: cat,
                        });
                    }
                }
            }
            Category::SA => {
                match meta.objects.iter().enumerate().find(|(_, o)| o.spec.is_moving()) {
                    None => {
                        skip(cat, "no moving object for a speed question", &mut skipped);
                        continue;
                    }
                    Some((idx, obj)) => {
                        let mut regions = BTreeMap::new();
                        regions.insert(region_token(obj.region_id), region_ref(meta, idx));
                        drafts.push(numeric_draft(
                            format!(
                                "what is the average speed of {} in meters per second",
                                region_token(obj.region_id)
                            ),
                            obj.speed,
                            regions,
                            cat,
                        ));
                    }
                }
            }
            Category::DP => {
                match meta.objects.iter().enumerate().find(|(_, o)| o.spec.is_moving()) {
                    None => {
                        skip(cat, "no moving object for a displacement question", &mut skipped);
                        continue;
                    }
                    Some((idx, obj)) => {
                        let mut regions = BTreeMap::new();
                        regions.insert(region_token(obj.region_id), region_ref(meta, idx));
                        drafts.push(numeric_draft(
                            format!(
                                "what is the total displacement of {} in meters",
                                region_token(obj.region_id)
                            ),
                            obj.displacement,
                            regions,
                            cat,
                        ));
                    }
                }
            }
            Category::DUR => {
                drafts.push(numeric_draft(
                    "how many seconds have passed in the input video".to_string(),
                    meta.duration,
                    BTreeMap::new(),
                    cat,
                ));
            }
        }
    }

    let timestamps: Vec<f64> = (0..meta.n_frames).map(|n| n as f64 / meta.fps).collect();
    let mut samples = Vec::with_capacity(drafts.len());
    for (counter, draft) in drafts.into_iter().enumerate() {
        let mut rng = stage_rng(seed, "vqa-shuffle", counter as u64);
        let mut options = draft.options;
        options.shuffle(&mut rng);
        let answer_index = options
            .iter()
            .position(|o| *o == draft.answer)
            .ok_or_else(|| P4dError::InvalidArgument("answer missing from options".into()))?;
        let sample = VQASample {
            video_id: meta.video_id.clone(),
            timestamps: timestamps.clone(),
            question: draft.question,
            options,
            answer_index,
            regions: draft.regions,
            category: draft.category,
            split: draft.category.split(),
        };
        sample.validate(Some(meta.image_size))?;
        samples.push(sample);
    }
    Ok(VqaOutput { samples, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, CameraSpec, ObjectSpec, Pose, SceneSpec};

    fn scene_with(objects: Vec<ObjectSpec>, n_frames: usize, fps: f64) -> SceneMeta {
        let spec = SceneSpec {
            seed: 9,
            n_frames,
            fps,
            image_size: (32, 32),
            camera: CameraSpec {
                focal: 48.0,
                principal_point: [16.0, 16.0],
                poses: vec![Pose::identity(); n_frames],
            },
            objects,
            background_depth: 16.0,
        };
        generate_scene(&spec).unwrap().2
    }

    fn obj(position: [f64; 3], velocity: [f64; 3]) -> ObjectSpec {
        ObjectSpec { size: [1.0, 1.0, 1.0], position, velocity, color: [0.8, 0.2, 0.2] }
    }

    #[test]
    fn duration_question_matches_clip_length() {
        // 16 frames at 8 fps -> 1.875... no: (16-1)/8; use the tagged example
        let meta = scene_with(vec![], 16, 8.0);
        let out = make_vqa(&meta, &TemplateSet::only(&[Category::DUR]), 0).unwrap();
        let s = &out.samples[0];
        assert!((meta.duration - 1.875).abs() < 1e-12);
        assert_eq!(s.options[s.answer_index], "1.875");
    }

    #[test]
    fn duration_distractors_use_the_multiplier_set() {
        // contrive N, fps so the duration is exactly 2 s: 17 frames at 8 fps
        let meta = scene_with(vec![], 17, 8.0);
        let out = make_vqa(&meta, &TemplateSet::only(&[Category::DUR]), 0).unwrap();
        let s = &out.samples[0];
        let mut opts = s.options.clone();
        opts.sort_by(|a, b| a.parse::<f64>().unwrap().partial_cmp(&b.parse::<f64>().unwrap()).unwrap());
        assert_eq!(opts, vec!["0.5", "1", "2", "4", "8"]);
        assert_eq!(s.options[s.answer_index], "2");
    }

    #[test]
    fn moving_closer_object_answers_yes() {
        let meta = scene_with(vec![obj([0.0, 0.0, 6.0], [0.0, 0.0, -0.5])], 8, 4.0);
        let out = make_vqa(&meta, &TemplateSet::only(&[Category::T]), 1).unwrap();
        let s = &out.samples[0];
        assert_eq!(s.options[s.answer_index], "yes");
        assert!(s.regions.contains_key("<R1>"));
    }

    #[test]
    fn average_speed_from_meta_arithmetic() {
        // displacement 2 m over 4 s -> 0.5 m/s
        let meta = scene_with(vec![obj([-1.0, 0.0, 6.0], [0.5, 0.0, 0.0])], 17, 4.0);
        assert!((meta.duration - 4.0).abs() < 1e-12);
        assert!((meta.objects[0].displacement - 2.0).abs() < 1e-9);
        let out = make_vqa(&meta, &TemplateSet::only(&[Category::SA])
, 1).unwrap();
        let s = &out.samples[0];
        assert_eq!(s.options[s.answer_index], "0.5");
    }

    #[test]
    fn speed_question_skipped_without_moving_objects() {
        let meta = scene_with(vec![obj([0.0, 0.0, 5.0], [0.0, 0.0, 0.0])], 8, 4.0);
        let out = make_vqa(&meta, &TemplateSet::only(&[Category::SA])
, 1).unwrap();
        assert!(out.samples.is_empty());
        assert_eq!(out.skipped.len(), 1);
    }

    #[test]
    fn samples_are_deterministic_per_seed() {
        let meta = scene_with(vec![obj([0.5, 0.5, 5.0], [0.2, 0.0, 0.0])], 8, 4.0);
        let a = make_vqa(&meta, &TemplateSet::default(), 7).unwrap();
        let b = make_vqa(&meta, &TemplateSet::default(), 7).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn all_samples_validate() {
        let meta = scene_with(
            vec![obj([0.5, 0.5, 5.0], [0.2, 0.0, 0.0]), obj([-1.0, -0.5, 7.0], [0.0, 0.0, 0.0])],
            8,
            4.0,
        );
        let out = make_vqa(&meta, &TemplateSet::default(), 3).unwrap();
        assert!(out.samples.len() >= 8);
        for s in &out.samples {
            s.validate(Some((32, 32))).unwrap();
        }
    }
}
