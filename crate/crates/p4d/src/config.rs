//! Experiment configuration: a flat, typed key-value file with one include
//! level and strict unknown-key rejection, resolved against code defaults.

use std::collections::BTreeSet;
use std::path::Path;

use crate::distill::{DistillConfig, TrainableMask};
use crate::evalkit::ReportFormat;
use crate::scenegen::{Modality, SamplerConfig};
use crate::student::StudentConfig;
use crate::teacher4d::{PretrainConfig, TeacherConfig};
use crate::{P4dError, Result};

/// Everything one run needs, declaratively. Derived fields (image size and
/// frame count shared by the sampler, teacher and student) are synced and
/// checked by [`ExperimentConfig::finalize`].
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub sampler: SamplerConfig,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub teacher: TeacherConfig,
    pub pretrain: PretrainConfig,
    pub student: StudentConfig,
    pub distill: DistillConfig,
    pub eval_format: ReportFormat,
    /// Monte-Carlo draws per sample for the random-baseline check.
    pub mc_draws: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            train_scenes: 24,
            val_scenes: 8,
            teacher: TeacherConfig::default(),
            pretrain: PretrainConfig::default(),
            student: StudentConfig::default(),
            distill: DistillConfig::default(),
            eval_format: ReportFormat::Table,
            mc_draws: 10_000,
        }
    }
}

fn bad<T>(key: &str, value: &str, what: &str) -> Result<T> {
    Err(P4dError::Config(format!("key `{key}`: `{value}` is not {what}")))
}

fn p_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().or_else(|_| bad(key, v, "an unsigned integer"))
}

fn p_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().or_else(|_| bad(key, v, "a number"))
}

fn p_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => bad(key, v, "`true` or `false`"),
    }
}

impl ExperimentConfig {
    /// Parse a config file and overlay it on the defaults. Exactly one
    /// include level is honored: a top-level file may pull in one or more
    /// base files via `include = path` (resolved relative to the includer),
    /// but included files must not include further.
    pub fn load(path: &Path) -> Result<Self> {
        let pairs = read_pairs(path, 0)?;
        let mut cfg = Self::default();
        for (key, value) in &pairs {
            cfg.apply(key, value)?;
        }
        cfg.finalize()?;
        Ok(cfg)
    }

    /// Apply one `key = value` override. Unknown keys are hard errors.
    pub fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data.train_scenes" => self.train_scenes = p_usize(key, v)?,
            "data.val_scenes" => self.val_scenes = p_usize(key, v)?,
            "data.image" => {
                let s = p_usize(key, v)?;
                self.sampler.image_size = (s, s);
            }
            "data.n_frames" => self.sampler.n_frames = p_usize(key, v)?,
            "data.fps" => {
                let mut fps = Vec::new();
                for part in v.split(',') {
                    fps.push(p_f64(key, part.trim())?);
                }
                self.sampler.fps_choices = fps;
            }
            "data.min_objects" => self.sampler.min_objects = p_usize(key, v)?,
            "data.max_objects" => self.sampler.max_objects = p_usize(key, v)?,
            "data.moving_fraction" => self.sampler.moving_fraction = p_f64(key, v)?,
            "data.camera_motion" => self.sampler.camera_motion = p_bool(key, v)?,
            "data.background_depth" => self.sampler.background_depth = p_f64(key, v)?,

            "teacher.steps" => self.pretrain.steps = p_usize(key, v)?,
            "teacher.base_lr" => self.pretrain.base_lr = p_f64(key, v)?,
            "teacher.latent_dim" => self.teacher.latent_dim = p_usize(key, v)?,
            "teacher.blocks" => self.teacher.blocks = p_usize(key, v)?,

            "student.tpe" => self.student.tpe_enabled = p_bool(key, v)?,
            "student.llm_blocks" => self.student.llm_blocks = p_usize(key, v)?,
            "student.llm_width" => self.student.llm_width = p_usize(key, v)?,
            "student.d_v" => self.student.d_v = p_usize(key, v)?,

            "train.steps" => self.distill.steps = p_usize(key, v)?,
            "train.base_lr" => self.distill.base_lr = p_f64(key, v)?,
            "train.alpha" => self.distill.alpha = p_f64(key, v)?,
            "train.beta" => self.distill.beta = p_f64(key, v)?,
            "train.use_ld" => self.distill.use_ld = p_bool(key, v)?,
            "train.use_ed" => self.distill.use_ed = p_bool(key, v)?,
            "train.variant" => self.distill.variant = v.parse()?,
            "train.modalities" => {
                let mut ms: Vec<Modality> = Vec::new();
                for part in v.split(',') {
                    ms.push(part.trim().parse()?);
                }
                self.distill.enabled_modalities = ms;
            }
            "train.grad_clip" => {
                self.distill.grad_clip =
                    if v == "none" { None } else { Some(p_f64(key, v)?) };
            }
            "train.tune" => {
                self.distill.trainable = match v {
                    "ep+llm" => TrainableMask { e_v: false, e_p: true, llm: true },
                    "ev" => TrainableMask { e_v: true, e_p: false, llm: false },
                    "all" => TrainableMask { e_v: true, e_p: true, llm: true },
                    _ => return bad(key, v, "one of `ep+llm`, `ev`, `all`"),
                };
            }

            "eval.format" => self.eval_format = v.parse()?,
            "eval.mc_draws" => self.mc_draws = p_usize(key, v)?,

            _ => return Err(P4dError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Sync derived fields across sections and validate the whole config.
    pub fn finalize(&mut self) -> Result<()> {
        self.sampler.validate()?;
        self.teacher.image_size = self.sampler.image_size;
        self.teacher.n_frames = self.sampler.n_frames;
        self.student.image_size = self.sampler.image_size;
        self.student.n_frames = self.sampler.n_frames;
        self.student.latent_dim = self.teacher.latent_dim;
        self.student.variant = self.distill.variant;
        if self.student.hidden_block >= self.student.llm_blocks {
            self.student.hidden_block = self.student.llm_blocks - 1;
        }
        self.distill.validate()?;
        if self.train_scenes == 0 {
            return Err(P4dError::Config("data.train_scenes must be positive".into()));
        }
        Ok(())
    }

    /// Stable flat rendering, used for the run-manifest config snapshot.
    pub fn snapshot(&self) -> Vec<(String, String)> {
        let s = &self.sampler;
        let fps = s
            .fps_choices
            .iter()
            .map(|f| f.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let modalities = self
            .distill
            .enabled_modalities
            .iter()
            .map(|m| m.name().to_string())
            .collect::<Vec<_>>()
            .join(",");
        let tune = match (self.distill.trainable.e_v, self.distill.trainable.e_p, self.distill.trainable.llm) {
            (false, true, true) => "ep+llm",
            (true, false, false) => "ev",
            (true, true, true) => "all",
            _ => "custom",
        };
        vec![
            ("data.train_scenes".into(), self.train_scenes.to_string()),
            ("data.val_scenes".into(), self.val_scenes.to_string()),
            ("data.image".into(), s.image_size.0.to_string()),
            ("data.n_frames".into(), s.n_frames.to_string()),
            ("data.fps".into(), fps),
            ("data.min_objects".into(), s.min_objects.to_string()),
            ("data.max_objects".into(), s.max_objects.to_string()),
            ("data.moving_fraction".into(), s.moving_fraction.to_string()),
            ("data.camera_motion".into(), s.camera_motion.to_string()),
            ("data.background_depth".into(), s.background_depth.to_string()),
            ("teacher.steps".into(), self.pretrain.steps.to_string()),
            ("teacher.base_lr".into(), self.pretrain.base_lr.to_string()),
            ("teacher.latent_dim".into(), self.teacher.latent_dim.to_string()),
            ("teacher.blocks".into(), self.teacher.blocks.to_string()),
            ("student.tpe".into(), self.student.tpe_enabled.to_string()),
            ("student.llm_blocks".into(), self.student.llm_blocks.to_string()),
            ("student.llm_width".into(), self.student.llm_width.to_string()),
            ("student.d_v".into(), self.student.d_v.to_string()),
            ("train.steps".into(), self.distill.steps.to_string()),
            ("train.base_lr".into(), self.distill.base_lr.to_string()),
            ("train.alpha".into(), self.distill.alpha.to_string()),
            ("train.beta".into(), self.distill.beta.to_string()),
            ("train.use_ld".into(), self.distill.use_ld.to_string()),
            ("train.use_ed".into(), self.distill.use_ed.to_string()),
            ("train.variant".into(), self.distill.variant.name().to_string()),
            ("train.modalities".into(), modalities),
            (
                "train.grad_clip".into(),
                self.distill.grad_clip.map_or_else(|| "none".into(), |g| g.to_string()),
            ),
            ("train.tune".into(), tune.to_string()),
            (
                "eval.format".into(),
                match self.eval_format {
                    ReportFormat::Csv => "csv",
                    ReportFormat::Json => "json",
                    ReportFormat::Table => "table",
                }
                .to_string(),
            ),
            ("eval.mc_draws".into(), self.mc_draws.to_string()),
        ]
    }
}

/// Read `key = value` pairs from a file. `depth` tracks include nesting;
/// only depth 0 may use `include`.
fn read_pairs(path: &Path, depth: usize) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| P4dError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(P4dError::Config(format!(
                "{} line {}: expected `key = value`, got `{line}`",
                path.display(),
                i + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        if key == "include" {
            if depth > 0 {
                return Err(P4dError::Config(format!(
                    "{} line {}: nested includes are not allowed",
                    path.display(),
                    i + 1
                )));
            }
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            // Included pairs come first so the includer's own keys win.
            let mut included = read_pairs(&base.join(value), depth + 1)?;
            included.append(&mut pairs);
            pairs = included;
            continue;
        }
        if !seen.insert(key.to_string()) {
            return Err(P4dError::Config(format!(
                "{} line {}: duplicate key `{key}`",
                path.display(),
                i + 1
            )));
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}
