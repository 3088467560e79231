//! End-to-end distillation trainer: co-computes the supervised answer loss
//! and both distillation losses on each batch, updates only the parameter
//! groups the mask allows, and logs a per-step loss decomposition.

use rand::seq::SliceRandom;
use serde::Serialize;

use super::{
    explicit_distill_loss, latent_distill_loss, rearrange_hidden, student_explicit, total_loss,
    DistillConfig, PerceptionDecoder, D4DP_PREFIX,
};
use crate::distill::TeacherCache;
use crate::nnkit::optim::{OptConfig, OptState};
use crate::nnkit::params::{Binding, ParamStore};
use crate::nnkit::rng::stage_rng;
use crate::nnkit::Tape;
use crate::scenegen::VQASample;
use crate::scenegen::VideoTensor;
use crate::student::{StudentModel, Variant};
use crate::teacher4d::{TeacherLatent, TeacherModel};
use crate::trace::InvocationCounts;
use crate::{P4dError, Result};

#[derive(Debug, Clone)]
pub struct TrainSample {
    pub video: VideoTensor,
    pub sample: VQASample,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepLosses {
    pub step: usize,
    pub sft: f64,
    pub ld: f64,
    pub ed: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub steps: Vec<StepLosses>,
    pub seed: u64,
    pub teacher_hash: Option<String>,
    /// Hash over inference parameters only (`student.` prefix).
    pub student_hash: String,
    pub config: DistillConfig,
}

impl TrainReport {
    /// Recompute-check the logged decomposition.
    pub fn verify_decomposition(&self, tol: f64) -> Result<()> {
        for s in &self.steps {
            let expect = s.sft + self.config.alpha * s.ld + self.config.beta * s.ed;
            let scale = expect.abs().max(1.0);
            if (s.total - expect).abs() > tol * scale {
                return Err(P4dError::InvalidArgument(format!(
                    "step {}: logged total {} != {} (sft + a*ld + b*ed)",
                    s.step, s.total, expect
                )));
            }
        }
        Ok(())
    }
}

/// Copy of every parameter whose name starts with `prefix`.
pub fn subset_store(store: &ParamStore, prefix: &str) -> ParamStore {
    let mut out = ParamStore::new();
    for p in store.iter() {
        if p.name.starts_with(prefix) {
            out.add(&p.name, p.value.clone()).unwrap();
        }
    }
    out
}

/// Hash over the student's inference parameters only.
pub fn student_hash(student: &StudentModel) -> String {
    subset_store(&student.params, "student.").content_hash()
}

fn latent_view(teacher: &TeacherModel, tokens: &ndarray::Array2<f64>, video_id: &str, hash: &str) -> TeacherLatent {
    let (h, w) = teacher.config.latent_grid();
    let nt = teacher.config.latent_frames();
    let values = tokens
        .clone()
        .into_shape_with_order((nt, h, w, teacher.config.latent_dim))
        .unwrap();
    TeacherLatent {
        values,
        video_id: video_id.to_string(),
        teacher_hash: hash.to_string(),
    }
}

fn apply_trainable_mask(student: &mut StudentModel, cfg: &DistillConfig) {
    let m = cfg.trainable;
    student.params.set_trainable_prefix("student.ev.", m.e_v);
    student.params.set_trainable_prefix("student.ep.", m.e_p);
    student.params.set_trainable_prefix("student.var.", m.e_p);
    student.params.set_trainable_prefix("student.llm.", m.llm);
    student.params.set_trainable_prefix("student.head.", m.llm);
    student.params.set_trainable_prefix(&format!("{D4DP_PREFIX}."), true);
}

/// Run the distillation recipe. Deterministic given the seed; restores the
/// last finite parameter state and errors on a non-finite loss.
pub fn train(
    cfg: &DistillConfig,
    data: &[TrainSample],
    teacher: Option<&TeacherModel>,
    student: &mut StudentModel,
    cache: Option<&TeacherCache>,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() && cfg.steps > 0 {
        return Err(P4dError::InvalidArgument("training needs at least one sample".into()));
    }
    if student.config.variant != cfg.variant {
        return Err(P4dError::InvalidArgument(format!(
            "student built for variant {} but config says {}",
            student.config.variant.name(),
            cfg.variant.name()
        )));
    }
    let teacher_hash_before = match teacher {
        Some(t) => {
            if cfg.needs_teacher() && !t.is_frozen() {
                return Err(P4dError::FrozenViolation(
                    "distillation requires a frozen teacher".into(),
                ));
            }
            Some(t.content_hash())
        }
        None => {
            if cfg.needs_teacher() {
                return Err(P4dError::MissingPrerequisite(
                    "this recipe needs a teacher model".into(),
                ));
            }
            None
        }
    };
    if cfg.needs_teacher() && cache.is_none() {
        return Err(P4dError::MissingPrerequisite("this recipe needs a teacher cache".into()));
    }

    // the perception decoder exists only when a distillation loss asks for it
    let d4dp = if cfg.needs_d4dp() {
        let t = teacher.unwrap();
        let dec = PerceptionDecoder::new(
            student.config.llm_width,
            cfg.d4dp_hidden,
            t.config.latent_dim,
        );
        if student.params.get(&format!("{D4DP_PREFIX}.w1")).is_none() {
            let mut rng = stage_rng(seed, "d4dp-init", 0);
            dec.init_params(&mut student.params, &mut rng)?;
        }
        Some(dec)
    } else {
        None
    };
    apply_trainable_mask(student, cfg);

    let mut opt = OptState::new(OptConfig {
        base_lr: cfg.base_lr,
        warmup_ratio: cfg.warmup_ratio,
        grad_clip: cfg.grad_clip,
        ..OptConfig::new(cfg.base_lr, cfg.steps.max(1))
    });

    let mut order: Vec<usize> = Vec::new();
    let mut steps_log = Vec::with_capacity(cfg.steps);
    let mut last_good = student.params.clone();

    for step in 0..cfg.steps {
        if step % data.len() == 0 {
            order = (0..data.len()).collect();
            let mut rng = stage_rng(seed, "train-shuffle", (step / data.len()) as u64);
            order.shuffle(&mut rng);
        }
        let item = &data[order[step % data.len()]];
        let artifacts = if cfg.needs_teacher() {
            Some(cache.unwrap().artifacts(
                teacher.unwrap(),
                &item.video,
                &item.sample.video_id,
            )?)
        } else {
            None
        };
        let latent_for_variant = match (cfg.variant, &artifacts) {
            (Variant::Plain, _) => None,
            (_, Some(a)) => Some(latent_view(
                teacher.unwrap(),
                &a.latent_tokens,
                &item.sample.video_id,
                &a.teacher_hash,
            )),
            (_, None) => unreachable!("needs_teacher covers variants"),
        };

        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let answer = item.sample.options[item.sample.answer_index].clone();
        let seq = student.build_sequence(&item.sample.question, Some(&answer))?;
        let (logits, _, hidden_vars) = student.llm_forward(
            &mut tape,
            Some(&mut binding),
            &item.video,
            &seq,
            latent_for_variant.as_ref(),
        )?;
        let sft = student.sft_loss(&mut tape, logits, &seq)?;

        let (mut ld, mut ed) = (None, None);
        if let Some(dec) = &d4dp {
            let t = teacher.unwrap();
            let a = artifacts.as_ref().unwrap();
            let (lh, lw) = t.config.latent_grid();
            let nt = t.config.latent_frames();
            let rearranged = rearrange_hidden(
                &mut tape,
                &hidden_vars,
                student.config.token_grid(),
                (nt, lh, lw),
            )?;
            let student_latent =
                dec.forward(&mut tape, &mut Some(&mut binding), &student.params, rearranged)?;
            if cfg.use_ld {
                let target = tape.leaf(a.latent_tokens.clone().into_dyn());
                ld = Some(latent_distill_loss(
                    &mut tape,
                    target,
                    student_latent,
                    nt,
                    cfg.delta,
                )?);
            }
            if cfg.use_ed {
                let mut pairs = Vec::new();
                for &m in &cfg.enabled_modalities {
                    let pred = student_explicit(&mut tape, t, student_latent, m)?;
                    let target = tape.leaf(a.map(m).clone().into_dyn());
                    pairs.push((m, target, pred));
                }
                ed = Some(explicit_distill_loss(
                    &mut tape,
                    &pairs,
                    t.config.n_frames,
                    cfg,
                )?);
            }
        }

        let total = match total_loss(&mut tape, sft, ld, ed, cfg.alpha, cfg.beta) {
            Ok(t) => t,
            Err(e) => {
                student.params = last_good;
                return Err(P4dError::NonFinite(format!(
                    "training diverged at step {step} ({e}); last good state restored"
                )));
            }
        };
        let losses = StepLosses {
            step,
            sft: tape.scalar_value(sft),
            ld: ld.map(|v| tape.scalar_value(v)).unwrap_or(0.0),
            ed: ed.map(|v| tape.scalar_value(v)).unwrap_or(0.0),
            total: tape.scalar_value(total),
            lr: opt.current_lr()?,
        };
        last_good = student.params.clone();
        let grads = tape.backward(total)?;
        opt.apply(&mut student.params, &binding, &grads)?;
        steps_log.push(losses);
    }

    if let (Some(before), Some(t)) = (&teacher_hash_before, teacher) {
        if t.content_hash() != *before {
            return Err(P4dError::FrozenViolation(
                "teacher parameters changed during training".into(),
            ));
        }
    }

    Ok(TrainReport {
        steps: steps_log,
        seed,
        teacher_hash: teacher_hash_before,
        student_hash: student_hash(student),
        config: cfg.clone(),
    })
}

/// Named recipes mirroring the ablation table rows.
pub fn ablation_names() -> Vec<&'static str> {
    vec![
        "Zero-shot", "4D-SFT", "4D-Concat", "4D-PE", "LD-Only", "ED-Only", "LD+ED", "LD+D",
        "LD+D+F", "LD+D+F+M", "Tune-V", "Tune-P+LLM",
    ]
}

pub fn ablation_config(name: &str, base: &DistillConfig) -> Result<DistillConfig> {
    use crate::scenegen::Modality::*;
    let mut cfg = base.clone();
    cfg.variant = Variant::Plain;
    match name {
        "Zero-shot" => {
            cfg.steps = 0;
            cfg.use_ld = false;
            cfg.use_ed = false;
        }
        "4D-SFT" => {
            cfg.use_ld = false;
            cfg.use_ed = false;
        }
        // supervision as in 4D-SFT; the caller additionally disables the
        // student's timestamp encoding
        "TPE-off" => {
            cfg.use_ld = false;
            cfg.use_ed = false;
        }
        "4D-Concat" => {
            cfg.use_ld = false;
            cfg.use_ed = false;
            cfg.variant = Variant::Concat4d;
        }
        "4D-PE" => {
            cfg.use_ld = false;
            cfg.use_ed = false;
            cfg.variant = Variant::Pe4d;
        }
        "LD-Only" => {
            cfg.use_ld = true;
            cfg.use_ed = false;
        }
        "ED-Only" => {
            cfg.use_ld = false;
            cfg.use_ed = true;
        }
        "LD+ED" => {
            cfg.use_ld = true;
            cfg.use_ed = true;
        }
        "LD+D" => {
            cfg.use_ld = true;
            cfg.use_ed = true;
            cfg.enabled_modalities = vec![Depth];
        }
        "LD+D+F" => {
            cfg.use_ld = true;
            cfg.use_ed = true;
            cfg.enabled_modalities = vec![Depth, Flow];
        }
        "LD+D+F+M" => {
            cfg.use_ld = true;
            cfg.use_ed = true;
            cfg.enabled_modalities = vec![Depth, Flow, Motion];
        }
        "Tune-V" => {
            cfg.trainable = super::TrainableMask { e_v: true, e_p: false, llm: false };
        }
        "Tune-P+LLM" => {
            cfg.trainable = super::TrainableMask::default();
        }
        other => {
            return Err(P4dError::InvalidArgument(format!("unknown ablation row `{other}`")))
        }
    }
    Ok(cfg)
}

/// Answer one sample while counting training-only module invocations. For
/// the plain variant every count must be zero.
pub fn inference_trace(
    student: &StudentModel,
    teacher: Option<&TeacherModel>,
    video: &VideoTensor,
    sample: &VQASample,
) -> Result<(InvocationCounts, usize)> {
    crate::trace::reset();
    let latent = match student.config.variant {
        Variant::Plain => None,
        _ => {
            let t = teacher.ok_or_else(|| {
                P4dError::MissingPrerequisite("variant inference needs the teacher".into())
            })?;
            Some(t.teacher_encode(video, &sample.video_id)?)
        }
    };
    let answer = student.answer_mcq(video, sample, latent.as_ref())?;
    Ok((crate::trace::snapshot(), answer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, make_vqa, CameraSpec, ObjectSpec, Pose, SceneSpec, TemplateSet};
    use crate::student::StudentConfig;
    use crate::teacher4d::TeacherConfig;

    fn scene(seed: u64) -> (VideoTensor, Vec<VQASample>) {
        let spec = SceneSpec {
            seed,
            n_frames: 8,
            fps: 4.0,
            image_size: (32, 32),
            camera: CameraSpec {
                focal: 48.0,
                principal_point: [16.0, 16.0],
                poses: vec![Pose::identity(); 8],
            },
            objects: vec![ObjectSpec {
                size: [1.5, 1.5, 1.0],
                position: [0.4 * (seed % 3) as f64 - 0.4, 0.0, 4.5],
                velocity: [0.3, 0.0, 0.0],
                color: [0.9, 0.4, 0.1],
            }],
            background_depth: 9.0,
        };
        let (video, _, meta) = generate_scene(&spec).unwrap();
        let vqa = make_vqa(&meta, &TemplateSet::default(), seed).unwrap();
        (video, vqa.samples)
    }

    fn tiny_data(n_scenes: u64) -> Vec<TrainSample> {
        let mut data = Vec::new();
        for s in 0..n_scenes {
            let (video, samples) = scene(s);
            for sample in samples {
                data.push(TrainSample { video: video.clone(), sample });
            }
        }
        data
    }

    fn frozen_teacher() -> TeacherModel {
        let mut t = TeacherModel::new(TeacherConfig::default(), 0).unwrap();
        t.freeze();
        t
    }

    #[test]
    fn sft_only_never_constructs_d4dp_and_is_deterministic() {
        let data = tiny_data(1);
        let cfg = DistillConfig {
            use_ld: false,
            use_ed: false,
            steps: 3,
            ..Default::default()
        };
        let mut a = StudentModel::new(StudentConfig::default(), 5).unwrap();
        let ra = train(&cfg, &data, None, &mut a, None, 11).unwrap();
        assert!(a.params.get("d4dp.w1").is_none());
        ra.verify_decomposition(1e-9).unwrap();
        assert!(ra.steps.iter().all(|s| s.ld == 0.0 && s.ed == 0.0));

        let mut b = StudentModel::new(StudentConfig::default(), 5).unwrap();
        let rb = train(&cfg, &data, None, &mut b, None, 11).unwrap();
        assert_eq!(ra.student_hash, rb.student_hash);
    }

    #[test]
    fn sft_only_matches_handwritten_sft_loop_bitwise() {
        let data = tiny_data(1);
        let cfg = DistillConfig { use_ld: false, use_ed: false, steps: 4, ..Default::default() };
        let mut via_trainer = StudentModel::new(StudentConfig::default(), 5).unwrap();
        train(&cfg, &data, None, &mut via_trainer, None, 11).unwrap();

        // a loop with no distillation code at all must land on identical bytes
        let mut manual = StudentModel::new(StudentConfig::default(), 5).unwrap();
        apply_trainable_mask(&mut manual, &cfg);
        let mut opt = OptState::new(OptConfig {
            base_lr: cfg.base_lr,
            warmup_ratio: cfg.warmup_ratio,
            grad_clip: cfg.grad_clip,
            ..OptConfig::new(cfg.base_lr, cfg.steps)
        });
        let mut order: Vec<usize> = Vec::new();
        for step in 0..cfg.steps {
            if step % data.len() == 0 {
                order = (0..data.len()).collect();
                let mut rng = stage_rng(11, "train-shuffle", (step / data.len()) as u64);
                order.shuffle(&mut rng);
            }
            let item = &data[order[step % data.len()]];
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let answer = item.sample.options[item.sample.answer_index].clone();
            let seq = manual.build_sequence(&item.sample.question, Some(&answer)).unwrap();
            let (logits, _, _) = manual
                .llm_forward(&mut tape, Some(&mut binding), &item.video, &seq, None)
                .unwrap();
            let sft = manual.sft_loss(&mut tape, logits, &seq).unwrap();
            let grads = tape.backward(sft).unwrap();
            opt.apply(&mut manual.params, &binding, &grads).unwrap();
        }
        assert_eq!(student_hash(&via_trainer), student_hash(&manual));
    }

    #[test]
    fn distill_run_logs_consistent_losses_and_keeps_teacher_frozen() {
        let data = tiny_data(2);
        let teacher = frozen_teacher();
        let hash_before = teacher.content_hash();
        let dir = tempfile::tempdir().unwrap();
        let cache = TeacherCache::new(dir.path()).unwrap();
        let cfg = DistillConfig { steps: 4, ..Default::default() };
        let mut student = StudentModel::new(StudentConfig::default(), 5).unwrap();
        let report = train(&cfg, &data, Some(&teacher), &mut student, Some(&cache), 13).unwrap();
        report.verify_decomposition(1e-9).unwrap();
        assert_eq!(report.steps.len(), 4);
        assert!(report.steps.iter().all(|s| s.total.is_finite() && s.ld > 0.0 && s.ed > 0.0));
        assert_eq!(teacher.content_hash(), hash_before);
        assert_eq!(report.teacher_hash.as_deref(), Some(hash_before.as_str()));
        assert!(student.params.get("d4dp.w1").is_some());
        // frozen vision encoder untouched by the default mask
        let fresh = StudentModel::new(StudentConfig::default(), 5).unwrap();
        assert_eq!(
            subset_store(&student.params, "student.ev.").content_hash(),
            subset_store(&fresh.params, "student.ev.").content_hash()
        );
    }

    #[test]
    fn unfrozen_teacher_is_rejected() {
        let data = tiny_data(1);
        let teacher = TeacherModel::new(TeacherConfig::default(), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cache = TeacherCache::new(dir.path()).unwrap();
        let cfg = DistillConfig { steps: 1, ..Default::default() };
        let mut student = StudentModel::new(StudentConfig::default(), 5).unwrap();
        let err = train(&cfg, &data, Some(&teacher), &mut student, Some(&cache), 13).unwrap_err();
        assert!(matches!(err, P4dError::FrozenViolation(_)));
    }

    #[test]
    fn alpha_scaling_doubles_the_latent_gradient_share() {
        let data = tiny_data(1);
        let teacher = frozen_teacher();
        let dir = tempfile::tempdir().unwrap();
        let cache = TeacherCache::new(dir.path()).unwrap();
        let item = &data[0];
        let artifacts = cache.artifacts(&teacher, &item.video, &item.sample.video_id).unwrap();

        let mut student = StudentModel::new(StudentConfig::default(), 5).unwrap();
        let dec = PerceptionDecoder::new(64, 32, 64);
        let mut rng = stage_rng(13, "d4dp-init", 0);
        dec.init_params(&mut student.params, &mut rng).unwrap();

        let grad_at = |alpha: f64| -> f64 {
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let answer = item.sample.options[item.sample.answer_index].clone();
            let seq = student.build_sequence(&item.sample.question, Some(&answer)).unwrap();
            let (logits, _, hidden) = student
                .llm_forward(&mut tape, Some(&mut binding), &item.video, &seq, None)
                .unwrap();
            let sft = student.sft_loss(&mut tape, logits, &seq).unwrap();
            let rearranged =
                rearrange_hidden(&mut tape, &hidden, (4, 4), (4, 4, 4)).unwrap();
            let latent = dec
                .forward(&mut tape, &mut Some(&mut binding), &student.params, rearranged)
                .unwrap();
            let target = tape.leaf(artifacts.latent_tokens.clone().into_dyn());
            let ld = latent_distill_loss(&mut tape, target, latent, 4, 1.0).unwrap();
            let total = total_loss(&mut tape, sft, Some(ld), None, alpha, 0.1).unwrap();
            let grads = tape.backward(total).unwrap();
            let id = binding.var("d4dp.w2").unwrap();
            grads.get(id).unwrap()[[0, 0]]
        };
        let g0 = grad_at(0.0);
        let g1 = grad_at(0.5);
        let g2 = grad_at(1.0);
        let delta1 = g1 - g0;
        let delta2 = g2 - g0;
        assert!((delta2 - 2.0 * delta1).abs() < 1e-9 * delta1.abs().max(1e-12));
    }

    #[test]
    fn ablation_matrix_rows_resolve() {
        let base = DistillConfig::default();
        for name in ablation_names() {
            let cfg = ablation_config(name, &base).unwrap();
            cfg.validate().unwrap();
        }
        assert!(ablation_config("LoRA", &base).is_err());
        assert!(!ablation_config("4D-SFT", &base).unwrap().needs_d4dp());
        assert_eq!(ablation_config("Zero-shot", &base).unwrap().steps, 0);
        assert_eq!(
            ablation_config("LD+D+F", &base).unwrap().enabled_modalities,
            vec![crate::scenegen::Modality::Depth, crate::scenegen::Modality::Flow]
        );
    }

    #[test]
    fn plain_inference_trace_is_zero_and_variant_pays_encode() {
        let (video, samples) = scene(1);
        let student = StudentModel::new(StudentConfig::default(), 5).unwrap();
        let (counts, _) = inference_trace(&student, None, &video, &samples[0]).unwrap();
        assert_eq!(counts.total(), 0);

        let teacher = frozen_teacher();
        let cat = StudentModel::new(
            StudentConfig { variant: Variant::Concat4d, ..Default::default() },
            5,
        )
        .unwrap();
        let (counts, _) = inference_trace(&cat, Some(&teacher), &video, &samples[0]).unwrap();
        assert!(counts.teacher_encode >= 1);
        assert_eq!(counts.d4dp, 0);
    }

    #[test]
    fn overfit_small_set_drives_answer_ce_down() {
        let data = tiny_data(2);
        let subset: Vec<TrainSample> = data.into_iter().take(20).collect();
        let cfg = DistillConfig {
            use_ld: false,
            use_ed: false,
            steps: 260,
            base_lr: 2e-3,
            ..Default::default()
        };
        let mut student = StudentModel::new(StudentConfig::default(), 5).unwrap();
        let report = train(&cfg, &subset, None, &mut student, None, 17).unwrap();
        let tail: Vec<f64> = report.steps.iter().rev().take(20).map(|s| s.sft).collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(mean < 0.1, "trailing answer CE {mean}");
    }
}
