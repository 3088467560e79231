//! Distillation core: the training-only perception decoder mapping
//! language-model hidden states into the teacher latent space, the latent and
//! explicit distillation losses, the end-to-end trainer, and the ablation
//! matrix.

pub mod cache;
pub mod snapshot;
pub mod train;

pub use cache::{TeacherArtifacts, TeacherCache};
pub use train::{
    ablation_config, ablation_names, inference_trace, train, StepLosses, TrainReport, TrainSample,
};

use serde::{Deserialize, Serialize};

use crate::nnkit::init::{xavier_init, zero_init};
use crate::nnkit::params::Binding;
use crate::nnkit::{ParamStore, Tape, VarId};
use crate::scenegen::Modality;
use crate::student::Variant;
use crate::teacher4d::TeacherModel;
use crate::{P4dError, Result};

/// Training-only 3-layer perception decoder D_4DP: affine, GELU, affine,
/// GELU, affine. Parameters live in the shared training store under the
/// `d4dp.` prefix and are never part of an inference checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PerceptionDecoder {
    pub c_in: usize,
    pub d_h: usize,
    pub c_out: usize,
    /// Structural marker: this module must never run at inference.
    pub training_only: bool,
}

pub const D4DP_PREFIX: &str = "d4dp";
pub const D4DP_LAYERS: usize = 3;

impl PerceptionDecoder {
    pub fn new(c_in: usize, d_h: usize, c_out: usize) -> Self {
        Self { c_in, d_h, c_out, training_only: true }
    }

    /// Xavier weights, zero biases, under the `d4dp.` prefix.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl rand::Rng) -> Result<()> {
        store.add(&format!("{D4DP_PREFIX}.w1"), xavier_init(&[self.c_in, self.d_h], rng)?)?;
        store.add(&format!("{D4DP_PREFIX}.b1"), zero_init(&[self.d_h]))?;
        store.add(&format!("{D4DP_PREFIX}.w2"), xavier_init(&[self.d_h, self.d_h], rng)?)?;
        store.add(&format!("{D4DP_PREFIX}.b2"), zero_init(&[self.d_h]))?;
        store.add(&format!("{D4DP_PREFIX}.w3"), xavier_init(&[self.d_h, self.c_out], rng)?)?;
        store.add(&format!("{D4DP_PREFIX}.b3"), zero_init(&[self.c_out]))?;
        Ok(())
    }

    /// Pointwise map of `(rows, c_in)` to `(rows, c_out)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &mut Option<&mut Binding>,
        store: &ParamStore,
        x: VarId,
    ) -> Result<VarId> {
        crate::trace::count_d4dp();
        let width = tape.value(x).shape()[1];
        if width != self.c_in {
            return Err(P4dError::ShapeMismatch(format!(
                "perception decoder expects input width {}, got {width}",
                self.c_in
            )));
        }
        let mut get = |tape: &mut Tape, name: &str| -> VarId {
            let full = format!("{D4DP_PREFIX}.{name}");
            match binding.as_deref_mut() {
                Some(b) => b.bind(tape, store, &full),
                None => tape.leaf(store.value(&full).clone()),
            }
        };
        let w1 = get(tape, "w1");
        let b1 = get(tape, "b1");
        let w2 = get(tape, "w2");
        let b2 = get(tape, "b2");
        let w3 = get(tape, "w3");
        let b3 = get(tape, "b3");
        let mut y = tape.matmul(x, w1);
        y = tape.add_row(y, b1);
        y = tape.gelu(y);
        y = tape.matmul(y, w2);
        y = tape.add_row(y, b2);
        y = tape.gelu(y);
        y = tape.matmul(y, w3);
        y = tape.add_row(y, b3);
        Ok(y)
    }
}

/// Which student blocks the optimizer may touch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct TrainableMask {
    pub e_v: bool,
    pub e_p: bool,
    pub llm: bool,
}

impl Default for TrainableMask {
    /// Tune projector and language model, freeze the vision encoder.
    fn default() -> Self {
        Self { e_v: false, e_p: true, llm: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    /// Latent-distillation weight α.
    pub alpha: f64,
    /// Explicit-distillation weight β.
    pub beta: f64,
    /// Per-modality weights λ_m in (depth, flow, motion, camray) order.
    pub lambda: [f64; 4],
    /// Smooth-L1 transition point.
    pub delta: f64,
    pub enabled_modalities: Vec<Modality>,
    pub use_ld: bool,
    pub use_ed: bool,
    pub trainable: TrainableMask,
    pub variant: Variant,
    /// Hidden width d_h of the perception decoder.
    pub d4dp_hidden: usize,
    pub steps: usize,
    pub base_lr: f64,
    pub warmup_ratio: f64,
    pub grad_clip: Option<f64>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.1,
            lambda: [1.0, 0.1, 0.05, 0.05],
            delta: 1.0,
            enabled_modalities: Modality::all().to_vec(),
            use_ld: true,
            use_ed: true,
            trainable: TrainableMask::default(),
            variant: Variant::Plain,
            d4dp_hidden: 256,
            steps: 100,
            base_lr: 1e-3,
            warmup_ratio: 0.03,
            grad_clip: Some(1.0),
        }
    }
}

impl DistillConfig {
    pub fn lambda_for(&self, m: Modality) -> f64 {
        let idx = Modality::all().iter().position(|&x| x == m).unwrap();
        self.lambda[idx]
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.lambda.iter().any(|&l| l < 0.0) {
            return Err(P4dError::InvalidArgument(
                "alpha, beta and lambda weights must be nonnegative".into(),
            ));
        }
        if self.use_ed && self.enabled_modalities.is_empty() {
            return Err(P4dError::InvalidArgument(
                "explicit distillation needs at least one enabled modality".into(),
            ));
        }
        if self.delta <= 0.0 {
            return Err(P4dError::InvalidArgument("delta must be positive".into()));
        }
        Ok(())
    }

    /// Whether this run needs the perception decoder at all.
    pub fn needs_d4dp(&self) -> bool {
        self.use_ld || self.use_ed
    }

    /// Whether training needs teacher artifacts for each video.
    pub fn needs_teacher(&self) -> bool {
        self.needs_d4dp() || self.variant != Variant::Plain
    }
}

/// Uniform temporal subsampling then bilinear spatial resize of per-frame
/// hidden grids to the latent target shape; returns tokens
/// `(n_t*h_t*w_t, c)` in frame-major order.
pub fn rearrange_hidden(
    tape: &mut Tape,
    hidden_vars: &[VarId],
    src_grid: (usize, usize),
    target: (usize, usize, usize),
) -> Result<VarId> {
    let (n_t, h_t, w_t) = target;
    let n = hidden_vars.len();
    if n_t == 0 || n < n_t || n % n_t != 0 {
        return Err(P4dError::InvalidArgument(format!(
            "cannot subsample {n} frames to {n_t}: stride must be integral"
        )));
    }
    let stride = n / n_t;
    let (h, w) = src_grid;
    let mut parts = Vec::with_capacity(n_t);
    for i in 0..n_t {
        let var = hidden_vars[i * stride];
        let rows = tape.value(var).shape()[0];
        if rows != h * w {
            return Err(P4dError::ShapeMismatch(format!(
                "hidden frame has {rows} rows, expected {h}x{w}"
            )));
        }
        parts.push(tape.bilinear(var, h, w, h_t, w_t));
    }
    Ok(tape.concat_rows(&parts))
}

/// Eq. 4 path: decode a student latent through the frozen teacher heads.
/// Gradients flow to the latent, never to the teacher.
pub fn student_explicit(
    tape: &mut Tape,
    teacher: &TeacherModel,
    latent_tokens: VarId,
    m: Modality,
) -> Result<VarId> {
    if !teacher.is_frozen() {
        return Err(P4dError::FrozenViolation(
            "explicit distillation requires a frozen teacher".into(),
        ));
    }
    teacher.decode_graph(tape, None, latent_tokens, m)
}

/// Eq. 6: Σ over latent frames of per-frame mean Smooth-L1 between target
/// and student latent tokens (both `(n_t*h_t*w_t, c')`).
pub fn latent_distill_loss(
    tape: &mut Tape,
    target_tokens: VarId,
    student_tokens: VarId,
    n_frames: usize,
    delta: f64,
) -> Result<VarId> {
    let ts = tape.value(target_tokens).shape().to_vec();
    let ss = tape.value(student_tokens).shape().to_vec();
    if ts != ss {
        return Err(P4dError::ShapeMismatch(format!("latent shapes {ts:?} vs {ss:?}")));
    }
    if n_frames == 0 || ts[0] % n_frames != 0 {
        return Err(P4dError::InvalidArgument(format!(
            "{} latent rows do not split into {n_frames} frames",
            ts[0]
        )));
    }
    let per = ts[0] / n_frames;
    let mut parts = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let idx: Vec<usize> = (f * per..(f + 1) * per).collect();
        let t = tape.gather_rows(target_tokens, &idx);
        let s = tape.gather_rows(student_tokens, &idx);
        let l = tape.smooth_l1_mean(s, t, delta);
        parts.push((l, 1.0));
    }
    Ok(tape.sum_weighted(&parts))
}

/// Eq. 7: Σ over frames and enabled modalities of λ_m · per-frame mean
/// Smooth-L1 between teacher maps and student maps (rows `(n*H*W, ch)`).
pub fn explicit_distill_loss(
    tape: &mut Tape,
    pairs: &[(Modality, VarId, VarId)],
    n_frames: usize,
    cfg: &DistillConfig,
) -> Result<VarId> {
    if pairs.is_empty() {
        return Err(P4dError::InvalidArgument("explicit loss needs at least one modality".into()));
    }
    let mut parts = Vec::new();
    for &(m, target, student) in pairs {
        let ts = tape.value(target).shape().to_vec();
        let ss = tape.value(student).shape().to_vec();
        if ts != ss {
            return Err(P4dError::ShapeMismatch(format!(
                "{} maps {ts:?} vs {ss:?}",
                m.name()
            )));
        }
        if n_frames == 0 || ts[0] % n_frames != 0 {
            return Err(P4dError::InvalidArgument(format!(
                "{} rows do not split into {n_frames} frames",
                ts[0]
            )));
        }
        let per = ts[0] / n_frames;
        let weight = cfg.lambda_for(m);
        for f in 0..n_frames {
            let idx: Vec<usize> = (f * per..(f + 1) * per).collect();
            let t = tape.gather_rows(target, &idx);
            let s = tape.gather_rows(student, &idx);
            let l = tape.smooth_l1_mean(s, t, cfg.delta);
            parts.push((l, weight));
        }
    }
    Ok(tape.sum_weighted(&parts))
}

/// Eq. A1: `L = L_SFT + α·L_LD + β·L_ED`; missing terms contribute zero.
pub fn total_loss(
    tape: &mut Tape,
    sft: VarId,
    ld: Option<VarId>,
    ed: Option<VarId>,
    alpha: f64,
    beta: f64,
) -> Result<VarId> {
    let mut parts = vec![(sft, 1.0)];
    if let Some(ld) = ld {
        parts.push((ld, alpha));
    }
    if let Some(ed) = ed {
        parts.push((ed, beta));
    }
    let total = tape.sum_weighted(&parts);
    if !tape.scalar_value(total).is_finite() {
        return Err(P4dError::NonFinite("total loss is not finite".into()));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::rng::stage_rng;
    use crate::nnkit::Arr;
    use ndarray::IxDyn;

    #[test]
    fn decoder_has_three_xavier_layers_and_zero_biases() {
        let dec = PerceptionDecoder::new(64, 256, 64);
        assert!(dec.training_only);
        let mut store = ParamStore::new();
        let mut rng = stage_rng(0, "d4dp-init", 0);
        dec.init_params(&mut store, &mut rng).unwrap();
        let weights: Vec<_> = store.names().into_iter().filter(|n| n.contains(".w")).collect();
        assert_eq!(weights.len(), D4DP_LAYERS);
        for b in ["d4dp.b1", "d4dp.b2", "d4dp.b3"] {
            assert!(store.value(b).iter().all(|&v| v == 0.0));
        }
        let bound = (6.0f64 / (64.0 + 256.0)).sqrt();
        assert!(store.value("d4dp.w1").iter().all(|&v| v.abs() <= bound));
    }

    #[test]
    fn zero_weights_give_zero_latent() {
        let dec = PerceptionDecoder::new(8, 16, 4);
        let mut store = ParamStore::new();
        let mut rng = stage_rng(0, "d4dp-init", 0);
        dec.init_params(&mut store, &mut rng).unwrap();
        for p in store.iter_mut() {
            p.value.fill(0.0);
        }
        let mut tape = Tape::new();
        let x = tape.leaf(Arr::ones(IxDyn(&[5, 8])));
        let y = dec.forward(&mut tape, &mut None, &store, x).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
        assert_eq!(tape.value(y).shape(), &[5, 4]);
    }

    #[test]
    fn xavier_decoder_keeps_variance_in_range() {
        let dec = PerceptionDecoder::new(64, 256, 64);
        let mut store = ParamStore::new();
        let mut rng = stage_rng(1, "d4dp-init", 0);
        dec.init_params(&mut store, &mut rng).unwrap();
        let mut data_rng = stage_rng(2, "d4dp-data", 0);
        let x_arr = Arr::from_shape_fn(IxDyn(&[128, 64]), |_| {
            rand::Rng::gen_range(&mut data_rng, -1.7320508f64..1.7320508)
        });
        let in_var = x_arr.iter().map(|v| v * v).sum::<f64>() / x_arr.len() as f64;
        let mut tape = Tape::new();
        let x = tape.leaf(x_arr);
        let y = dec.forward(&mut tape, &mut None, &store, x).unwrap();
        let yv = tape.value(y);
        let mean = yv.iter().sum::<f64>() / yv.len() as f64;
        let out_var = yv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / yv.len() as f64;
        // two GELUs contract variance ~14x on unit input, so the sane band
        // is 20x: the probe guards against collapse/explosion, not the exact
        // linear-layer preservation factor
        assert!(out_var < 20.0 * in_var && out_var > in_var / 20.0, "var {out_var} vs {in_var}");
    }

    #[test]
    fn width_mismatch_rejected() {
        let dec = PerceptionDecoder::new(8, 16, 4);
        let mut store = ParamStore::new();
        let mut rng = stage_rng(0, "d4dp-init", 0);
        dec.init_params(&mut store, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Arr::ones(IxDyn(&[5, 9])));
        assert!(dec.forward(&mut tape, &mut None, &store, x).is_err());
    }

    #[test]
    fn rearrange_identity_when_shapes_match() {
        let mut tape = Tape::new();
        let mut rng = stage_rng(3, "rearrange", 0);
        let frames: Vec<VarId> = (0..2)
            .map(|_| {
                tape.leaf(Arr::from_shape_fn(IxDyn(&[4, 3]), |_| {
                    rand::Rng::gen_range(&mut rng, -1.0f64..1.0)
                }))
            })
            .collect();
        let out = rearrange_hidden(&mut tape, &frames, (2, 2), (2, 2, 2)).unwrap();
        let v = tape.value(out);
        for (f, &var) in frames.iter().enumerate() {
            let src = tape.value(var);
            for r in 0..4 {
                for c in 0..3 {
                    assert_eq!(v[[f * 4 + r, c]], src[[r, c]]);
                }
            }
        }
    }

    #[test]
    fn rearrange_constant_stays_constant() {
        let mut tape = Tape::new();
        let frames: Vec<VarId> = (0..4).map(|_| tape.leaf(Arr::ones(IxDyn(&[16, 3])))).collect();
        let out = rearrange_hidden(&mut tape, &frames, (4, 4), (2, 2, 2)).unwrap();
        assert!(tape.value(out).iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert_eq!(tape.value(out).shape(), &[8, 3]);
    }

    #[test]
    fn rearrange_checkerboard_halves_to_mean() {
        let mut tape = Tape::new();
        let grid = Arr::from_shape_vec(IxDyn(&[4, 1]), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let f = tape.leaf(grid);
        let out = rearrange_hidden(&mut tape, &[f], (2, 2), (1, 1, 1)).unwrap();
        assert!((tape.value(out)[[0, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rearrange_rejects_non_integral_stride() {
        let mut tape = Tape::new();
        let frames: Vec<VarId> = (0..3).map(|_| tape.leaf(Arr::ones(IxDyn(&[4, 1])))).collect();
        assert!(rearrange_hidden(&mut tape, &frames, (2, 2), (2, 2, 2)).is_err());
    }

    #[test]
    fn latent_loss_zero_offset_and_additivity() {
        let mut tape = Tape::new();
        let a = tape.leaf(Arr::ones(IxDyn(&[8, 4])));
        let b = tape.leaf(Arr::ones(IxDyn(&[8, 4])));
        let zero = latent_distill_loss(&mut tape, a, b, 2, 1.0).unwrap();
        assert_eq!(tape.scalar_value(zero), 0.0);

        // constant offset 1.0 with delta 1: per-frame mean 0.5
        let c = tape.leaf(Arr::zeros(IxDyn(&[4, 4])));
        let d = tape.leaf(Arr::ones(IxDyn(&[4, 4])));
        let one = latent_distill_loss(&mut tape, c, d, 1, 1.0).unwrap();
        assert!((tape.scalar_value(one) - 0.5).abs() < 1e-15);

        let e = tape.leaf(Arr::zeros(IxDyn(&[8, 4])));
        let f = tape.leaf(Arr::ones(IxDyn(&[8, 4])));
        let two = latent_distill_loss(&mut tape, e, f, 2, 1.0).unwrap();
        assert!((tape.scalar_value(two) - 2.0 * tape.scalar_value(one)).abs() < 1e-15);
    }

    #[test]
    fn explicit_loss_matches_weighted_sum() {
        // unit per-modality losses, one frame, paper lambda -> 1.2
        let cfg = DistillConfig::default();
        let mut tape = Tape::new();
        let mut pairs = Vec::new();
        for m in Modality::all() {
            // offset 1.5 with delta 1 -> smooth_l1 mean = 1.5 - 0.5 = 1.0
            let t = tape.leaf(Arr::zeros(IxDyn(&[4, m.channels()])));
            let s = tape.leaf(Arr::from_elem(IxDyn(&[4, m.channels()]), 1.5));
            pairs.push((m, t, s));
        }
        let loss = explicit_distill_loss(&mut tape, &pairs, 1, &cfg).unwrap();
        assert!((tape.scalar_value(loss) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn explicit_loss_depth_only_reduces_to_plain_smooth_l1() {
        let cfg = DistillConfig {
            enabled_modalities: vec![Modality::Depth],
            ..Default::default()
        };
        let mut tape = Tape::new();
        let mut rng = stage_rng(4, "ed", 0);
        let t_arr = Arr::from_shape_fn(IxDyn(&[6, 1]), |_| rand::Rng::gen_range(&mut rng, -2.0f64..2.0));
        let s_arr = Arr::from_shape_fn(IxDyn(&[6, 1]), |_| rand::Rng::gen_range(&mut rng, -2.0f64..2.0));
        let expect = crate::nnkit::ops::smooth_l1(&s_arr, &t_arr, 1.0).unwrap();
        let t = tape.leaf(t_arr);
        let s = tape.leaf(s_arr);
        let loss = explicit_distill_loss(&mut tape, &[(Modality::Depth, t, s)], 1, &cfg).unwrap();
        assert!((tape.scalar_value(loss) - expect).abs() < 1e-12);
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut tape = Tape::new();
        let sft = tape.leaf(crate::nnkit::scalar(1.0));
        let ld = tape.leaf(crate::nnkit::scalar(2.0));
        let ed = tape.leaf(crate::nnkit::scalar(3.0));
        let only = total_loss(&mut tape, sft, None, None, 0.5, 0.1).unwrap();
        assert_eq!(tape.scalar_value(only), 1.0);
        let full = total_loss(&mut tape, sft, Some(ld), Some(ed), 0.5, 0.1).unwrap();
        assert!((tape.scalar_value(full) - 2.3).abs() < 1e-15);
        let ld_only = total_loss(&mut tape, sft, Some(ld), None, 0.5, 0.1).unwrap();
        assert!((tape.scalar_value(ld_only) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn total_loss_rejects_non_finite() {
        let mut tape = Tape::new();
        let sft = tape.leaf(crate::nnkit::scalar(f64::INFINITY));
        assert!(total_loss(&mut tape, sft, None, None, 0.5, 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = DistillConfig::default();
        cfg.validate().unwrap();
        cfg.alpha = -0.1;
        assert!(cfg.validate().is_err());
        let mut cfg = DistillConfig { use_ed: true, enabled_modalities: vec![], ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg.use_ed = false;
        cfg.validate().unwrap();
    }

    #[test]
    fn unfrozen_teacher_rejected_for_explicit_path() {
        let teacher =
            TeacherModel::new(crate::teacher4d::TeacherConfig::default(), 0).unwrap();
        let mut tape = Tape::new();
        let latent = tape.leaf(Arr::zeros(IxDyn(&[64, 64])));
        let err = student_explicit(&mut tape, &teacher, latent, Modality::Depth).unwrap_err();
        assert!(matches!(err, P4dError::FrozenViolation(_)));
    }

    #[test]
    fn frozen_teacher_explicit_matches_teacher_decode() {
        use crate::scenegen::VideoTensor;
        let mut teacher = TeacherModel::new(crate::teacher4d::TeacherConfig::default(), 0).unwrap();
        teacher.freeze();
        let mut rng = stage_rng(5, "video", 0);
        let frames = ndarray::Array4::from_shape_fn((8, 32, 32, 3), |_| {
            rand::Rng::gen_range(&mut rng, 0.0f64..1.0)
        });
        let video = VideoTensor { frames, timestamps: (0..8).map(|i| i as f64).collect() };
        let latent = teacher.teacher_encode(&video, "v").unwrap();
        let direct = teacher.teacher_decode(&latent, Modality::Flow).unwrap();
        let mut tape = Tape::new();
        let tokens = tape.leaf(
            latent
                .values
                .clone()
                .into_shape_with_order(IxDyn(&[64, 64]))
                .unwrap(),
        );
        let via = student_explicit(&mut tape, &teacher, tokens, Modality::Flow).unwrap();
        let via_v = tape.value(via);
        let direct_flat = direct.into_shape_with_order((8 * 32 * 32, 2)).unwrap();
        for r in 0..direct_flat.shape()[0] {
            for c in 0..2 {
                assert_eq!(via_v[[r, c]], direct_flat[[r, c]]);
            }
        }
    }
}
