//! The frozen 4D perception teacher: a unified space-time video encoder plus
//! per-modality decoder heads, pretrained at desk scale on scenegen ground
//! truth and then frozen for distillation.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::nnkit::init::{xavier_init, zero_init};
use crate::nnkit::ops::smooth_l1;
use crate::nnkit::optim::{OptConfig, OptState};
use crate::nnkit::params::Binding;
use crate::nnkit::rng::stage_rng;
use crate::nnkit::{ParamStore, Tape, VarId};
use crate::scenegen::{Modality, SignalSet, VideoTensor};
use crate::{P4dError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    /// Spatial patch size in pixels.
    pub patch: usize,
    /// Temporal stride: frames per space-time tube.
    pub temporal_stride: usize,
    /// Latent channel count c'.
    pub latent_dim: usize,
    /// Transformer depth.
    pub blocks: usize,
    /// Feed-forward hidden width inside each block.
    pub mlp_hidden: usize,
    /// Hidden width of the two-layer pointwise decoder heads.
    pub head_hidden: usize,
    /// Frame count and image size the positional table is built for.
    pub n_frames: usize,
    pub image_size: (usize, usize),
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            temporal_stride: 2,
            latent_dim: 64,
            blocks: 4,
            mlp_hidden: 128,
            head_hidden: 96,
            n_frames: 8,
            image_size: (32, 32),
        }
    }
}

impl TeacherConfig {
    pub fn latent_frames(&self) -> usize {
        self.n_frames / self.temporal_stride
    }

    pub fn latent_grid(&self) -> (usize, usize) {
        (self.image_size.0 / self.patch, self.image_size.1 / self.patch)
    }

    pub fn tokens(&self) -> usize {
        let (h, w) = self.latent_grid();
        self.latent_frames() * h * w
    }
}

/// The student-side latent F_4D with its provenance.
#[derive(Debug, Clone)]
pub struct TeacherLatent {
    /// `(N', h', w', c')`.
    pub values: Array4<f64>,
    pub video_id: String,
    pub teacher_hash: String,
}

pub struct TeacherModel {
    pub config: TeacherConfig,
    pub params: ParamStore,
    frozen: bool,
    frozen_hash: Option<String>,
}

const PREFIX: &str = "teacher4d";

impl TeacherModel {
    /// Fresh teacher with Xavier weights and zero biases.
    pub fn new(config: TeacherConfig, seed: u64) -> Result<Self> {
        // channel counts (1, 2, 1, 6) are structural; assert at construction
        debug_assert_eq!(
            Modality::all().map(|m| m.channels()),
            [1, 2, 1, 6],
            "modality channel map must be (1, 2, 1, 6)"
        );
        if config.image_size.0 % config.patch != 0 || config.image_size.1 % config.patch != 0 {
            return Err(P4dError::InvalidArgument(format!(
                "image {}x{} not divisible by patch {}",
                config.image_size.0, config.image_size.1, config.patch
            )));
        }
        if config.n_frames % config.temporal_stride != 0 {
            return Err(P4dError::InvalidArgument(format!(
                "n_frames {} not divisible by temporal stride {}",
                config.n_frames, config.temporal_stride
            )));
        }
        let mut rng = stage_rng(seed, "teacher-init", 0);
        let mut params = ParamStore::new();
        let c = config.latent_dim;
        let in_dim = config.temporal_stride * config.patch * config.patch * 3;
        params.add(&format!("{PREFIX}.embed.w"), xavier_init(&[in_dim, c], &mut rng)?)?;
        params.add(&format!("{PREFIX}.embed.b"), zero_init(&[c]))?;
        params.add(&format!("{PREFIX}.pos"), xavier_init(&[config.tokens(), c], &mut rng)?)?;
        for blk in 0..config.blocks {
            let p = format!("{PREFIX}.block{blk}");
            params.add(&format!("{p}.ln1.g"), ndarray::ArrayD::ones(ndarray::IxDyn(&[c])))?;
            params.add(&format!("{p}.ln1.b"), zero_init(&[c]))?;
            for name in ["wq", "wk", "wv", "wo"] {
                params.add(&format!("{p}.{name}"), xavier_init(&[c, c], &mut rng)?)?;
            }
            params.add(&format!("{p}.ln2.g"), ndarray::ArrayD::ones(ndarray::IxDyn(&[c])))?;
            params.add(&format!("{p}.ln2.b"), zero_init(&[c]))?;
            params.add(&format!("{p}.ff.w1"), xavier_init(&[c, config.mlp_hidden], &mut rng)?)?;
            params.add(&format!("{p}.ff.b1"), zero_init(&[config.mlp_hidden]))?;
            params.add(&format!("{p}.ff.w2"), xavier_init(&[config.mlp_hidden, c], &mut rng)?)?;
            params.add(&format!("{p}.ff.b2"), zero_init(&[c]))?;
        }
        params.add(&format!("{PREFIX}.ln_f.g"), ndarray::ArrayD::ones(ndarray::IxDyn(&[c])))?;
        params.add(&format!("{PREFIX}.ln_f.b"), zero_init(&[c]))?;
        for m in Modality::all() {
            let p = format!("{PREFIX}.head.{}", m.name());
            params.add(&format!("{p}.w1"), xavier_init(&[c, config.head_hidden], &mut rng)?)?;
            params.add(&format!("{p}.b1"), zero_init(&[config.head_hidden]))?;
            params.add(&format!("{p}.w2"), xavier_init(&[config.head_hidden, m.channels()], &mut rng)?)?;
            params.add(&format!("{p}.b2"), zero_init(&[m.channels()]))?;
        }
        Ok(Self { config, params, frozen: false, frozen_hash: None })
    }

    pub fn from_params(config: TeacherConfig, params: ParamStore) -> Self {
        Self { config, params, frozen: false, frozen_hash: None }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Freeze every parameter and record the content hash. Idempotent.
    pub fn freeze(&mut self) -> String {
        self.params.freeze_all();
        self.frozen = true;
        let hash = self.params.content_hash();
        self.frozen_hash = Some(hash.clone());
        hash
    }

    pub fn frozen_hash(&self) -> Option<&str> {
        self.frozen_hash.as_deref()
    }

    pub fn content_hash(&self) -> String {
        self.params.content_hash()
    }

    /// Flatten a video into space-time tube rows `(tokens, stride*patch^2*3)`.
    fn tubelet_rows(&self, video: &VideoTensor) -> Result<Array2<f64>> {
        let cfg = &self.config;
        let shape = video.frames.shape();
        let (n, h, w) = (shape[0], shape[1], shape[2]);
        if h % cfg.patch != 0 || w % cfg.patch != 0 {
            return Err(P4dError::InvalidArgument(format!(
                "frame {h}x{w} not divisible by patch {}; pad to {}x{}",
                cfg.patch,
                h.div_ceil(cfg.patch) * cfg.patch,
                w.div_ceil(cfg.patch) * cfg.patch
            )));
        }
        if n % cfg.temporal_stride != 0 {
            return Err(P4dError::InvalidArgument(format!(
                "{n} frames not divisible by temporal stride {}; pad to {} frames",
                cfg.temporal_stride,
                n.div_ceil(cfg.temporal_stride) * cfg.temporal_stride
            )));
        }
        let (gh, gw) = (h / cfg.patch, w / cfg.patch);
        let nt = n / cfg.temporal_stride;
        let in_dim = cfg.temporal_stride * cfg.patch * cfg.patch * 3;
        let mut rows = Array2::<f64>::zeros((nt * gh * gw, in_dim));
        for tn in 0..nt {
            for gy in 0..gh {
                for gx in 0..gw {
                    let row = tn * gh * gw + gy * gw + gx;
                    let mut col = 0;
                    for dn in 0..cfg.temporal_stride {
                        for py in 0..cfg.patch {
                            for px in 0..cfg.patch {
                                for ch in 0..3 {
                                    rows[[row, col]] = video.frames[[
                                        tn * cfg.temporal_stride + dn,
                                        gy * cfg.patch + py,
                                        gx * cfg.patch + px,
                                        ch,
                                    ]];
                                    col += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(rows)
    }

    /// Build the encoder graph; returns latent tokens `(N'*h'*w', c')`.
    ///
    /// With `binding` set, parameters join the tape through it (pretraining);
    /// otherwise they enter as plain constants and receive no gradient.
    pub fn encode_graph(
        &self,
        tape: &mut Tape,
        binding: Option<&mut Binding>,
        video: &VideoTensor,
    ) -> Result<VarId> {
        crate::trace::count_teacher_encode();
        let rows = self.tubelet_rows(video)?;
        let input = tape.leaf(rows.into_dyn());
        let mut bind_slot = binding;
        let mut get = |tape: &mut Tape, name: &str| -> VarId {
            let full = format!("{PREFIX}.{name}");
            match bind_slot.as_deref_mut() {
                Some(b) => b.bind(tape, &self.params, &full),
                None => tape.leaf(self.params.value(&full).clone()),
            }
        };
        let w = get(tape, "embed.w");
        let b = get(tape, "embed.b");
        let pos = get(tape, "pos");
        let mut x = tape.matmul(input, w);
        x = tape.add_row(x, b);
        x = tape.add(x, pos);
        let scale = 1.0 / (self.config.latent_dim as f64).sqrt();
        for blk in 0..self.config.blocks {
            let p = |s: &str| format!("block{blk}.{s}");
            let g1 = get(tape, &p("ln1.g"));
            let b1 = get(tape, &p("ln1.b"));
            let normed = tape.layer_norm(x, g1, b1);
            let wq = get(tape, &p("wq"));
            let wk = get(tape, &p("wk"));
            let wv = get(tape, &p("wv"));
            let wo = get(tape, &p("wo"));
            let q = tape.matmul(normed, wq);
            let k = tape.matmul(normed, wk);
            let v = tape.matmul(normed, wv);
            let kt = tape.transpose(k);
            let scores = tape.matmul(q, kt);
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax(scaled, false);
            let ctx = tape.matmul(attn, v);
            let proj = tape.matmul(ctx, wo);
            x = tape.add(x, proj);
            let g2 = get(tape, &p("ln2.g"));
            let b2 = get(tape, &p("ln2.b"));
            let normed2 = tape.layer_norm(x, g2, b2);
            let w1 = get(tape, &p("ff.w1"));
            let fb1 = get(tape, &p("ff.b1"));
            let w2 = get(tape, &p("ff.w2"));
            let fb2 = get(tape, &p("ff.b2"));
            let mut ff = tape.matmul(normed2, w1);
            ff = tape.add_row(ff, fb1);
            ff = tape.gelu(ff);
            ff = tape.matmul(ff, w2);
            ff = tape.add_row(ff, fb2);
            x = tape.add(x, ff);
        }
        let gf = get(tape, "ln_f.g");
        let bf = get(tape, "ln_f.b");
        Ok(tape.layer_norm(x, gf, bf))
    }

    /// Decode latent tokens to full-resolution signal rows `(N*H*W, ch)`.
    ///
    /// Temporal resolution is recovered by nearest-frame repeat, spatial by
    /// bilinear upsampling, then a two-layer pointwise head.
    pub fn decode_graph(
        &self,
        tape: &mut Tape,
        binding: Option<&mut Binding>,
        latent_tokens: VarId,
        modality: Modality,
    ) -> Result<VarId> {
        crate::trace::count_teacher_decode();
        let cfg = &self.config;
        let (gh, gw) = cfg.latent_grid();
        let nt = cfg.latent_frames();
        let tokens = tape.value(latent_tokens).shape()[0];
        if tokens != nt * gh * gw {
            return Err(P4dError::ShapeMismatch(format!(
                "latent has {tokens} tokens, teacher expects {}",
                nt * gh * gw
            )));
        }
        let (h, w) = cfg.image_size;
        let mut bind_slot = binding;
        let mut get = |tape: &mut Tape, name: &str| -> VarId {
            let full = format!("{PREFIX}.head.{}.{name}", modality.name());
            match bind_slot.as_deref_mut() {
                Some(b) => b.bind(tape, &self.params, &full),
                None => tape.leaf(self.params.value(&full).clone()),
            }
        };
        let w1 = get(tape, "w1");
        let b1 = get(tape, "b1");
        let w2 = get(tape, "w2");
        let b2 = get(tape, "b2");
        let mut frames = Vec::with_capacity(cfg.n_frames);
        for n in 0..cfg.n_frames {
            let src = n / cfg.temporal_stride;
            let idx: Vec<usize> = (src * gh * gw..(src + 1) * gh * gw).collect();
            let frame_tokens = tape.gather_rows(latent_tokens, &idx);
            let up = tape.bilinear(frame_tokens, gh, gw, h, w);
            let mut y = tape.matmul(up, w1);
            y = tape.add_row(y, b1);
            y = tape.gelu(y);
            y = tape.matmul(y, w2);
            y = tape.add_row(y, b2);
            frames.push(y);
        }
        Ok(tape.concat_rows(&frames))
    }

    /// Deterministic latent for a video.
    pub fn teacher_encode(&self, video: &VideoTensor, video_id: &str) -> Result<TeacherLatent> {
        let mut tape = Tape::new();
        let tokens = self.encode_graph(&mut tape, None, video)?;
        let (gh, gw) = self.config.latent_grid();
        let nt = self.config.latent_frames();
        let values = tape
            .value(tokens)
            .clone()
            .into_shape_with_order(ndarray::IxDyn(&[nt, gh, gw, self.config.latent_dim]))
            .unwrap()
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        Ok(TeacherLatent {
            values,
            video_id: video_id.to_string(),
            teacher_hash: self.content_hash(),
        })
    }

    /// Deterministic decode of a latent to `(N, H, W, ch(m))`.
    pub fn teacher_decode(&self, latent: &TeacherLatent, modality: Modality) -> Result<Array4<f64>> {
        let mut tape = Tape::new();
        let shape = latent.values.shape();
        let tokens_arr = latent
            .values
            .clone()
            .into_shape_with_order(ndarray::IxDyn(&[shape[0] * shape[1] * shape[2], shape[3]]))
            .unwrap();
        let tokens = tape.leaf(tokens_arr.into_dyn());
        let rows = self.decode_graph(&mut tape, None, tokens, modality)?;
        let (h, w) = self.config.image_size;
        Ok(tape
            .value(rows)
            .clone()
            .into_shape_with_order(ndarray::IxDyn(&[self.config.n_frames, h, w, modality.channels()]))
            .unwrap()
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub base_lr: f64,
    pub warmup_ratio: f64,
    /// Smooth-L1 transition point.
    pub delta: f64,
    /// Per-modality loss weights in (depth, flow, motion, camray) order.
    pub lambda: [f64; 4],
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            base_lr: 3e-3,
            warmup_ratio: 0.03,
            delta: 1.0,
            lambda: [1.0, 0.1, 0.05, 0.05],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainReport {
    pub init_val_depth_smooth_l1: f64,
    pub final_val_depth_smooth_l1: f64,
    pub init_train_loss: f64,
    pub final_train_loss: f64,
    pub steps_run: usize,
}

fn signal_rows(signals: &SignalSet, m: Modality) -> Array2<f64> {
    let arr = match m {
        Modality::Depth => &signals.depth,
        Modality::Flow => &signals.flow,
        Modality::Motion => &signals.motion,
        Modality::Camray => &signals.camray,
    };
    let s = arr.shape();
    arr.clone()
        .into_shape_with_order((s[0] * s[1] * s[2], s[3]))
        .unwrap()
}

/// Mean depth Smooth-L1 of `decode(encode(v))` against ground truth over a
/// validation set.
pub fn validation_depth_loss(model: &TeacherModel, val: &[(String, VideoTensor, SignalSet)], delta: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (id, video, signals) in val {
        let latent = model.teacher_encode(video, id)?;
        let depth = model.teacher_decode(&latent, Modality::Depth)?;
        acc += smooth_l1(&depth.clone().into_dyn(), &signals.depth.clone().into_dyn(), delta)?;
    }
    Ok(acc / val.len() as f64)
}

/// Supervised pretraining of the teacher on (video, signals) pairs.
///
/// One video per step, cycling the training set; aborts on a non-finite loss
/// and returns the last finite-state model.
pub fn pretrain_teacher(
    train: &[(String, VideoTensor, SignalSet)],
    val: &[(String, VideoTensor, SignalSet)],
    teacher_config: TeacherConfig,
    cfg: &PretrainConfig,
) -> Result<(TeacherModel, PretrainReport)> {
    if train.is_empty() || val.is_empty() {
        return Err(P4dError::InvalidArgument("pretrain needs train and val data".into()));
    }
    let mut model = TeacherModel::new(teacher_config, cfg.seed)?;
    let init_val = validation_depth_loss(&model, val, cfg.delta)?;

    let mut opt = OptState::new(OptConfig {
        base_lr: cfg.base_lr,
        warmup_ratio: cfg.warmup_ratio,
        total_steps: cfg.steps.max(1),
        ..OptConfig::new(cfg.base_lr, cfg.steps.max(1))
    });

    let mut init_train_loss = 0.0;
    let mut final_train_loss = 0.0;
    let mut steps_run = 0;
    let mut last_good = model.params.clone();
    for step in 0..cfg.steps {
        let (_, video, signals) = &train[step % train.len()];
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let latent = model.encode_graph(&mut tape, Some(&mut binding), video)?;
        let mut parts = Vec::new();
        for (i, m) in Modality::all().into_iter().enumerate() {
            let decoded = model.decode_graph(&mut tape, Some(&mut binding), latent, m)?;
            let target = tape.leaf(signal_rows(signals, m).into_dyn());
            let loss_m = tape.smooth_l1_mean(decoded, target, cfg.delta);
            parts.push((loss_m, cfg.lambda[i]));
        }
        let loss = tape.sum_weighted(&parts);
        let loss_val = tape.scalar_value(loss);
        if !loss_val.is_finite() {
            model.params = last_good;
            return Err(P4dError::NonFinite(format!(
                "teacher pretraining diverged at step {step}; last good checkpoint restored"
            )));
        }
        if step == 0 {
            init_train_loss = loss_val;
        }
        final_train_loss = loss_val;
        last_good = model.params.clone();
        let grads = tape.backward(loss)?;
        opt.apply(&mut model.params, &binding, &grads)?;
        steps_run += 1;
    }

    let final_val = validation_depth_loss(&model, val, cfg.delta)?;
    let report = PretrainReport {
        init_val_depth_smooth_l1: init_val,
        final_val_depth_smooth_l1: final_val,
        init_train_loss,
        final_train_loss,
        steps_run,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, CameraSpec, ObjectSpec, Pose, SceneSpec};

    fn small_video(seed: u64) -> (VideoTensor, SignalSet) {
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
                position: [0.3 * seed as f64 - 0.5, 0.0, 4.5],
                velocity: [0.3, 0.0, 0.0],
                color: [0.9, 0.4, 0.1],
            }],
            background_depth: 9.0,
        };
        let (v, s, _) = generate_scene(&spec).unwrap();
        (v, s)
    }

    #[test]
    fn latent_shape_follows_config() {
        let model = TeacherModel::new(TeacherConfig::default(), 0).unwrap();
        let (video, _) = small_video(1);
        let latent = model.teacher_encode(&video, "v1").unwrap();
        assert_eq!(latent.values.shape(), &[4, 4, 4, 64]);
    }

    #[test]
    fn encode_is_deterministic() {
        let model = TeacherModel::new(TeacherConfig::default(), 0).unwrap();
        let (video, _) = small_video(1);
        let a = model.teacher_encode(&video, "v").unwrap();
        let b = model.teacher_encode(&video, "v").unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn encode_is_sensitive_to_frame_changes() {
        let model = TeacherModel::new(TeacherConfig::default(), 0).unwrap();
        let (video, _) = small_video(1);
        let mut other = video.clone();
        other.frames[[3, 10, 10, 0]] += 0.25;
        let a = model.teacher_encode(&video, "v").unwrap();
        let b = model.teacher_encode(&other, "v").unwrap();
        assert_ne!(a.values, b.values);
    }

    #[test]
    fn decode_channel_counts() {
        let model = TeacherModel::new(TeacherConfig::default(), 0).unwrap();
        let (video, _) = small_video(2);
        let latent = model.teacher_encode(&video, "v").unwrap();
        for m in Modality::all() {
            let out = model.teacher_decode(&latent, m).unwrap();
            assert_eq!(out.shape(), &[8, 32, 32, m.channels()]);
        }
    }

    #[test]
    fn zero_latent_with_zero_head_outputs_bias() {
        let mut model = TeacherModel::new(TeacherConfig::default(), 0).unwrap();
        let name = "teacher4d.head.depth.w2";
        model.params.get_mut(name).unwrap().value.fill(0.0);
        model.params.get_mut("teacher4d.head.depth.b2").unwrap().value.fill(3.25);
        let latent = TeacherLatent {
            values: Array4::zeros((4, 4, 4, 64)),
            video_id: "z".into(),
            teacher_hash: model.content_hash(),
        };
        let out = model.teacher_decode(&latent, Modality::Depth).unwrap();
        assert!(out.iter().all(|&v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn indivisible_shapes_rejected_with_hint() {
        let model = TeacherModel::new(TeacherConfig::default(), 0).unwrap();
        let frames = Array4::<f64>::zeros((8, 30, 32, 3));
        let video = VideoTensor { frames, timestamps: (0..8).map(|i| i as f64).collect() };
        let err = model.teacher_encode(&video, "bad").unwrap_err();
        assert!(err.to_string().contains("pad"));
    }

    #[test]
    fn freeze_is_idempotent_and_hash_stable() {
        let mut model = TeacherModel::new(TeacherConfig::default(), 0).unwrap();
        let h1 = model.freeze();
        let h2 = model.freeze();
        assert_eq!(h1, h2);
        assert!(model.is_frozen());
        assert_eq!(model.params.num_trainable(), 0);
    }

    #[test]
    fn zero_step_pretrain_keeps_init_loss() {
        let data: Vec<_> = (0..2)
            .map(|i| {
                let (v, s) = small_video(i);
                (format!("v{i}"), v, s)
            })
            .collect();
        let cfg = PretrainConfig { steps: 0, ..Default::default() };
        let (model, report) = pretrain_teacher(&data, &data, TeacherConfig::default(), &cfg).unwrap();
        let val = validation_depth_loss(&model, &data, cfg.delta).unwrap();
        assert_eq!(report.init_val_depth_smooth_l1, report.final_val_depth_smooth_l1);
        assert!((val - report.init_val_depth_smooth_l1).abs() < 1e-12);
    }

    #[test]
    fn short_pretrain_reduces_validation_loss() {
        let train: Vec<_> = (0..3)
            .map(|i| {
                let (v, s) = small_video(i);
                (format!("t{i}"), v, s)
            })
            .collect();
        let val: Vec<_> = (10..12)
            .map(|i| {
                let (v, s) = small_video(i);
                (format!("v{i}"), v, s)
            })
            .collect();
        let cfg = PretrainConfig { steps: 40, ..Default::default() };
        let (_, report) = pretrain_teacher(&train, &val, TeacherConfig::default(), &cfg).unwrap();
        assert!(
            report.final_val_depth_smooth_l1 < report.init_val_depth_smooth_l1,
            "init {} final {}",
            report.init_val_depth_smooth_l1,
            report.final_val_depth_smooth_l1
        );
    }
}
