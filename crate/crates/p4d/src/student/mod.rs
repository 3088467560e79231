//! Toy multimodal student: patch vision encoder, timestamp positional
//! encoding, pooling projector, a small causal language model, and the
//! next-token head, plus the latent-concat and latent-PE input variants.

pub mod tokenizer;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::nnkit::init::{xavier_init, zero_init};
use crate::nnkit::ops::sinusoidal_encoding;
use crate::nnkit::params::Binding;
use crate::nnkit::rng::stage_rng;
use crate::nnkit::{Arr, ParamStore, Tape, VarId};
use crate::scenegen::{VQASample, VideoTensor};
use crate::teacher4d::TeacherLatent;
use crate::{P4dError, Result};
use tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Concat4d,
    Pe4d,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Concat4d => "concat4d",
            Variant::Pe4d => "pe4d",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = P4dError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Variant::Plain),
            "concat4d" => Ok(Variant::Concat4d),
            "pe4d" => Ok(Variant::Pe4d),
            other => Err(P4dError::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StudentConfig {
    pub image_size: (usize, usize),
    /// Vision-encoder patch size in pixels.
    pub patch: usize,
    /// Vision feature width d_v; also the timestamp-encoding dimension D.
    pub d_v: usize,
    /// Projector spatial pooling factor s.
    pub pool: usize,
    pub proj_hidden: usize,
    /// Language-model width c.
    pub llm_width: usize,
    pub llm_blocks: usize,
    pub mlp_hidden: usize,
    pub max_context: usize,
    /// Block whose output supplies the per-frame hidden grids.
    pub hidden_block: usize,
    pub tpe_enabled: bool,
    /// Maximum timescale T of the timestamp encoding.
    pub tpe_timescale: f64,
    pub variant: Variant,
    pub n_frames: usize,
    /// Latent channel count c' of the teacher, used by the variants.
    pub latent_dim: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            image_size: (32, 32),
            patch: 4,
            d_v: 32,
            pool: 2,
            proj_hidden: 64,
            llm_width: 64,
            llm_blocks: 2,
            mlp_hidden: 128,
            max_context: 256,
            hidden_block: 1,
            tpe_enabled: true,
            tpe_timescale: 10_000.0,
            variant: Variant::Plain,
            n_frames: 8,
            latent_dim: 64,
        }
    }
}

impl StudentConfig {
    /// Pre-projection grid side lengths (gh, gw).
    pub fn vision_grid(&self) -> (usize, usize) {
        (self.image_size.0 / self.patch, self.image_size.1 / self.patch)
    }

    /// Post-projection grid (h, w); l = h*w tokens per frame.
    pub fn token_grid(&self) -> (usize, usize) {
        let (gh, gw) = self.vision_grid();
        (gh / self.pool, gw / self.pool)
    }

    pub fn tokens_per_frame(&self) -> usize {
        let (h, w) = self.token_grid();
        h * w
    }

    pub fn visual_len(&self) -> usize {
        self.n_frames * self.tokens_per_frame()
    }
}

/// Assembled model-input sequence: ids with `<vis>` placeholders at visual
/// positions, per-frame spans, and a loss mask confined to answer tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// (start, len) of each frame's visual span, frame-ordered.
    pub frame_spans: Vec<(usize, usize)>,
    /// First text position.
    pub text_start: usize,
    pub loss_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.loss_mask.len() {
            return Err(P4dError::InvalidArgument("loss mask length mismatch".into()));
        }
        let mut cursor = 0;
        for &(start, len) in &self.frame_spans {
            if start != cursor {
                return Err(P4dError::InvalidArgument(
                    "visual spans must be contiguous and frame-ordered".into(),
                ));
            }
            cursor = start + len;
        }
        if cursor != self.text_start {
            return Err(P4dError::InvalidArgument("text must start right after visuals".into()));
        }
        if self.loss_mask[..self.text_start].iter().any(|&m| m) {
            return Err(P4dError::InvalidArgument("loss mask must lie in the text span".into()));
        }
        Ok(())
    }
}

/// Per-frame last-declared-block hidden states at visual positions.
#[derive(Debug, Clone)]
pub struct StudentHidden {
    /// One `(h, w, c)` grid per frame (values; tape vars live separately).
    pub grids: Vec<Array3<f64>>,
}

pub struct StudentModel {
    pub config: StudentConfig,
    pub params: ParamStore,
    pub tokenizer: Tokenizer,
}

const PREFIX: &str = "student";

impl StudentModel {
    pub fn new(config: StudentConfig, seed: u64) -> Result<Self> {
        let (h, w) = config.image_size;
        if h % config.patch != 0 || w % config.patch != 0 {
            return Err(P4dError::InvalidArgument(format!(
                "image {h}x{w} not divisible by patch {}",
                config.patch
            )));
        }
        let (gh, gw) = config.vision_grid();
        if gh % config.pool != 0 || gw % config.pool != 0 {
            return Err(P4dError::InvalidArgument(format!(
                "vision grid {gh}x{gw} not divisible by pooling factor {}",
                config.pool
            )));
        }
        if config.d_v % 2 != 0 {
            return Err(P4dError::InvalidArgument("d_v must be even for the timestamp encoding".into()));
        }
        if config.hidden_block >= config.llm_blocks {
            return Err(P4dError::InvalidArgument(format!(
                "hidden_block {} out of {} blocks",
                config.hidden_block, config.llm_blocks
            )));
        }
        let tokenizer = Tokenizer::new();
        let vocab = tokenizer.vocab_size();
        let mut rng = stage_rng(seed, "student-init", 0);
        let mut params = ParamStore::new();
        let c = config.llm_width;
        let in_dim = config.patch * config.patch * 3;
        params.add(&format!("{PREFIX}.ev.w"), xavier_init(&[in_dim, config.d_v], &mut rng)?)?;
        params.add(&format!("{PREFIX}.ev.b"), zero_init(&[config.d_v]))?;
        params.add(&format!("{PREFIX}.ev.pos"), xavier_init(&[gh * gw, config.d_v], &mut rng)?)?;
        params.add(&format!("{PREFIX}.ep.w1"), xavier_init(&[config.d_v, config.proj_hidden], &mut rng)?)?;
        params.add(&format!("{PREFIX}.ep.b1"), zero_init(&[config.proj_hidden]))?;
        params.add(&format!("{PREFIX}.ep.w2"), xavier_init(&[config.proj_hidden, c], &mut rng)?)?;
        params.add(&format!("{PREFIX}.ep.b2"), zero_init(&[c]))?;
        match config.variant {
            Variant::Plain => {}
            Variant::Concat4d => {
                // re-projection over [visual ; latent]: visual half starts as
                // identity, latent extension as zero, so a zero latent
                // reproduces the plain path exactly
                let mut w = Array2::<f64>::zeros((c + config.latent_dim, c));
                for i in 0..c {
                    w[[i, i]] = 1.0;
                }
                params.add(&format!("{PREFIX}.var.cat.w"), w.into_dyn())?;
                params.add(&format!("{PREFIX}.var.cat.b"), zero_init(&[c]))?;
            }
            Variant::Pe4d => {
                params.add(&format!("{PREFIX}.var.pe.w"), zero_init(&[config.latent_dim, c]))?;
            }
        }
        params.add(&format!("{PREFIX}.llm.tok"), xavier_init(&[vocab, c], &mut rng)?)?;
        params.add(&format!("{PREFIX}.llm.pos"), xavier_init(&[config.max_context, c], &mut rng)?)?;
        for blk in 0..config.llm_blocks {
            let p = format!("{PREFIX}.llm.block{blk}");
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
        params.add(&format!("{PREFIX}.llm.ln_f.g"), ndarray::ArrayD::ones(ndarray::IxDyn(&[c])))?;
        params.add(&format!("{PREFIX}.llm.ln_f.b"), zero_init(&[c]))?;
        params.add(&format!("{PREFIX}.head.w"), xavier_init(&[c, vocab], &mut rng)?)?;
        params.add(&format!("{PREFIX}.head.b"), zero_init(&[vocab]))?;
        Ok(Self { config, params, tokenizer })
    }

    pub fn content_hash(&self) -> String {
        self.params.content_hash()
    }

    fn patch_rows(&self, video: &VideoTensor, frame: usize) -> Result<Array2<f64>> {
        let cfg = &self.config;
        let shape = video.frames.shape();
        if (shape[1], shape[2]) != cfg.image_size {
            return Err(P4dError::ShapeMismatch(format!(
                "frame {}x{} does not match configured {}x{}",
                shape[1], shape[2], cfg.image_size.0, cfg.image_size.1
            )));
        }
        let (gh, gw) = cfg.vision_grid();
        let p = cfg.patch;
        let mut rows = Array2::<f64>::zeros((gh * gw, p * p * 3));
        for gy in 0..gh {
            for gx in 0..gw {
                let mut col = 0;
                for py in 0..p {
                    for px in 0..p {
                        for ch in 0..3 {
                            rows[[gy * gw + gx, col]] =
                                video.frames[[frame, gy * p + py, gx * p + px, ch]];
                            col += 1;
                        }
                    }
                }
            }
        }
        Ok(rows)
    }

    fn get_param(
        &self,
        tape: &mut Tape,
        binding: &mut Option<&mut Binding>,
        name: &str,
    ) -> VarId {
        let full = format!("{PREFIX}.{name}");
        match binding.as_deref_mut() {
            Some(b) => b.bind(tape, &self.params, &full),
            None => tape.leaf(self.params.value(&full).clone()),
        }
    }

    /// Per-frame vision features `(gh*gw, d_v)` with learned grid positions.
    pub fn encode_frames_graph(
        &self,
        tape: &mut Tape,
        binding: &mut Option<&mut Binding>,
        video: &VideoTensor,
    ) -> Result<Vec<VarId>> {
        let n = video.frames.shape()[0];
        let w = self.get_param(tape, binding, "ev.w");
        let b = self.get_param(tape, binding, "ev.b");
        let pos = self.get_param(tape, binding, "ev.pos");
        let mut out = Vec::with_capacity(n);
        for frame in 0..n {
            let rows = tape.leaf(self.patch_rows(video, frame)?.into_dyn());
            let mut x = tape.matmul(rows, w);
            x = tape.add_row(x, b);
            x = tape.add(x, pos);
            out.push(x);
        }
        Ok(out)
    }

    /// Pure-value frame encoding, for probes and tests.
    pub fn encode_frames(&self, video: &VideoTensor) -> Result<Vec<Array2<f64>>> {
        let mut tape = Tape::new();
        let vars = self.encode_frames_graph(&mut tape, &mut None, video)?;
        Ok(vars
            .into_iter()
            .map(|v| {
                let a = tape.value(v).clone();
                let s = a.shape().to_vec();
                a.into_shape_with_order((s[0], s[1])).unwrap()
            })
            .collect())
    }

    /// Broadcast-add the sinusoidal timestamp encoding of frame `n` to every
    /// token of that frame. Disabled encoding is the identity.
    pub fn add_tpe(
        &self,
        tape: &mut Tape,
        features: &[VarId],
        timestamps: &[f64],
    ) -> Result<Vec<VarId>> {
        if !self.config.tpe_enabled {
            return Ok(features.to_vec());
        }
        if features.len() != timestamps.len() {
            return Err(P4dError::InvalidArgument(format!(
                "{} frames but {} timestamps",
                features.len(),
                timestamps.len()
            )));
        }
        let mut out = Vec::with_capacity(features.len());
        for (&f, &t) in features.iter().zip(timestamps) {
            let p = sinusoidal_encoding(t, self.config.d_v, self.config.tpe_timescale)?;
            let row = tape.leaf(Arr::from_shape_vec(ndarray::IxDyn(&[self.config.d_v]), p).unwrap());
            out.push(tape.add_row(f, row));
        }
        Ok(out)
    }

    /// Project per-frame features into language-model space: s×s mean
    /// pooling, then a 2-layer MLP.
    pub fn project_graph(
        &self,
        tape: &mut Tape,
        binding: &mut Option<&mut Binding>,
        features: &[VarId],
    ) -> Result<Vec<VarId>> {
        let (gh, gw) = self.config.vision_grid();
        let w1 = self.get_param(tape, binding, "ep.w1");
        let b1 = self.get_param(tape, binding, "ep.b1");
        let w2 = self.get_param(tape, binding, "ep.w2");
        let b2 = self.get_param(tape, binding, "ep.b2");
        let mut out = Vec::with_capacity(features.len());
        for &f in features {
            let rows = tape.value(f).shape()[0];
            if rows != gh * gw {
                return Err(P4dError::ShapeMismatch(format!(
                    "frame feature grid has {rows} tokens, expected {gh}x{gw}"
                )));
            }
            let pooled = tape.avg_pool(f, gh, gw, self.config.pool);
            let mut x = tape.matmul(pooled, w1);
            x = tape.add_row(x, b1);
            x = tape.gelu(x);
            x = tape.matmul(x, w2);
            x = tape.add_row(x, b2);
            out.push(x);
        }
        Ok(out)
    }

    /// Temporally align teacher latent frames to video frames by repeat, as
    /// per-frame token matrices `(h'*w', c')`.
    fn latent_frame_rows(&self, latent: &TeacherLatent, n_frames: usize) -> Result<Vec<Array2<f64>>> {
        let s = latent.values.shape();
        let (nt, lh, lw, lc) = (s[0], s[1], s[2], s[3]);
        if nt == 0 || n_frames % nt != 0 {
            return Err(P4dError::ShapeMismatch(format!(
                "cannot align {nt} latent frames to {n_frames} video frames"
            )));
        }
        let (th, tw) = self.config.token_grid();
        if (lh, lw) != (th, tw) {
            return Err(P4dError::ShapeMismatch(format!(
                "latent grid {lh}x{lw} does not match token grid {th}x{tw}"
            )));
        }
        if lc != self.config.latent_dim {
            return Err(P4dError::ShapeMismatch(format!(
                "latent has {lc} channels, student variant expects {}",
                self.config.latent_dim
            )));
        }
        let repeat = n_frames / nt;
        let mut out = Vec::with_capacity(n_frames);
        for n in 0..n_frames {
            let src = n / repeat;
            let mut rows = Array2::<f64>::zeros((lh * lw, lc));
            for y in 0..lh {
                for x in 0..lw {
                    for ch in 0..lc {
                        rows[[y * lw + x, ch]] = latent.values[[src, y, x, ch]];
                    }
                }
            }
            out.push(rows);
        }
        Ok(out)
    }

    /// "Concat" variant: channel-concatenate the aligned latent onto each
    /// frame's embeddings, then re-project to model width.
    pub fn concat_4d(
        &self,
        tape: &mut Tape,
        binding: &mut Option<&mut Binding>,
        embeddings: &[VarId],
        latent: &TeacherLatent,
    ) -> Result<Vec<VarId>> {
        let latent_rows = self.latent_frame_rows(latent, embeddings.len())?;
        let w = self.get_param(tape, binding, "var.cat.w");
        let b = self.get_param(tape, binding, "var.cat.b");
        let mut out = Vec::with_capacity(embeddings.len());
        for (&e, rows) in embeddings.iter().zip(latent_rows) {
            let lat = tape.leaf(rows.into_dyn());
            let cat = tape.concat_cols(e, lat);
            let mut x = tape.matmul(cat, w);
            x = tape.add_row(x, b);
            out.push(x);
        }
        Ok(out)
    }

    /// "PE" variant: project the aligned latent to model width and add it to
    /// the frame embeddings.
    pub fn pe_4d(
        &self,
        tape: &mut Tape,
        binding: &mut Option<&mut Binding>,
        embeddings: &[VarId],
        latent: &TeacherLatent,
    ) -> Result<Vec<VarId>> {
        let latent_rows = self.latent_frame_rows(latent, embeddings.len())?;
        let w = self.get_param(tape, binding, "var.pe.w");
        let mut out = Vec::with_capacity(embeddings.len());
        for (&e, rows) in embeddings.iter().zip(latent_rows) {
            let lat = tape.leaf(rows.into_dyn());
            let proj = tape.matmul(lat, w);
            out.push(tape.add(e, proj));
        }
        Ok(out)
    }

    /// Assemble `[visual frames | question | <sep> | answer | <eos>]` with the
    /// loss mask on answer tokens and `<eos>`.
    pub fn build_sequence(&self, question: &str, answer: Option<&str>) -> Result<TokenSequence> {
        let vis_id = self.tokenizer.id(tokenizer::VIS)?;
        let sep_id = self.tokenizer.id(tokenizer::SEP)?;
        let eos_id = self.tokenizer.id(tokenizer::EOS)?;
        let l = self.config.tokens_per_frame();
        let mut ids = Vec::new();
        let mut frame_spans = Vec::with_capacity(self.config.n_frames);
        for _ in 0..self.config.n_frames {
            frame_spans.push((ids.len(), l));
            ids.extend(std::iter::repeat(vis_id).take(l));
        }
        let text_start = ids.len();
        ids.extend(self.tokenizer.encode(question)?);
        ids.push(sep_id);
        let mut loss_mask = vec![false; ids.len()];
        if let Some(answer) = answer {
            let ans_ids = self.tokenizer.encode(answer)?;
            for id in ans_ids {
                ids.push(id);
                loss_mask.push(true);
            }
            ids.push(eos_id);
            loss_mask.push(true);
        }
        if ids.len() > self.config.max_context {
            return Err(P4dError::InvalidArgument(format!(
                "sequence length {} exceeds context {}",
                ids.len(),
                self.config.max_context
            )));
        }
        let seq = TokenSequence { ids, frame_spans, text_start, loss_mask };
        seq.validate()?;
        Ok(seq)
    }

    /// Full forward pass. Returns next-token logits `(T, vocab)` plus the
    /// per-frame hidden grids from the declared block and their tape vars.
    pub fn llm_forward(
        &self,
        tape: &mut Tape,
        mut binding: Option<&mut Binding>,
        video: &VideoTensor,
        seq: &TokenSequence,
        latent: Option<&TeacherLatent>,
    ) -> Result<(VarId, StudentHidden, Vec<VarId>)> {
        seq.validate()?;
        let cfg = &self.config;
        if seq.frame_spans.len() != video.frames.shape()[0] {
            return Err(P4dError::ShapeMismatch(format!(
                "sequence has {} frame spans, video {} frames",
                seq.frame_spans.len(),
                video.frames.shape()[0]
            )));
        }
        let features = self.encode_frames_graph(tape, &mut binding, video)?;
        let features = self.add_tpe(tape, &features, &video.timestamps)?;
        let mut embeds = self.project_graph(tape, &mut binding, &features)?;
        match cfg.variant {
            Variant::Plain => {}
            Variant::Concat4d => {
                let latent = latent.ok_or_else(|| {
                    P4dError::MissingPrerequisite("concat4d variant needs a teacher latent".into())
                })?;
                embeds = self.concat_4d(tape, &mut binding, &embeds, latent)?;
            }
            Variant::Pe4d => {
                let latent = latent.ok_or_else(|| {
                    P4dError::MissingPrerequisite("pe4d variant needs a teacher latent".into())
                })?;
                embeds = self.pe_4d(tape, &mut binding, &embeds, latent)?;
            }
        }
        let tok_table = self.get_param(tape, &mut binding, "llm.tok");
        let text_ids = &seq.ids[seq.text_start..];
        let text_emb = tape.gather_rows(tok_table, text_ids);
        let mut parts: Vec<VarId> = embeds.clone();
        parts.push(text_emb);
        let mut x = tape.concat_rows(&parts);
        let t = seq.ids.len();
        let pos_table = self.get_param(tape, &mut binding, "llm.pos");
        let pos_idx: Vec<usize> = (0..t).collect();
        let pos = tape.gather_rows(pos_table, &pos_idx);
        x = tape.add(x, pos);

        let scale = 1.0 / (cfg.llm_width as f64).sqrt();
        let mut hidden_vars: Vec<VarId> = Vec::new();
        for blk in 0..cfg.llm_blocks {
            let p = |s: &str| format!("llm.block{blk}.{s}");
            let g1 = self.get_param(tape, &mut binding, &p("ln1.g"));
            let bb1 = self.get_param(tape, &mut binding, &p("ln1.b"));
            let normed = tape.layer_norm(x, g1, bb1);
            let wq = self.get_param(tape, &mut binding, &p("wq"));
            let wk = self.get_param(tape, &mut binding, &p("wk"));
            let wv = self.get_param(tape, &mut binding, &p("wv"));
            let wo = self.get_param(tape, &mut binding, &p("wo"));
            let q = tape.matmul(normed, wq);
            let k = tape.matmul(normed, wk);
            let v = tape.matmul(normed, wv);
            let kt = tape.transpose(k);
            let scores = tape.matmul(q, kt);
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax(scaled, true);
            let ctx = tape.matmul(attn, v);
            let proj = tape.matmul(ctx, wo);
            x = tape.add(x, proj);
            let g2 = self.get_param(tape, &mut binding, &p("ln2.g"));
            let bb2 = self.get_param(tape, &mut binding, &p("ln2.b"));
            let normed2 = tape.layer_norm(x, g2, bb2);
            let w1 = self.get_param(tape, &mut binding, &p("ff.w1"));
            let fb1 = self.get_param(tape, &mut binding, &p("ff.b1"));
            let w2 = self.get_param(tape, &mut binding, &p("ff.w2"));
            let fb2 = self.get_param(tape, &mut binding, &p("ff.b2"));
            let mut ff = tape.matmul(normed2, w1);
            ff = tape.add_row(ff, fb1);
            ff = tape.gelu(ff);
            ff = tape.matmul(ff, w2);
            ff = tape.add_row(ff, fb2);
            x = tape.add(x, ff);
            if blk == cfg.hidden_block {
                for &(start, len) in &seq.frame_spans {
                    let idx: Vec<usize> = (start..start + len).collect();
                    hidden_vars.push(tape.gather_rows(x, &idx));
                }
            }
        }
        let gf = self.get_param(tape, &mut binding, "llm.ln_f.g");
        let bf = self.get_param(tape, &mut binding, "llm.ln_f.b");
        let normed = tape.layer_norm(x, gf, bf);
        let hw = self.get_param(tape, &mut binding, "head.w");
        let hb = self.get_param(tape, &mut binding, "head.b");
        let mut logits = tape.matmul(normed, hw);
        logits = tape.add_row(logits, hb);

        let (h, w) = cfg.token_grid();
        let grids = hidden_vars
            .iter()
            .map(|&v| {
                tape.value(v)
                    .clone()
                    .into_shape_with_order(ndarray::IxDyn(&[h, w, cfg.llm_width]))
                    .unwrap()
                    .into_dimensionality::<ndarray::Ix3>()
                    .unwrap()
            })
            .collect();
        Ok((logits, StudentHidden { grids }, hidden_vars))
    }

    /// Supervised answer loss: mean cross-entropy over loss-masked tokens,
    /// each predicted from the previous position.
    pub fn sft_loss(&self, tape: &mut Tape, logits: VarId, seq: &TokenSequence) -> Result<VarId> {
        let targets: Vec<(usize, usize)> = seq
            .ids
            .iter()
            .enumerate()
            .filter(|&(t, _)| seq.loss_mask[t])
            .map(|(t, &id)| (t - 1, id))
            .collect();
        if targets.is_empty() {
            return Err(P4dError::InvalidArgument("sequence has no answer tokens".into()));
        }
        Ok(tape.cross_entropy_mean(logits, &targets))
    }

    /// Score every option by mean log-likelihood of its tokens appended after
    /// the question; argmax, ties to the lowest index.
    pub fn answer_mcq(
        &self,
        video: &VideoTensor,
        sample: &VQASample,
        latent: Option<&TeacherLatent>,
    ) -> Result<usize> {
        if sample.options.is_empty() {
            return Err(P4dError::InvalidArgument("sample has no options".into()));
        }
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, option) in sample.options.iter().enumerate() {
            let seq = self.build_sequence(&sample.question, Some(option))?;
            let mut tape = Tape::new();
            let (logits, _, _) = self.llm_forward(&mut tape, None, video, &seq, latent)?;
            let logits = tape.value(logits);
            let mut total = 0.0;
            let mut count = 0usize;
            for (t, &id) in seq.ids.iter().enumerate() {
                if seq.loss_mask[t] {
                    let row: Vec<f64> = logits
                        .index_axis(ndarray::Axis(0), t - 1)
                        .iter()
                        .copied()
                        .collect();
                    total += crate::nnkit::ops::log_softmax(&row)[id];
                    count += 1;
                }
            }
            let mean = total / count as f64;
            if mean > best.0 {
                best = (mean, i);
            }
        }
        Ok(best.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    fn video(n: usize, seed: u64) -> VideoTensor {
        let mut rng = stage_rng(seed, "test-video", 0);
        let mut frames = Array4::<f64>::zeros((n, 32, 32, 3));
        for v in frames.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        VideoTensor { frames, timestamps: (0..n).map(|i| i as f64 * 0.25).collect() }
    }

    fn model_with(n_frames: usize, variant: Variant) -> StudentModel {
        StudentModel::new(
            StudentConfig { n_frames, variant, ..Default::default() },
            7,
        )
        .unwrap()
    }

    #[test]
    fn identical_frames_give_identical_grids() {
        let model = model_with(2, Variant::Plain);
        let mut v = video(2, 1);
        let first = v.frames.index_axis(ndarray::Axis(0), 0).to_owned();
        v.frames.index_axis_mut(ndarray::Axis(0), 1).assign(&first);
        let grids = model.encode_frames(&v).unwrap();
        assert_eq!(grids[0], grids[1]);
        assert_eq!(grids[0].shape(), &[64, 32]);
    }

    #[test]
    fn zero_and_unit_frames_differ() {
        let model = model_with(1, Variant::Plain);
        let zeros = VideoTensor { frames: Array4::zeros((1, 32, 32, 3)), timestamps: vec![0.0] };
        let ones = VideoTensor {
            frames: Array4::ones((1, 32, 32, 3)),
            timestamps: vec![0.0],
        };
        assert_ne!(model.encode_frames(&zeros).unwrap(), model.encode_frames(&ones).unwrap());
    }

    #[test]
    fn tpe_disabled_is_identity_and_t0_adds_cos_ones() {
        let mut model = model_with(1, Variant::Plain);
        let v = VideoTensor { frames: Array4::zeros((1, 32, 32, 3)), timestamps: vec![0.0] };
        let mut tape = Tape::new();
        let feats = model.encode_frames_graph(&mut tape, &mut None, &v).unwrap();
        let with = model.add_tpe(&mut tape, &feats, &v.timestamps).unwrap();
        let before = tape.value(feats[0]).clone();
        let after = tape.value(with[0]).clone();
        for row in 0..after.shape()[0] {
            for ch in 0..32 {
                let delta = after[[row, ch]] - before[[row, ch]];
                let expect = if ch % 2 == 1 { 1.0 } else { 0.0 };
                assert!((delta - expect).abs() < 1e-12, "ch {ch} delta {delta}");
            }
        }
        model.config.tpe_enabled = false;
        let off = model.add_tpe(&mut tape, &feats, &v.timestamps).unwrap();
        assert_eq!(off, feats);
    }

    #[test]
    fn timestamp_changes_projected_features() {
        let model = model_with(2, Variant::Plain);
        let mut v = video(2, 2);
        let first = v.frames.index_axis(ndarray::Axis(0), 0).to_owned();
        v.frames.index_axis_mut(ndarray::Axis(0), 1).assign(&first);
        v.timestamps = vec![0.0, 1.0];
        let mut tape = Tape::new();
        let feats = model.encode_frames_graph(&mut tape, &mut None, &v).unwrap();
        let with = model.add_tpe(&mut tape, &feats, &v.timestamps).unwrap();
        let proj = model.project_graph(&mut tape, &mut None, &with).unwrap();
        assert_ne!(tape.value(proj[0]), tape.value(proj[1]));
    }

    #[test]
    fn projection_shrinks_grid_by_pool_factor() {
        let model = model_with(1, Variant::Plain);
        let v = video(1, 3);
        let mut tape = Tape::new();
        let feats = model.encode_frames_graph(&mut tape, &mut None, &v).unwrap();
        let proj = model.project_graph(&mut tape, &mut None, &feats).unwrap();
        assert_eq!(tape.value(proj[0]).shape(), &[16, 64]);
    }

    #[test]
    fn causality_future_tokens_do_not_change_past_logits() {
        let model = model_with(2, Variant::Plain);
        let v = video(2, 4);
        let seq_a = model.build_sequence("is the camera rotating left or right", Some("left")).unwrap();
        let seq_b = model.build_sequence("is the camera rotating left or right", Some("not rotating")).unwrap();
        let mut tape_a = Tape::new();
        let (la, _, _) = model.llm_forward(&mut tape_a, None, &v, &seq_a, None).unwrap();
        let mut tape_b = Tape::new();
        let (lb, _, _) = model.llm_forward(&mut tape_b, None, &v, &seq_b, None).unwrap();
        // identical prefixes: visuals + question + <sep>
        let shared = seq_a.text_start + 7;
        let a = tape_a.value(la);
        let b = tape_b.value(lb);
        for t in 0..shared {
            for c in 0..model.tokenizer.vocab_size() {
                assert!((a[[t, c]] - b[[t, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hidden_grid_count_equals_frame_count() {
        let model = model_with(4, Variant::Plain);
        let v = video(4, 5);
        let seq = model.build_sequence("how many objects are moving in the video", Some("2")).unwrap();
        let mut tape = Tape::new();
        let (_, hidden, vars) = model.llm_forward(&mut tape, None, &v, &seq, None).unwrap();
        assert_eq!(hidden.grids.len(), 4);
        assert_eq!(vars.len(), 4);
        assert_eq!(hidden.grids[0].shape(), &[4, 4, 64]);
    }

    #[test]
    fn variant_parity_with_zero_latent() {
        use crate::teacher4d::TeacherLatent;
        let v = video(2, 6);
        let zero_latent = TeacherLatent {
            values: ndarray::Array4::zeros((1, 4, 4, 64)),
            video_id: "z".into(),
            teacher_hash: "0".into(),
        };
        let seq_text = ("is the camera rotating left or right", Some("left"));
        let plain = model_with(2, Variant::Plain);
        let mut t0 = Tape::new();
        let seq = plain.build_sequence(seq_text.0, seq_text.1).unwrap();
        let (l0, _, _) = plain.llm_forward(&mut t0, None, &v, &seq, None).unwrap();
        for variant in [Variant::Concat4d, Variant::Pe4d] {
            let m = model_with(2, variant);
            let mut t1 = Tape::new();
            let (l1, _, _) = m.llm_forward(&mut t1, None, &v, &seq, Some(&zero_latent)).unwrap();
            assert_eq!(t0.value(l0), t1.value(l1), "variant {variant:?} parity");
        }
    }

    #[test]
    fn variants_require_latent() {
        let m = model_with(2, Variant::Concat4d);
        let v = video(2, 6);
        let seq = m.build_sequence("is the camera rotating left or right", None).unwrap();
        let err = m.llm_forward(&mut Tape::new(), None, &v, &seq, None).unwrap_err();
        assert!(matches!(err, P4dError::MissingPrerequisite(_)));
    }

    #[test]
    fn latent_frame_mismatch_rejected() {
        let m = model_with(3, Variant::Pe4d);
        let v = video(3, 6);
        let latent = TeacherLatent {
            values: ndarray::Array4::zeros((2, 4, 4, 64)),
            video_id: "z".into(),
            teacher_hash: "0".into(),
        };
        let seq = m.build_sequence("is the camera rotating left or right", None).unwrap();
        let err = m.llm_forward(&mut Tape::new(), None, &v, &seq, Some(&latent)).unwrap_err();
        assert!(matches!(err, P4dError::ShapeMismatch(_)));
    }

    #[test]
    fn plain_forward_never_touches_teacher() {
        let model = model_with(2, Variant::Plain);
        let v = video(2, 8);
        let seq = model.build_sequence("is <R1> moving in 3d space", Some("yes")).unwrap();
        crate::trace::reset();
        let mut tape = Tape::new();
        model.llm_forward(&mut tape, None, &v, &seq, None).unwrap();
        assert_eq!(crate::trace::snapshot().total(), 0);
    }

    #[test]
    fn mcq_single_option_returns_zero() {
        let model = model_with(2, Variant::Plain);
        let v = video(2, 9);
        let sample = VQASample {
            video_id: "v".into(),
            timestamps: v.timestamps.clone(),
            question: "is the camera rotating left or right".into(),
            options: vec!["left".into()],
            answer_index: 0,
            regions: Default::default(),
            category: crate::scenegen::Category::R,
            split: crate::scenegen::Split::Dynamic,
        };
        assert_eq!(model.answer_mcq(&v, &sample, None).unwrap(), 0);
    }

    #[test]
    fn mcq_tie_takes_lowest_index() {
        let model = model_with(2, Variant::Plain);
        let v = video(2, 10);
        let sample = VQASample {
            video_id: "v".into(),
            timestamps: v.timestamps.clone(),
            question: "is the camera rotating left or right".into(),
            options: vec!["right".into(), "left".into(), "not rotating".into(), "left".into()],
            answer_index: 1,
            regions: Default::default(),
            category: crate::scenegen::Category::R,
            split: crate::scenegen::Split::Dynamic,
        };
        let pick = model.answer_mcq(&v, &sample, None).unwrap();
        let without_dup = VQASample {
            options: vec!["right".into(), "left".into(), "not rotating".into()],
            ..sample.clone()
        };
        let base = model.answer_mcq(&v, &without_dup, None).unwrap();
        if base == 1 {
            assert_eq!(pick, 1, "duplicate best option must resolve to the lower index");
        }
    }

    #[test]
    fn untrained_mcq_is_near_chance() {
        let model = model_with(2, Variant::Plain);
        let mut hits = 0usize;
        let total = 1000usize;
        let mut rng = stage_rng(99, "mcq-chance", 0);
        for i in 0..total {
            let v = video(2, 1000 + i as u64);
            let mut options: Vec<String> =
                ["left", "right", "not rotating", "cannot tell"].iter().map(|s| s.to_string()).collect();
            use rand::seq::SliceRandom;
            options.shuffle(&mut rng);
            let answer_index = rng.gen_range(0..4);
            let sample = VQASample {
                video_id: format!("v{i}"),
                timestamps: v.timestamps.clone(),
                question: "is the camera rotating left or right".into(),
                options,
                answer_index,
                regions: Default::default(),
                category: crate::scenegen::Category::R,
                split: crate::scenegen::Split::Dynamic,
            };
            if model.answer_mcq(&v, &sample, None).unwrap() == sample.answer_index {
                hits += 1;
            }
        }
        let acc = hits as f64 / total as f64;
        assert!((acc - 0.25).abs() <= 0.05, "untrained accuracy {acc}");
    }

    #[test]
    fn oversized_sequence_rejected() {
        let model = StudentModel::new(
            StudentConfig { n_frames: 16, max_context: 100, ..Default::default() },
            7,
        )
        .unwrap();
        let err = model.build_sequence("is the camera rotating left or right", None).unwrap_err();
        assert!(err.to_string().contains("context"));
    }
}
