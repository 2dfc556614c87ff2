//! Toy-scale hierarchical fusion network.
//!
//! Three fusion stages feed a shared classification head:
//!
//! 1. text ↔ audio two-stream cross-attention → `F¹`
//! 2. images ↔ the enhanced streams, with adaptive weighting of the two
//!    image enhancements → `F²`
//! 3. gated cross-attention of extra information (like-weighted comments,
//!    publisher vector) into `F²` → `F³`
//!
//! Each stage owns one parameter group (`theta1..theta3`); the head owns
//! `theta_cls`. Every level feature is projected to a common width so the
//! head can classify any of them, and each level gets its own mean
//! cross-entropy loss. The top level's loss is the all-modal loss.

use serde::{Deserialize, Serialize};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    backward, GradientVector, GroupId, NodeId, ParamBinding, ParameterGroup, Tape, Tensor,
};

/// Tokens the head splits a fused feature into for its self-attention block.
const HEAD_TOKENS: usize = 4;

/// A fusion stage / evaluation level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FusionLevel {
    I,
    II,
    III,
}

impl FusionLevel {
    pub fn index(self) -> usize {
        match self {
            FusionLevel::I => 1,
            FusionLevel::II => 2,
            FusionLevel::III => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            1 => Some(FusionLevel::I),
            2 => Some(FusionLevel::II),
            3 => Some(FusionLevel::III),
            _ => None,
        }
    }

    pub fn group(self) -> GroupId {
        match self {
            FusionLevel::I => GroupId::Theta1,
            FusionLevel::II => GroupId::Theta2,
            FusionLevel::III => GroupId::Theta3,
        }
    }
}

impl std::fmt::Display for FusionLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionLevel::I => "I",
            FusionLevel::II => "II",
            FusionLevel::III => "III",
        })
    }
}

/// Model dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Shared modality dimension.
    pub d: usize,
    /// Width of every fused level feature.
    pub d_f: usize,
    /// Cross-attention head count; must divide `d`.
    pub heads: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d: 32, d_f: 64, heads: 2, num_classes: 2 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_f == 0 || self.heads == 0 {
            return Err(Error::InvalidConfig("model dims must be positive".into()));
        }
        if !self.d.is_multiple_of(self.heads) || !self.d_f.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d = {} and d_f = {} must both be divisible by heads = {}",
                self.d, self.d_f, self.heads
            )));
        }
        if !self.d_f.is_multiple_of(HEAD_TOKENS) {
            return Err(Error::InvalidConfig(format!(
                "d_f = {} not divisible by the head token count {}",
                self.d_f, HEAD_TOKENS
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        Ok(())
    }
}

/// One sample's modality features at the shared dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalityEmbeddings {
    /// `[L_t, d]`
    pub text: Tensor,
    /// `[L_a, d]`
    pub audio: Tensor,
    /// `[N_v, d]`
    pub images: Tensor,
    /// Raw comment vectors, each `[1, d]`.
    pub comments: Vec<Tensor>,
    /// Aligned with `comments`.
    pub like_counts: Vec<u64>,
    /// Publisher profile vector `[1, d]`, absent for sources without one.
    pub publisher: Option<Tensor>,
}

impl ModalityEmbeddings {
    pub fn validate(&self, d: usize) -> Result<()> {
        for (name, t) in [("text", &self.text), ("audio", &self.audio), ("images", &self.images)] {
            if t.rows() == 0 {
                return Err(Error::ShapeMismatch(format!("{name} sequence is empty")));
            }
            if t.cols() != d {
                return Err(Error::ShapeMismatch(format!(
                    "{name} dim {} != model dim {d}",
                    t.cols()
                )));
            }
        }
        if self.comments.len() != self.like_counts.len() {
            return Err(Error::ShapeMismatch("one like count per comment".into()));
        }
        Ok(())
    }

    /// The extra-information set fed to stage III: the like-weighted comment
    /// aggregate plus the publisher vector when present. Never empty — a
    /// sample without any extra information contributes one zero vector.
    pub fn extra_set(&self, d: usize) -> Tensor {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        if !self.comments.is_empty() {
            rows.push(aggregate_comments(&self.comments, &self.like_counts, d).data);
        }
        if let Some(p) = &self.publisher {
            rows.push(p.data.clone());
        }
        if rows.is_empty() {
            rows.push(vec![0.0; d]);
        }
        let n = rows.len();
        let data = rows.concat();
        Tensor { shape: vec![n, d], data, requires_grad: false }
    }
}

/// Like-weighted comment average with weights proportional to
/// `log(1 + likes) + 1`, normalized to sum 1. Bounds the influence of viral
/// comments. An empty comment list yields the zero vector.
pub fn aggregate_comments(comments: &[Tensor], like_counts: &[u64], d: usize) -> Tensor {
    assert_eq!(comments.len(), like_counts.len(), "one like count per comment");
    if comments.is_empty() {
        return Tensor::zeros(vec![1, d]);
    }
    let raw: Vec<f64> = like_counts.iter().map(|&l| (1.0 + l as f64).ln() + 1.0).collect();
    let sum: f64 = raw.iter().sum();
    let mut out = vec![0.0; d];
    for (c, w) in comments.iter().zip(&raw) {
        debug_assert_eq!(c.numel(), d);
        for (o, v) in out.iter_mut().zip(&c.data) {
            *o += v * (w / sum);
        }
    }
    Tensor { shape: vec![1, d], data: out, requires_grad: false }
}

/// One level's fused feature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionFeatures {
    pub level: FusionLevel,
    /// `[1, d_f]`
    pub feature: Tensor,
}

/// Softmax node ids recorded during a forward pass, for inspecting
/// attention rows, adaptive image weights, and the stage-III gate.
#[derive(Default)]
pub struct Probes {
    pub attention: Vec<NodeId>,
    pub gates: Vec<NodeId>,
}

/// Stage-I outputs.
pub struct Level1Out {
    pub enhanced_text: NodeId,
    pub enhanced_audio: NodeId,
    pub f1: NodeId,
}

/// Stage-II outputs.
pub struct Level2Out {
    pub further_text: NodeId,
    pub further_audio: NodeId,
    pub fused_image: NodeId,
    pub f2: NodeId,
}

/// The hierarchical fusion model. `max_level` controls how many stages are
/// constructed; a truncated model (used by ablations) owns only the
/// parameter groups of its stages plus the head.
pub struct HierFusionModel {
    pub config: ModelConfig,
    pub max_level: usize,
    groups: Vec<ParameterGroup>,
}

impl HierFusionModel {
    pub fn new(config: ModelConfig, max_level: usize, init_seed: u64) -> Result<Self> {
        config.validate()?;
        if !(1..=3).contains(&max_level) {
            return Err(Error::InvalidConfig(format!("max_level {max_level} outside 1..=3")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let d = config.d;
        let d_f = config.d_f;
        let dt = d_f / HEAD_TOKENS;

        let mut groups = Vec::new();

        let mut theta1 = ParameterGroup::new(GroupId::Theta1);
        theta1.push("proj_text", xavier(&mut rng, d, d));
        theta1.push("proj_audio", xavier(&mut rng, d, d));
        push_attention(&mut theta1, &mut rng, "ta", d);
        push_attention(&mut theta1, &mut rng, "at", d);
        theta1.push("fuse_w", xavier(&mut rng, 2 * d, d_f));
        theta1.push("fuse_b", Tensor::zeros(vec![1, d_f]));
        groups.push(theta1);

        if max_level >= 2 {
            let mut theta2 = ParameterGroup::new(GroupId::Theta2);
            theta2.push("proj_image", xavier(&mut rng, d, d));
            push_attention(&mut theta2, &mut rng, "vt", d);
            push_attention(&mut theta2, &mut rng, "va", d);
            push_attention(&mut theta2, &mut rng, "tv", d);
            push_attention(&mut theta2, &mut rng, "av", d);
            theta2.push("score_text", xavier(&mut rng, d, 1));
            theta2.push("score_audio", xavier(&mut rng, d, 1));
            theta2.push("fuse_w", xavier(&mut rng, 3 * d, d_f));
            theta2.push("fuse_b", Tensor::zeros(vec![1, d_f]));
            groups.push(theta2);
        }

        if max_level >= 3 {
            // stage III refines F² directly, so it works at the fused width
            let mut theta3 = ParameterGroup::new(GroupId::Theta3);
            theta3.push("proj_extra", xavier(&mut rng, d, d_f));
            push_attention(&mut theta3, &mut rng, "me", d_f);
            theta3.push("gate_main", xavier(&mut rng, d_f, 1));
            theta3.push("gate_extra", xavier(&mut rng, d_f, 1));
            theta3.push("fuse_w", xavier(&mut rng, d_f, d_f));
            theta3.push("fuse_b", Tensor::zeros(vec![1, d_f]));
            groups.push(theta3);
        }

        let mut head = ParameterGroup::new(GroupId::ThetaCls);
        push_attention(&mut head, &mut rng, "self", dt);
        head.push("readout_w", xavier(&mut rng, dt, config.num_classes));
        head.push("readout_b", Tensor::zeros(vec![1, config.num_classes]));
        groups.push(head);

        let model = Self { config, max_level, groups };
        model.assert_partition();
        Ok(model)
    }

    /// Rebuilds a model from config plus explicit parameter groups (used by
    /// checkpoint loading and test probes).
    pub fn from_groups(
        config: ModelConfig,
        max_level: usize,
        groups: Vec<ParameterGroup>,
    ) -> Result<Self> {
        config.validate()?;
        let model = Self { config, max_level, groups };
        model.assert_partition();
        Ok(model)
    }

    /// Group ids are unique and every group is non-empty; together with
    /// construction this guarantees each trainable tensor belongs to exactly
    /// one group.
    fn assert_partition(&self) {
        let mut seen = Vec::new();
        for g in &self.groups {
            assert!(!seen.contains(&g.id), "duplicate parameter group {}", g.id);
            assert!(g.dim() > 0, "empty parameter group {}", g.id);
            seen.push(g.id);
        }
    }

    pub fn groups(&self) -> &[ParameterGroup] {
        &self.groups
    }

    pub fn group(&self, id: GroupId) -> &ParameterGroup {
        self.groups.iter().find(|g| g.id == id).expect("group not built")
    }

    pub fn group_mut(&mut self, id: GroupId) -> &mut ParameterGroup {
        self.groups.iter_mut().find(|g| g.id == id).expect("group not built")
    }

    pub fn has_group(&self, id: GroupId) -> bool {
        self.groups.iter().any(|g| g.id == id)
    }

    /// Fusion levels the model actually builds, bottom-up.
    pub fn fusion_levels(&self) -> Vec<FusionLevel> {
        (1..=self.max_level).map(|i| FusionLevel::from_index(i).unwrap()).collect()
    }

    /// Registers all groups on a fresh tape.
    pub fn bind(&self, tape: &mut Tape) -> ParamBinding {
        let refs: Vec<&ParameterGroup> = self.groups.iter().collect();
        ParamBinding::register(tape, &refs)
    }

    /// Multi-head cross-attention: `q_in` rows attend over `kv_in` rows.
    /// Returns `[L_q, dim]`; records each head's attention rows in `probes`.
    #[allow(clippy::too_many_arguments)]
    fn cross_attention(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        group: GroupId,
        prefix: &str,
        q_in: NodeId,
        kv_in: NodeId,
        dim: usize,
        heads: usize,
        probes: &mut Probes,
    ) -> NodeId {
        let wq = binding.named(group, &format!("{prefix}_wq"));
        let wk = binding.named(group, &format!("{prefix}_wk"));
        let wv = binding.named(group, &format!("{prefix}_wv"));
        let wo = binding.named(group, &format!("{prefix}_wo"));
        let q = tape.matmul(q_in, wq);
        let k = tape.matmul(kv_in, wk);
        let v = tape.matmul(kv_in, wv);
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scaled);
            probes.attention.push(attn);
            outs.push(tape.matmul(attn, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        tape.matmul(cat, wo)
    }

    /// Stage I: two-stream cross-attention between text and audio. `F¹` is
    /// the concatenation of the two pooled enhanced streams, projected.
    pub fn fuse_level1(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        text: NodeId,
        audio: NodeId,
        probes: &mut Probes,
    ) -> Level1Out {
        let g = GroupId::Theta1;
        let (d, h) = (self.config.d, self.config.heads);
        assert!(tape.value(text).rows() > 0 && tape.value(audio).rows() > 0, "empty sequence");
        let x = {
            let p = binding.named(g, "proj_text");
            tape.matmul(text, p)
        };
        let a = {
            let p = binding.named(g, "proj_audio");
            tape.matmul(audio, p)
        };
        let ta = self.cross_attention(tape, binding, g, "ta", x, a, d, h, probes);
        let enhanced_text = tape.add(x, ta);
        let at = self.cross_attention(tape, binding, g, "at", a, x, d, h, probes);
        let enhanced_audio = tape.add(a, at);

        let pt = tape.mean_rows(enhanced_text);
        let pa = tape.mean_rows(enhanced_audio);
        let cat = tape.concat_cols(&[pt, pa]);
        let w = binding.named(g, "fuse_w");
        let b = binding.named(g, "fuse_b");
        let proj = tape.matmul(cat, w);
        let f1 = tape.add_bias_row(proj, b);
        Level1Out { enhanced_text, enhanced_audio, f1 }
    }

    /// Stage II: images cross-attend with both enhanced streams; a softmax
    /// over two score readouts adaptively combines the two image
    /// enhancements into one fused image feature.
    pub fn fuse_level2(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        enhanced_text: NodeId,
        enhanced_audio: NodeId,
        images: NodeId,
        probes: &mut Probes,
    ) -> Level2Out {
        let g = GroupId::Theta2;
        let (d, h) = (self.config.d, self.config.heads);
        assert!(tape.value(images).rows() > 0, "empty image set");
        let v = {
            let p = binding.named(g, "proj_image");
            tape.matmul(images, p)
        };
        let vt = self.cross_attention(tape, binding, g, "vt", v, enhanced_text, d, h, probes);
        let img_t = tape.add(v, vt);
        let va = self.cross_attention(tape, binding, g, "va", v, enhanced_audio, d, h, probes);
        let img_a = tape.add(v, va);
        let tv = self.cross_attention(tape, binding, g, "tv", enhanced_text, v, d, h, probes);
        let further_text = tape.add(enhanced_text, tv);
        let av = self.cross_attention(tape, binding, g, "av", enhanced_audio, v, d, h, probes);
        let further_audio = tape.add(enhanced_audio, av);

        // adaptive weights over the two image enhancements
        let pool_t = tape.mean_rows(img_t);
        let pool_a = tape.mean_rows(img_a);
        let st = {
            let u = binding.named(g, "score_text");
            tape.matmul(pool_t, u)
        };
        let sa = {
            let u = binding.named(g, "score_audio");
            tape.matmul(pool_a, u)
        };
        let scores = tape.concat_cols(&[st, sa]);
        let weights = tape.softmax_rows(scores);
        probes.gates.push(weights);
        let wt = tape.slice_cols(weights, 0, 1);
        let wa = tape.slice_cols(weights, 1, 1);
        let side_t = tape.scale_by_scalar(pool_t, wt);
        let side_a = tape.scale_by_scalar(pool_a, wa);
        let fused_image = tape.add(side_t, side_a);

        let pt = tape.mean_rows(further_text);
        let pa = tape.mean_rows(further_audio);
        let cat = tape.concat_cols(&[pt, pa, fused_image]);
        let w = binding.named(g, "fuse_w");
        let b = binding.named(g, "fuse_b");
        let proj = tape.matmul(cat, w);
        let f2 = tape.add_bias_row(proj, b);
        Level2Out { further_text, further_audio, fused_image, f2 }
    }

    /// Stage III: gated cross-attention over the extra-information set,
    /// refining the level-2 fusion feature. The softmax gate keeps the main
    /// pathway strictly positive, so auxiliary features can never fully
    /// replace the main features.
    pub fn fuse_level3(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        level2: &Level2Out,
        extra: NodeId,
        probes: &mut Probes,
    ) -> NodeId {
        let g = GroupId::Theta3;
        let (d_f, h) = (self.config.d_f, self.config.heads);
        let main = level2.f2;
        let e = {
            let p = binding.named(g, "proj_extra");
            tape.matmul(extra, p)
        };
        let ext_att = self.cross_attention(tape, binding, g, "me", main, e, d_f, h, probes);

        let gm = {
            let w = binding.named(g, "gate_main");
            tape.matmul(main, w)
        };
        let ge = {
            let w = binding.named(g, "gate_extra");
            tape.matmul(ext_att, w)
        };
        let gate_logits = tape.concat_cols(&[gm, ge]);
        let gate = tape.softmax_rows(gate_logits);
        probes.gates.push(gate);
        let w_main = tape.slice_cols(gate, 0, 1);
        let w_ext = tape.slice_cols(gate, 1, 1);
        let main_side = tape.scale_by_scalar(main, w_main);
        let ext_side = tape.scale_by_scalar(ext_att, w_ext);
        let fused = tape.add(main_side, ext_side);

        let w = binding.named(g, "fuse_w");
        let b = binding.named(g, "fuse_b");
        let proj = tape.matmul(fused, w);
        tape.add_bias_row(proj, b)
    }

    /// Shared classification head: the fused feature is split into tokens,
    /// passed through one self-attention block with a residual, pooled, and
    /// read out linearly.
    pub fn classify(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        feature: NodeId,
        probes: &mut Probes,
    ) -> NodeId {
        let g = GroupId::ThetaCls;
        let dt = self.config.d_f / HEAD_TOKENS;
        let tokens = tape.reshape(feature, vec![HEAD_TOKENS, dt]);
        let att = self.cross_attention(tape, binding, g, "self", tokens, tokens, dt, 1, probes);
        let res = tape.add(att, tokens);
        let pooled = tape.mean_rows(res);
        let w = binding.named(g, "readout_w");
        let b = binding.named(g, "readout_b");
        let proj = tape.matmul(pooled, w);
        tape.add_bias_row(proj, b)
    }

    /// Runs one sample forward through stages `1..=level`, returning the
    /// fused feature node per level.
    pub fn forward_sample(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        emb: &ModalityEmbeddings,
        level: usize,
        probes: &mut Probes,
    ) -> Result<Vec<NodeId>> {
        emb.validate(self.config.d)?;
        assert!(level >= 1 && level <= self.max_level);
        let text = tape.leaf(emb.text.clone());
        let audio = tape.leaf(emb.audio.clone());
        let l1 = self.fuse_level1(tape, binding, text, audio, probes);
        let mut feats = vec![l1.f1];
        if level >= 2 {
            let images = tape.leaf(emb.images.clone());
            let l2 = self.fuse_level2(
                tape,
                binding,
                l1.enhanced_text,
                l1.enhanced_audio,
                images,
                probes,
            );
            if level >= 3 {
                let extra = tape.leaf(emb.extra_set(self.config.d));
                let f3 = self.fuse_level3(tape, binding, &l2, extra, probes);
                feats.push(l2.f2);
                feats.push(f3);
            } else {
                feats.push(l2.f2);
            }
        }
        Ok(feats)
    }

    /// Mean cross-entropy of one level over a labeled batch, recorded on the
    /// given tape. Returns the loss node and the stacked logits node.
    pub fn batch_level_loss(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        batch: &[(ModalityEmbeddings, usize)],
        level: usize,
        probes: &mut Probes,
    ) -> Result<(NodeId, NodeId)> {
        assert!(!batch.is_empty(), "empty batch");
        let mut logit_rows = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for (emb, label) in batch {
            let feats = self.forward_sample(tape, binding, emb, level, probes)?;
            let f = feats[level - 1];
            logit_rows.push(self.classify(tape, binding, f, probes));
            labels.push(*label);
        }
        let logits = stack_rows(tape, &logit_rows);
        let loss = tape.cross_entropy_logits(logits, &labels);
        if !tape.value(loss).all_finite() {
            return Err(Error::NonFinite(format!("level-{level} loss")));
        }
        Ok((loss, logits))
    }

    /// Per-level mean cross-entropy losses for a batch; the last entry is
    /// the all-modal loss. Evaluation only — gradients are not kept.
    pub fn level_losses(&self, batch: &[(ModalityEmbeddings, usize)]) -> Result<Vec<f64>> {
        (1..=self.max_level).map(|level| self.level_loss_value(batch, level)).collect()
    }

    /// One level's mean cross-entropy on a batch, evaluation only.
    pub fn level_loss_value(
        &self,
        batch: &[(ModalityEmbeddings, usize)],
        level: usize,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape);
        let mut probes = Probes::default();
        let (loss, _) = self.batch_level_loss(&mut tape, &binding, batch, level, &mut probes)?;
        Ok(tape.value(loss).data[0])
    }

    /// Evaluation-time fused features for one sample.
    pub fn features(&self, emb: &ModalityEmbeddings) -> Result<Vec<FusionFeatures>> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape);
        let mut probes = Probes::default();
        let feats = self.forward_sample(&mut tape, &binding, emb, self.max_level, &mut probes)?;
        Ok(feats
            .into_iter()
            .enumerate()
            .map(|(i, id)| FusionFeatures {
                level: FusionLevel::from_index(i + 1).unwrap(),
                feature: tape.value(id).clone(),
            })
            .collect())
    }

    /// Predicted class per level for one sample (argmax of the head logits).
    pub fn predict_levels(&self, emb: &ModalityEmbeddings) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape);
        let mut probes = Probes::default();
        let feats = self.forward_sample(&mut tape, &binding, emb, self.max_level, &mut probes)?;
        let mut out = Vec::with_capacity(feats.len());
        for f in feats {
            let logits = self.classify(&mut tape, &binding, f, &mut probes);
            out.push(argmax(&tape.value(logits).data));
        }
        Ok(out)
    }

    /// Loss value and gradient of one level loss with respect to every
    /// group, over one batch. One fresh tape per call.
    pub fn level_loss_gradients(
        &self,
        batch: &[(ModalityEmbeddings, usize)],
        level: usize,
    ) -> Result<(f64, std::collections::BTreeMap<GroupId, GradientVector>)> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape);
        let mut probes = Probes::default();
        let (loss, _) = self.batch_level_loss(&mut tape, &binding, batch, level, &mut probes)?;
        let value = tape.value(loss).data[0];
        let grads = backward(&tape, loss, &binding)?;
        Ok((value, grads))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Stacks `[1, n]` rows into `[m, n]`.
fn stack_rows(tape: &mut Tape, rows: &[NodeId]) -> NodeId {
    let n = tape.value(rows[0]).cols();
    let cat = if rows.len() == 1 { rows[0] } else { tape.concat_cols(rows) };
    tape.reshape(cat, vec![rows.len(), n])
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-s..s)).collect();
    Tensor { shape: vec![rows, cols], data, requires_grad: false }
}

fn push_attention(group: &mut ParameterGroup, rng: &mut ChaCha8Rng, prefix: &str, d: usize) {
    for suffix in ["wq", "wk", "wv", "wo"] {
        group.push(format!("{prefix}_{suffix}"), xavier(rng, d, d));
    }
}
