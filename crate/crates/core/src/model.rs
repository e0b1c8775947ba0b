//! Sync classifiers: early-fusion block encoder, uniform / temporal /
//! spatio-temporal pooling heads, and the shared two-layer decision head.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Graph, Var};
use crate::data::{blockify, AvClip};
use crate::error::{Error, Result};
use crate::ops::{Conv3dGeometry, DropoutMode};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Visual backbone: kernel 3x3x3, zero padding 1, strides per layer.
pub const VISUAL_STRIDES: [[usize; 3]; 3] = [[1, 2, 2], [2, 2, 2], [2, 2, 2]];
pub const VISUAL_KERNEL: [usize; 3] = [3, 3, 3];
pub const VISUAL_PAD: [usize; 3] = [1, 1, 1];
/// Width of the first visual layer; the last two use `c_visual`.
pub const VISUAL_STEM_WIDTH: usize = 8;

/// Audio backbone: 1-D kernels of 8 taps with (stride, pad) per layer.
pub const AUDIO_KERNEL: usize = 8;
pub const AUDIO_LAYERS: [(usize, usize); 3] = [(4, 2), (4, 2), (8, 0)];

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Blocks per clip (N).
    pub n_blocks: usize,
    /// Frames per block (T_in).
    pub frames_per_block: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub frame_channels: usize,
    /// Audio samples per block (L_a).
    pub audio_per_block: usize,
    pub feat_h: usize,
    pub feat_w: usize,
    pub feat_t: usize,
    pub c_visual: usize,
    pub c_audio: usize,
    pub joint_layers: usize,
    pub attn_hidden_temporal: usize,
    pub attn_hidden_spatiotemporal: usize,
    pub decision_hidden: usize,
    pub dropout_t: f64,
    pub dropout_st: f64,
    /// Normalize spatio-temporal confidences within each block instead of
    /// jointly over the whole clip.
    pub st_softmax_per_block: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            n_blocks: 5,
            frames_per_block: 8,
            frame_height: 32,
            frame_width: 32,
            frame_channels: 1,
            audio_per_block: 256,
            feat_h: 4,
            feat_w: 4,
            feat_t: 2,
            c_visual: 12,
            c_audio: 4,
            joint_layers: 5,
            attn_hidden_temporal: 128,
            attn_hidden_spatiotemporal: 16,
            decision_hidden: 512,
            dropout_t: 0.5,
            dropout_st: 0.4,
            st_softmax_per_block: false,
        }
    }
}

impl FusionConfig {
    /// Joint channel count `C = C_v + C_a`.
    pub fn channels(&self) -> usize {
        self.c_visual + self.c_audio
    }

    pub fn visual_block_shape(&self) -> [usize; 4] {
        [
            self.frames_per_block,
            self.frame_height,
            self.frame_width,
            self.frame_channels,
        ]
    }

    /// Spatio-temporal cells per block, `H·W·T`.
    pub fn cells_per_block(&self) -> usize {
        self.feat_h * self.feat_w * self.feat_t
    }

    /// Checks that a clip has exactly `n_blocks` whole blocks of this geometry.
    pub fn check_clip(&self, clip: &AvClip) -> Result<()> {
        let visual = [
            self.n_blocks * self.frames_per_block,
            self.frame_height,
            self.frame_width,
            self.frame_channels,
        ];
        let audio = [self.n_blocks * self.audio_per_block, 1];
        if clip.visual.shape() != visual || clip.audio.shape() != audio {
            return Err(Error::dim(format!(
                "clip is visual {:?} / audio {:?}, expected {visual:?} / {audio:?}",
                clip.visual.shape(),
                clip.audio.shape()
            )));
        }
        if clip.n_blocks() != self.n_blocks {
            return Err(Error::dim(format!(
                "clip flags {} blocks, expected {}",
                clip.n_blocks(),
                self.n_blocks
            )));
        }
        Ok(())
    }

    /// Checks extents and that the fixed backbones land exactly on the
    /// configured feature geometry.
    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("n_blocks", self.n_blocks),
            ("frames_per_block", self.frames_per_block),
            ("frame_height", self.frame_height),
            ("frame_width", self.frame_width),
            ("frame_channels", self.frame_channels),
            ("audio_per_block", self.audio_per_block),
            ("feat_h", self.feat_h),
            ("feat_w", self.feat_w),
            ("feat_t", self.feat_t),
            ("c_visual", self.c_visual),
            ("c_audio", self.c_audio),
            ("attn_hidden_temporal", self.attn_hidden_temporal),
            ("attn_hidden_spatiotemporal", self.attn_hidden_spatiotemporal),
            ("decision_hidden", self.decision_hidden),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        for (name, p) in [("dropout_t", self.dropout_t), ("dropout_st", self.dropout_st)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0,1), got {p}")));
            }
        }
        let visual = self.visual_output_extents()?;
        if visual != [self.feat_t, self.feat_h, self.feat_w] {
            return Err(Error::Config(format!(
                "visual backbone maps {}x{}x{} frames to T,H,W = {visual:?}, \
                 but feat_t/feat_h/feat_w = {}/{}/{}",
                self.frames_per_block,
                self.frame_height,
                self.frame_width,
                self.feat_t,
                self.feat_h,
                self.feat_w
            )));
        }
        let audio = self.audio_output_steps()?;
        if audio != self.feat_t {
            return Err(Error::Config(format!(
                "audio backbone maps {} samples to {audio} steps, but feat_t = {}",
                self.audio_per_block, self.feat_t
            )));
        }
        Ok(())
    }

    fn visual_output_extents(&self) -> Result<[usize; 3]> {
        let mut shape = self.visual_block_shape();
        let widths = [VISUAL_STEM_WIDTH, self.c_visual, self.c_visual];
        for (stride, width) in VISUAL_STRIDES.iter().zip(widths) {
            let k = [VISUAL_KERNEL[0], VISUAL_KERNEL[1], VISUAL_KERNEL[2], shape[3], width];
            let g = Conv3dGeometry::new(&shape, &k, *stride, VISUAL_PAD)
                .map_err(|e| Error::Config(format!("visual backbone: {e}")))?;
            shape = g.output_shape();
        }
        Ok([shape[0], shape[1], shape[2]])
    }

    fn audio_output_steps(&self) -> Result<usize> {
        let mut shape = [self.audio_per_block, 1, 1, 1];
        for (stride, pad) in AUDIO_LAYERS {
            let k = [AUDIO_KERNEL, 1, 1, shape[3], self.c_audio];
            let g = Conv3dGeometry::new(&shape, &k, [stride, 1, 1], [pad, 0, 0])
                .map_err(|e| Error::Config(format!("audio backbone: {e}")))?;
            shape = g.output_shape();
        }
        Ok(shape[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Uniform,
    Temporal,
    SpatioTemporal,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Uniform, Variant::Temporal, Variant::SpatioTemporal];

    pub fn code(self) -> u8 {
        match self {
            Variant::Uniform => 0,
            Variant::Temporal => 1,
            Variant::SpatioTemporal => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Uniform => "uniform",
            Variant::Temporal => "temporal",
            Variant::SpatioTemporal => "spatiotemporal",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model variant {s:?} (expected uniform, temporal or spatiotemporal)"
                ))
            })
    }
}

/// Whether dropout is active, and the generator that draws its masks.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut Rng),
}

impl Mode<'_> {
    fn dropout_args(&mut self) -> (DropoutMode, Option<&mut Rng>) {
        match self {
            Mode::Eval => (DropoutMode::Eval, None),
            Mode::Train(rng) => (DropoutMode::Train, Some(&mut **rng)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Temporal,
    SpatioTemporal,
}

/// Normalized attention weights with the raw confidences that produced them.
///
/// Temporal maps have shape `[N]`; spatio-temporal maps `[N, T, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub kind: AttentionKind,
    pub weights: Tensor,
    pub confidences: Tensor,
}

impl AttentionMap {
    /// Total weight per block.
    pub fn block_mass(&self) -> Vec<f64> {
        let n = self.weights.shape()[0];
        let per = self.weights.len() / n;
        self.weights
            .data()
            .chunks_exact(per)
            .map(|c| c.iter().sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    visual: Vec<Affine>,
    audio: Vec<Affine>,
    joint: Vec<Affine>,
    attention: Option<[Affine; 2]>,
    decision: [Affine; 2],
}

#[derive(Debug, Clone, Copy)]
struct BoundAffine {
    weight: Var,
    bias: Var,
}

/// Parameters bound as leaves on one graph.
pub struct Bound {
    visual: Vec<BoundAffine>,
    audio: Vec<BoundAffine>,
    joint: Vec<BoundAffine>,
    attention: Option<[BoundAffine; 2]>,
    decision: [BoundAffine; 2],
}

/// Graph handles for one attention-pooled forward pass.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub kind: AttentionKind,
    /// Flat weights in feature-cell order (`[N]` or `[N·H·W·T]`).
    pub weights: Var,
    pub confidences: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ClipForward {
    pub logits: Var,
    pub pooled: Var,
    pub attention: Option<AttentionVars>,
}

/// Result of an eval-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: [f64; 2],
    pub attention: Option<AttentionMap>,
}

impl Prediction {
    /// Argmax with ties broken toward class 0.
    pub fn class(&self) -> usize {
        usize::from(self.logits[1] > self.logits[0])
    }

    /// Softmax probability of class 1 (sync).
    pub fn sync_score(&self) -> f64 {
        let d = self.logits[0] - self.logits[1];
        1.0 / (1.0 + d.exp())
    }
}

#[derive(Debug, Clone)]
pub struct SyncModel {
    variant: Variant,
    config: FusionConfig,
    seed: u64,
    store: ParamStore,
    layout: Layout,
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-limit, limit)).collect();
    Tensor::new(shape, data).expect("finite init")
}

impl SyncModel {
    /// Builds a freshly initialized model: Glorot-uniform weights drawn in
    /// parameter order from `seed`, zero biases.
    pub fn new(variant: Variant, config: FusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::with_binary32_storage();
        let mut add = |store: &mut ParamStore,
                       name: &str,
                       wshape: &[usize],
                       fan_in: usize,
                       fan_out: usize|
         -> Result<Affine> {
            let cout = *wshape.last().expect("weight rank");
            let weight = store.insert(
                &format!("{name}.weight"),
                glorot(wshape, fan_in, fan_out, &mut rng),
            )?;
            let bias = store.insert(&format!("{name}.bias"), Tensor::zeros(&[cout]))?;
            Ok(Affine { weight, bias })
        };

        let kvol: usize = VISUAL_KERNEL.iter().product();
        let mut visual = Vec::new();
        let mut cin = config.frame_channels;
        for (i, cout) in [VISUAL_STEM_WIDTH, config.c_visual, config.c_visual]
            .into_iter()
            .enumerate()
        {
            let [kt, kh, kw] = VISUAL_KERNEL;
            visual.push(add(
                &mut store,
                &format!("visual.conv{}", i + 1),
                &[kt, kh, kw, cin, cout],
                kvol * cin,
                kvol * cout,
            )?);
            cin = cout;
        }

        let mut audio = Vec::new();
        let mut cin = 1;
        for i in 0..AUDIO_LAYERS.len() {
            let cout = config.c_audio;
            audio.push(add(
                &mut store,
                &format!("audio.conv{}", i + 1),
                &[AUDIO_KERNEL, 1, 1, cin, cout],
                AUDIO_KERNEL * cin,
                AUDIO_KERNEL * cout,
            )?);
            cin = cout;
        }

        let c = config.channels();
        let mut joint = Vec::new();
        for i in 0..config.joint_layers {
            joint.push(add(&mut store, &format!("joint.{}", i + 1), &[c, c], c, c)?);
        }

        let attention = match variant {
            Variant::Uniform => None,
            Variant::Temporal | Variant::SpatioTemporal => {
                let hidden = if variant == Variant::Temporal {
                    config.attn_hidden_temporal
                } else {
                    config.attn_hidden_spatiotemporal
                };
                Some([
                    add(&mut store, "attention.hidden", &[c, hidden], c, hidden)?,
                    add(&mut store, "attention.score", &[hidden, 1], hidden, 1)?,
                ])
            }
        };

        let hidden = config.decision_hidden;
        let decision = [
            add(&mut store, "decision.hidden", &[c, hidden], c, hidden)?,
            add(&mut store, "decision.output", &[hidden, 2], hidden, 2)?,
        ];

        Ok(SyncModel {
            variant,
            config,
            seed,
            store,
            layout: Layout {
                visual,
                audio,
                joint,
                attention,
                decision,
            },
        })
    }

    /// Reassembles a model around an existing parameter set, checking that
    /// every expected parameter is present with the right shape.
    pub fn from_store(
        variant: Variant,
        config: FusionConfig,
        seed: u64,
        store: ParamStore,
    ) -> Result<Self> {
        let reference = SyncModel::new(variant, config, seed)?;
        if reference.store.len() != store.len() {
            return Err(Error::Contract(format!(
                "{variant} model has {} parameters, got {}",
                reference.store.len(),
                store.len()
            )));
        }
        for (want, got) in reference.store.iter().zip(store.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Contract(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        Ok(SyncModel { store, ..reference })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Sets every attention-head weight and bias to zero.
    pub fn zero_attention_head(&mut self) -> Result<()> {
        if let Some(head) = self.layout.attention {
            for a in head {
                for id in [a.weight, a.bias] {
                    let shape = self.store.value(id).shape().to_vec();
                    self.store.set_value(id, Tensor::zeros(&shape))?;
                }
            }
        }
        Ok(())
    }

    /// Copies every parameter that `other` also has (same name and shape).
    pub fn copy_shared_params(&mut self, other: &SyncModel) -> Result<usize> {
        let mut copied = 0;
        for p in other.store.iter() {
            if let Some(id) = self.store.id(&p.name) {
                if self.store.value(id).shape() == p.value.shape() {
                    self.store.set_value(id, p.value.clone())?;
                    copied += 1;
                }
            }
        }
        Ok(copied)
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        self.bind_with(g, &self.store)
    }

    /// Binds parameters from `store`, which must share this model's layout
    /// (e.g. a perturbed copy of [`Self::store`]).
    pub fn bind_with(&self, g: &mut Graph, store: &ParamStore) -> Bound {
        let mut b = |a: &Affine| BoundAffine {
            weight: g.param(store, a.weight),
            bias: g.param(store, a.bias),
        };
        let visual = self.layout.visual.iter().map(&mut b).collect();
        let audio = self.layout.audio.iter().map(&mut b).collect();
        let joint = self.layout.joint.iter().map(&mut b).collect();
        let attention = self.layout.attention.as_ref().map(|[h, s]| [b(h), b(s)]);
        let decision = [b(&self.layout.decision[0]), b(&self.layout.decision[1])];
        Bound {
            visual,
            audio,
            joint,
            attention,
            decision,
        }
    }

    /// `[T_in,H_in,W_in,channels]` frames to an `[H,W,T,C_v]` feature.
    pub fn extract_visual(&self, g: &mut Graph, b: &Bound, frames: Var) -> Result<Var> {
        let want = self.config.visual_block_shape();
        if g.value(frames).shape() != want {
            return Err(Error::dim(format!(
                "visual block must be {want:?}, got {:?}",
                g.value(frames).shape()
            )));
        }
        let mut x = frames;
        for (layer, stride) in b.visual.iter().zip(VISUAL_STRIDES) {
            x = g.conv3d(x, layer.weight, layer.bias, stride, VISUAL_PAD)?;
            x = g.relu(x);
        }
        g.permute(x, &[1, 2, 0, 3])
    }

    /// `[L_a, 1]` samples to a `[T, C_a]` feature.
    pub fn extract_audio(&self, g: &mut Graph, b: &Bound, samples: Var) -> Result<Var> {
        self.audio_stack(g, b, samples, true)
    }

    pub(crate) fn audio_stack(
        &self,
        g: &mut Graph,
        b: &Bound,
        samples: Var,
        activation: bool,
    ) -> Result<Var> {
        let l = self.config.audio_per_block;
        if g.value(samples).shape() != [l, 1] {
            return Err(Error::dim(format!(
                "audio block must be [{l}, 1], got {:?}",
                g.value(samples).shape()
            )));
        }
        let mut x = g.reshape(samples, &[l, 1, 1, 1])?;
        for (layer, (stride, pad)) in b.audio.iter().zip(AUDIO_LAYERS) {
            x = g.conv3d(x, layer.weight, layer.bias, [stride, 1, 1], [pad, 0, 0])?;
            if activation {
                x = g.relu(x);
            }
        }
        let t = g.value(x).shape()[0];
        g.reshape(x, &[t, self.config.c_audio])
    }

    /// Replicates audio over the spatial grid, concatenates on channels, then
    /// applies the joint pointwise layers.
    pub fn fuse(&self, g: &mut Graph, b: &Bound, visual: Var, audio: Var) -> Result<Var> {
        let mut x = g.tile_concat(visual, audio)?;
        for layer in &b.joint {
            x = g.pointwise(x, layer.weight, layer.bias)?;
            x = g.relu(x);
        }
        Ok(x)
    }

    /// Encodes one block into its `[H,W,T,C]` joint feature.
    pub fn encode_block(
        &self,
        g: &mut Graph,
        b: &Bound,
        frames: Tensor,
        samples: Tensor,
    ) -> Result<Var> {
        let fv = g.input(frames);
        let fa = g.input(samples);
        let v = self.extract_visual(g, b, fv)?;
        let a = self.extract_audio(g, b, fa)?;
        self.fuse(g, b, v, a)
    }

    fn check_blocks(&self, g: &Graph, blocks: &[Var]) -> Result<()> {
        if blocks.is_empty() {
            return Err(Error::EmptyClip);
        }
        let c = &self.config;
        let want = [c.feat_h, c.feat_w, c.feat_t, c.channels()];
        for (i, &v) in blocks.iter().enumerate() {
            if g.value(v).shape() != want {
                return Err(Error::dim(format!(
                    "block feature {i} has shape {:?}, expected {want:?}",
                    g.value(v).shape()
                )));
            }
        }
        Ok(())
    }

    /// Two pointwise layers (relu and dropout between) giving one confidence
    /// per cell of `x`, returned with the trailing unit axis dropped.
    fn score(&self, g: &mut Graph, head: &[BoundAffine; 2], x: Var, p: f64, mode: &mut Mode<'_>) -> Result<Var> {
        let mut h = g.pointwise(x, head[0].weight, head[0].bias)?;
        h = g.relu(h);
        let (dm, rng) = mode.dropout_args();
        h = g.dropout(h, p, dm, rng)?;
        let s = g.pointwise(h, head[1].weight, head[1].bias)?;
        let shape = g.value(s).shape();
        let flat = &shape[..shape.len() - 1];
        let flat = flat.to_vec();
        g.reshape(s, &flat)
    }

    fn head(&self, b: &Bound) -> Result<[BoundAffine; 2]> {
        b.attention
            .ok_or_else(|| Error::Contract(format!("{} model has no attention head", self.variant)))
    }

    /// Block-level soft attention over global-average-pooled features.
    pub fn attend_temporal(
        &self,
        g: &mut Graph,
        b: &Bound,
        blocks: &[Var],
        mode: &mut Mode<'_>,
    ) -> Result<(AttentionVars, Var)> {
        self.check_blocks(g, blocks)?;
        let head = self.head(b)?;
        let gaps = blocks
            .iter()
            .map(|&f| g.global_avg_pool(f))
            .collect::<Result<Vec<_>>>()?;
        let stacked = g.stack(&gaps)?;
        let conf = self.score(g, &head, stacked, self.config.dropout_t, mode)?;
        let weights = g.softmax(conf)?;
        let pooled = g.weighted_sum(stacked, weights)?;
        Ok((
            AttentionVars {
                kind: AttentionKind::Temporal,
                weights,
                confidences: conf,
            },
            pooled,
        ))
    }

    /// Cell-level soft attention over every `(block, t, h, w)` cell.
    pub fn attend_spatiotemporal(
        &self,
        g: &mut Graph,
        b: &Bound,
        blocks: &[Var],
        mode: &mut Mode<'_>,
    ) -> Result<(AttentionVars, Var)> {
        self.check_blocks(g, blocks)?;
        let head = self.head(b)?;
        let n = blocks.len();
        let c = self.config.channels();
        let cells = self.config.cells_per_block();
        let stacked = g.stack(blocks)?;
        let rows = g.reshape(stacked, &[n * cells, c])?;
        let conf = self.score(g, &head, rows, self.config.dropout_st, mode)?;
        let weights = if self.config.st_softmax_per_block {
            let per_block = g.reshape(conf, &[n, cells])?;
            let w = g.softmax(per_block)?;
            let w = g.scale(w, 1.0 / n as f64);
            g.reshape(w, &[n * cells])?
        } else {
            g.softmax(conf)?
        };
        let pooled = g.weighted_sum(rows, weights)?;
        Ok((
            AttentionVars {
                kind: AttentionKind::SpatioTemporal,
                weights,
                confidences: conf,
            },
            pooled,
        ))
    }

    /// Mean of the per-block global-average-pooled features.
    pub fn pool_uniform(&self, g: &mut Graph, blocks: &[Var]) -> Result<Var> {
        self.check_blocks(g, blocks)?;
        let n = blocks.len();
        let gaps = blocks
            .iter()
            .map(|&f| g.global_avg_pool(f))
            .collect::<Result<Vec<_>>>()?;
        let stacked = g.stack(&gaps)?;
        let w = g.input(Tensor::full(&[n], 1.0 / n as f64));
        g.weighted_sum(stacked, w)
    }

    /// Shared decision head: dense → relu → dense, raw logits out.
    pub fn decide(&self, g: &mut Graph, b: &Bound, pooled: Var) -> Result<Var> {
        let c = self.config.channels();
        if g.value(pooled).shape() != [c] {
            return Err(Error::dim(format!(
                "decision input must be [{c}], got {:?}",
                g.value(pooled).shape()
            )));
        }
        let [hidden, out] = b.decision;
        let h = g.dense(pooled, hidden.weight, hidden.bias)?;
        let h = g.relu(h);
        g.dense(h, out.weight, out.bias)
    }

    /// Full clip forward: blockify, encode each block, pool, decide.
    pub fn forward_clip(
        &self,
        g: &mut Graph,
        b: &Bound,
        clip: &AvClip,
        mode: &mut Mode<'_>,
    ) -> Result<ClipForward> {
        let c = &self.config;
        let blocks = blockify(clip, c.frames_per_block, c.audio_per_block)?;
        if blocks.len() != c.n_blocks {
            return Err(Error::dim(format!(
                "clip has {} blocks but the model expects {}",
                blocks.len(),
                c.n_blocks
            )));
        }
        let mut features = Vec::with_capacity(blocks.len());
        for (frames, samples) in blocks.visual.into_iter().zip(blocks.audio) {
            features.push(self.encode_block(g, b, frames, samples)?);
        }
        let (pooled, attention) = match self.variant {
            Variant::Uniform => (self.pool_uniform(g, &features)?, None),
            Variant::Temporal => {
                let (a, p) = self.attend_temporal(g, b, &features, mode)?;
                (p, Some(a))
            }
            Variant::SpatioTemporal => {
                let (a, p) = self.attend_spatiotemporal(g, b, &features, mode)?;
                (p, Some(a))
            }
        };
        let logits = self.decide(g, b, pooled)?;
        Ok(ClipForward {
            logits,
            pooled,
            attention,
        })
    }

    /// Records forward + cross-entropy for one clip; returns the loss node.
    pub fn clip_loss(&self, g: &mut Graph, clip: &AvClip, mode: &mut Mode<'_>) -> Result<(Var, ClipForward)> {
        self.clip_loss_with(g, &self.store, clip, mode)
    }

    /// [`Self::clip_loss`] with parameters taken from `store`.
    pub fn clip_loss_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        clip: &AvClip,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, ClipForward)> {
        let b = self.bind_with(g, store);
        let out = self.forward_clip(g, &b, clip, mode)?;
        let loss = g.cross_entropy(out.logits, clip.label as usize)?;
        Ok((loss, out))
    }

    /// Converts recorded attention handles into an [`AttentionMap`].
    pub fn attention_map(&self, g: &Graph, vars: &AttentionVars) -> Result<AttentionMap> {
        let c = &self.config;
        match vars.kind {
            AttentionKind::Temporal => Ok(AttentionMap {
                kind: vars.kind,
                weights: g.value(vars.weights).clone(),
                confidences: g.value(vars.confidences).clone(),
            }),
            AttentionKind::SpatioTemporal => {
                let n = g.value(vars.weights).len() / c.cells_per_block();
                let to_nthw = |t: &Tensor| -> Result<Tensor> {
                    t.reshape(&[n, c.feat_h, c.feat_w, c.feat_t])?
                        .permute(&[0, 3, 1, 2])
                };
                Ok(AttentionMap {
                    kind: vars.kind,
                    weights: to_nthw(g.value(vars.weights))?,
                    confidences: to_nthw(g.value(vars.confidences))?,
                })
            }
        }
    }

    /// Eval-mode prediction for one clip.
    pub fn predict(&self, clip: &AvClip) -> Result<Prediction> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let out = self.forward_clip(&mut g, &b, clip, &mut Mode::Eval)?;
        let z = g.value(out.logits).data();
        let attention = out
            .attention
            .map(|a| self.attention_map(&g, &a))
            .transpose()?;
        Ok(Prediction {
            logits: [z[0], z[1]],
            attention,
        })
    }
}
