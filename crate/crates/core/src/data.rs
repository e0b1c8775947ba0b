//! Synthetic audio-visual event streams, shift-based self-supervised pair
//! construction, blockification, and clip/dataset files.
//!
//! A stream is a long recording of `S` blocks. Positive clips are aligned
//! windows cut from it; negatives keep the visual window and take the audio
//! window from a different, whole-block-shifted position of the same stream.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;

use crate::codec::{encode_tensor, ByteReader};
use crate::error::{Error, Result};
use crate::model::FusionConfig;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CLIP_MAGIC: &[u8; 4] = b"AVC1";
pub const CLIP_VERSION: u8 = 1;
pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ambient {
    None,
    /// A slow sinusoid shared by both modalities.
    Correlated,
}

impl FromStr for Ambient {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ambient::None),
            "correlated" => Ok(Ambient::Correlated),
            _ => Err(Error::Config(format!(
                "unknown ambient mode {s:?} (expected none or correlated)"
            ))),
        }
    }
}

impl fmt::Display for Ambient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ambient::None => "none",
            Ambient::Correlated => "correlated",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// Stream length in blocks (S).
    pub stream_blocks: usize,
    pub p_event: f64,
    pub p_visual_distractor: f64,
    pub p_audio_distractor: f64,
    pub ambient: Ambient,
    pub noise_amplitude: f64,
    pub event_intensity: f64,
    pub distractor_intensity: f64,
    /// Side of the flashed square in pixels.
    pub square_side: usize,
    /// Frames a flash stays lit.
    pub flash_frames: usize,
    /// Samples over which a click decays as `exp(-k / decay)`.
    pub click_decay: usize,
    pub ambient_amplitude: f64,
    pub ambient_period_frames: usize,
    pub min_shift: usize,
    pub max_shift: usize,
    /// Draw negative shifts in both directions (forward only otherwise).
    pub bidirectional_shift: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            stream_blocks: 20,
            p_event: 0.3,
            p_visual_distractor: 0.2,
            p_audio_distractor: 0.2,
            ambient: Ambient::Correlated,
            noise_amplitude: 0.05,
            event_intensity: 1.0,
            distractor_intensity: 0.6,
            square_side: 6,
            flash_frames: 2,
            click_decay: 16,
            ambient_amplitude: 0.1,
            ambient_period_frames: 64,
            min_shift: 3,
            max_shift: 7,
            bidirectional_shift: true,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self, fusion: &FusionConfig) -> Result<()> {
        for (name, p) in [
            ("p_event", self.p_event),
            ("p_visual_distractor", self.p_visual_distractor),
            ("p_audio_distractor", self.p_audio_distractor),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        for (name, v) in [
            ("noise_amplitude", self.noise_amplitude),
            ("event_intensity", self.event_intensity),
            ("distractor_intensity", self.distractor_intensity),
            ("ambient_amplitude", self.ambient_amplitude),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let n = fusion.n_blocks;
        if !(0 < self.min_shift
            && self.min_shift <= self.max_shift
            && self.max_shift + n < self.stream_blocks)
        {
            return Err(Error::Config(format!(
                "shift range needs 0 < min_shift <= max_shift < stream_blocks - n_blocks, \
                 got min {} max {} with {} blocks per stream and {n} per clip",
                self.min_shift, self.max_shift, self.stream_blocks
            )));
        }
        if self.flash_frames == 0 || self.flash_frames > fusion.frames_per_block {
            return Err(Error::Config(format!(
                "flash_frames must lie in 1..={}",
                fusion.frames_per_block
            )));
        }
        if self.square_side == 0 || self.click_decay == 0 || self.ambient_period_frames == 0 {
            return Err(Error::Config(
                "square_side, click_decay and ambient_period_frames must be >= 1".into(),
            ));
        }
        if fusion.audio_per_block % fusion.frames_per_block != 0 {
            return Err(Error::Config(format!(
                "audio_per_block {} is not a whole number of samples per frame ({} frames)",
                fusion.audio_per_block, fusion.frames_per_block
            )));
        }
        if fusion.frame_height < fusion.feat_h || fusion.frame_width < fusion.feat_w {
            return Err(Error::Config("frame smaller than the feature grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Visible flash with a simultaneous click.
    Av,
    VisualOnly,
    AudioOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub block: usize,
    pub kind: EventKind,
    pub frame_offset: usize,
    /// Feature-grid cell `(row, col)` of the flash; `None` for audio-only.
    pub cell: Option<(usize, usize)>,
}

/// Stream geometry shared by every clip cut from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamGeometry {
    pub frames_per_block: usize,
    pub samples_per_block: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub frame_channels: usize,
}

impl StreamGeometry {
    pub fn of(fusion: &FusionConfig) -> Self {
        StreamGeometry {
            frames_per_block: fusion.frames_per_block,
            samples_per_block: fusion.audio_per_block,
            frame_height: fusion.frame_height,
            frame_width: fusion.frame_width,
            frame_channels: fusion.frame_channels,
        }
    }

    pub fn samples_per_frame(&self) -> usize {
        self.samples_per_block / self.frames_per_block
    }

    fn frame_len(&self) -> usize {
        self.frame_height * self.frame_width * self.frame_channels
    }
}

#[derive(Debug, Clone)]
pub struct AvStream {
    /// `[S·T_in, H_in, W_in, channels]`
    pub visual: Tensor,
    /// `[S·L_a, 1]`
    pub audio: Tensor,
    pub blocks: usize,
    pub geometry: StreamGeometry,
    pub events: Vec<Event>,
    pub seed: u64,
    pub config: SyntheticConfig,
    /// Audio before the ambient component, kept so shifted windows can be
    /// re-synthesized with the ambient phase of the visual window.
    audio_base: Tensor,
    /// Phase of the shared ambient sinusoid, when there is one.
    ambient_phase: Option<f64>,
}

impl AvStream {
    /// Ambient value added to audio sample `i` of the stream.
    fn ambient_at_sample(&self, i: usize) -> f64 {
        match self.ambient_phase {
            Some(phase) => {
                let period = (self.config.ambient_period_frames * self.geometry.samples_per_frame()) as f64;
                self.config.ambient_amplitude * (2.0 * PI * i as f64 / period + phase).sin()
            }
            None => 0.0,
        }
    }

    /// Audio sample index at which the click of an event starts.
    pub fn onset_sample(&self, e: &Event) -> usize {
        (e.block * self.geometry.frames_per_block + e.frame_offset) * self.geometry.samples_per_frame()
    }

    pub fn onset_frame(&self, e: &Event) -> usize {
        e.block * self.geometry.frames_per_block + e.frame_offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvClip {
    /// `[N·T_in, H_in, W_in, channels]`
    pub visual: Tensor,
    /// `[N·L_a, 1]`
    pub audio: Tensor,
    /// 1 = in sync, 0 = audio shifted.
    pub label: u8,
    /// Audio offset in blocks relative to the visual window (0 for positives).
    pub shift_blocks: i32,
    /// Per block: whether an audio-visual event lies in the visual window.
    pub block_discriminative: Vec<bool>,
}

impl AvClip {
    pub fn n_blocks(&self) -> usize {
        self.block_discriminative.len()
    }
}

/// Generates one synthetic stream; a pure function of `(config, geometry, seed)`.
pub fn gen_stream(config: &SyntheticConfig, fusion: &FusionConfig, seed: u64) -> Result<AvStream> {
    config.validate(fusion)?;
    let geo = StreamGeometry::of(fusion);
    let s = config.stream_blocks;
    let (h, w, ch) = (geo.frame_height, geo.frame_width, geo.frame_channels);
    let frames = s * geo.frames_per_block;
    let samples = s * geo.samples_per_block;
    let spf = geo.samples_per_frame();
    let mut visual = vec![0.0; frames * geo.frame_len()];
    let mut audio = vec![0.0; samples];
    let mut events = Vec::new();
    let mut rng = Rng::new(seed);

    let phase = rng.uniform(0.0, 2.0 * PI);
    let cell_h = h / fusion.feat_h;
    let cell_w = w / fusion.feat_w;
    let side_h = config.square_side.min(cell_h);
    let side_w = config.square_side.min(cell_w);
    let offsets = geo.frames_per_block - config.flash_frames + 1;

    let flash = |visual: &mut [f64], block: usize, offset: usize, cell: (usize, usize), v: f64| {
        let top = cell.0 * cell_h + (cell_h - side_h) / 2;
        let left = cell.1 * cell_w + (cell_w - side_w) / 2;
        for f in 0..config.flash_frames {
            let frame = block * geo.frames_per_block + offset + f;
            let base = frame * geo.frame_len();
            for y in top..top + side_h {
                for x in left..left + side_w {
                    for c in 0..ch {
                        visual[base + (y * w + x) * ch + c] += v;
                    }
                }
            }
        }
    };
    let click = |audio: &mut [f64], block: usize, offset: usize, v: f64| {
        let onset = (block * geo.frames_per_block + offset) * spf;
        for k in 0..config.click_decay {
            if let Some(a) = audio.get_mut(onset + k) {
                *a += v * (-(k as f64) / config.click_decay as f64).exp();
            }
        }
    };

    for block in 0..s {
        if rng.bernoulli(config.p_event) {
            let offset = rng.below(offsets);
            let cell = (rng.below(fusion.feat_h), rng.below(fusion.feat_w));
            flash(&mut visual, block, offset, cell, config.event_intensity);
            click(&mut audio, block, offset, config.event_intensity);
            events.push(Event {
                block,
                kind: EventKind::Av,
                frame_offset: offset,
                cell: Some(cell),
            });
        }
        if rng.bernoulli(config.p_visual_distractor) {
            let offset = rng.below(offsets);
            let cell = (rng.below(fusion.feat_h), rng.below(fusion.feat_w));
            flash(&mut visual, block, offset, cell, config.distractor_intensity);
            events.push(Event {
                block,
                kind: EventKind::VisualOnly,
                frame_offset: offset,
                cell: Some(cell),
            });
        }
        if rng.bernoulli(config.p_audio_distractor) {
            let offset = rng.below(offsets);
            click(&mut audio, block, offset, config.distractor_intensity);
            events.push(Event {
                block,
                kind: EventKind::AudioOnly,
                frame_offset: offset,
                cell: None,
            });
        }
    }

    if config.noise_amplitude > 0.0 {
        for v in visual.iter_mut() {
            *v += rng.uniform(0.0, config.noise_amplitude);
        }
        for a in audio.iter_mut() {
            *a += rng.uniform(0.0, config.noise_amplitude);
        }
    }

    // stored precision: every value exactly representable in binary32,
    // before and after the ambient is added
    for v in visual.iter_mut().chain(audio.iter_mut()) {
        *v = *v as f32 as f64;
    }
    let audio_base = Tensor::new(&[samples, 1], audio.clone())?;
    let ambient_phase = (config.ambient == Ambient::Correlated).then_some(phase);
    let mut stream = AvStream {
        visual: Tensor::zeros(&[1]),
        audio: Tensor::zeros(&[1]),
        blocks: s,
        geometry: geo,
        events,
        seed,
        config: config.clone(),
        audio_base,
        ambient_phase,
    };
    if let Some(phase) = ambient_phase {
        let period_frames = config.ambient_period_frames as f64;
        for (f, frame) in visual.chunks_exact_mut(geo.frame_len()).enumerate() {
            let a = config.ambient_amplitude * (2.0 * PI * f as f64 / period_frames + phase).sin();
            for v in frame {
                *v = (*v + a) as f32 as f64;
            }
        }
        for (i, v) in audio.iter_mut().enumerate() {
            *v = (*v + stream.ambient_at_sample(i)) as f32 as f64;
        }
    }
    stream.visual = Tensor::new(&[frames, h, w, ch], visual)?;
    stream.audio = Tensor::new(&[samples, 1], audio)?;
    Ok(stream)
}

fn discriminative(stream: &AvStream, t0: usize, n: usize) -> Vec<bool> {
    let mut flags = vec![false; n];
    for e in &stream.events {
        if e.kind == EventKind::Av && (t0..t0 + n).contains(&e.block) {
            flags[e.block - t0] = true;
        }
    }
    flags
}

fn check_window(stream: &AvStream, start: usize, n: usize, what: &str) -> Result<()> {
    if n == 0 || start + n > stream.blocks {
        return Err(Error::Range(format!(
            "{what} window of {n} blocks at {start} exceeds stream of {} blocks",
            stream.blocks
        )));
    }
    Ok(())
}

fn cut(stream: &AvStream, visual_start: usize, audio_start: usize, n: usize) -> Result<(Tensor, Tensor)> {
    let g = &stream.geometry;
    let visual = stream
        .visual
        .slice_leading(visual_start * g.frames_per_block, n * g.frames_per_block)?;
    let len = n * g.samples_per_block;
    let audio = if audio_start == visual_start || stream.ambient_phase.is_none() {
        stream.audio.slice_leading(audio_start * g.samples_per_block, len)?
    } else {
        // The ambient belongs to the scene, not to the audio track: a shifted
        // window keeps the phase of its visual window, so the ambient alone
        // cannot tell shifted from aligned clips.
        let base = stream.audio_base.slice_leading(audio_start * g.samples_per_block, len)?;
        let first = visual_start * g.samples_per_block;
        let data = base
            .data()
            .iter()
            .enumerate()
            .map(|(k, &b)| (b + stream.ambient_at_sample(first + k)) as f32 as f64)
            .collect();
        Tensor::new(&[len, 1], data)?
    };
    Ok((visual, audio))
}

/// Aligned window of `n` blocks starting at block `t0`.
pub fn cut_positive(stream: &AvStream, t0: usize, n: usize) -> Result<AvClip> {
    check_window(stream, t0, n, "positive")?;
    let (visual, audio) = cut(stream, t0, t0, n)?;
    Ok(AvClip {
        visual,
        audio,
        label: 1,
        shift_blocks: 0,
        block_discriminative: discriminative(stream, t0, n),
    })
}

/// Signed shifts (in blocks) that keep the audio window inside the stream.
pub fn feasible_shifts(stream: &AvStream, t0: usize, n: usize) -> Vec<i32> {
    let cfg = &stream.config;
    let last_start = stream.blocks as i64 - n as i64;
    let mut out = Vec::new();
    for mag in cfg.min_shift..=cfg.max_shift {
        let signs: &[i64] = if cfg.bidirectional_shift { &[-1, 1] } else { &[1] };
        for &sign in signs {
            let start = t0 as i64 + sign * mag as i64;
            if (0..=last_start).contains(&start) {
                out.push((sign * mag as i64) as i32);
            }
        }
    }
    out
}

/// Visual window at `t0` paired with audio from `t0 + Δ` blocks, where `|Δ|`
/// is uniform over `[min_shift, max_shift]` and the sign uniform (or
/// positive when shifts are forward-only). Draws leaving the stream are
/// rejected and redrawn.
pub fn make_negative(stream: &AvStream, t0: usize, n: usize, rng: &mut Rng) -> Result<AvClip> {
    check_window(stream, t0, n, "negative")?;
    if feasible_shifts(stream, t0, n).is_empty() {
        return Err(Error::Range(format!(
            "no audio shift in [{}, {}] blocks keeps a {n}-block window at {t0} inside a \
             {}-block stream",
            stream.config.min_shift, stream.config.max_shift, stream.blocks
        )));
    }
    let cfg = &stream.config;
    let span = cfg.max_shift - cfg.min_shift + 1;
    let last_start = stream.blocks as i64 - n as i64;
    let shift = loop {
        let mag = (cfg.min_shift + rng.below(span)) as i64;
        let sign = if cfg.bidirectional_shift && rng.bernoulli(0.5) { -1 } else { 1 };
        let start = t0 as i64 + sign * mag;
        if (0..=last_start).contains(&start) {
            break sign * mag;
        }
    };
    let (visual, audio) = cut(stream, t0, (t0 as i64 + shift) as usize, n)?;
    Ok(AvClip {
        visual,
        audio,
        label: 0,
        shift_blocks: shift as i32,
        block_discriminative: discriminative(stream, t0, n),
    })
}

/// Per-block windows of a clip.
#[derive(Debug, Clone)]
pub struct Blocks {
    pub visual: Vec<Tensor>,
    pub audio: Vec<Tensor>,
    pub dropped_frames: usize,
    pub dropped_samples: usize,
}

impl Blocks {
    pub fn len(&self) -> usize {
        self.visual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visual.is_empty()
    }
}

/// Splits a clip into contiguous non-overlapping blocks. Trailing frames or
/// samples that do not fill a block are dropped with a warning.
pub fn blockify(clip: &AvClip, frames_per_block: usize, samples_per_block: usize) -> Result<Blocks> {
    if frames_per_block == 0 || samples_per_block == 0 {
        return Err(Error::Config("block lengths must be >= 1".into()));
    }
    let frames = clip.visual.shape()[0];
    let samples = clip.audio.shape()[0];
    let n = frames / frames_per_block;
    if n == 0 {
        return Err(Error::Range(format!(
            "clip has {frames} frames, fewer than one block of {frames_per_block}"
        )));
    }
    let na = samples / samples_per_block;
    if na < n {
        return Err(Error::Range(format!(
            "clip has {n} visual blocks but only {na} audio blocks"
        )));
    }
    let dropped_frames = frames - n * frames_per_block;
    let dropped_samples = samples - n * samples_per_block;
    if dropped_frames > 0 || dropped_samples > 0 {
        warn!(
            "blockify: dropping {dropped_frames} trailing frames and {dropped_samples} trailing samples"
        );
    }
    let mut visual = Vec::with_capacity(n);
    let mut audio = Vec::with_capacity(n);
    for k in 0..n {
        visual.push(clip.visual.slice_leading(k * frames_per_block, frames_per_block)?);
        audio.push(clip.audio.slice_leading(k * samples_per_block, samples_per_block)?);
    }
    Ok(Blocks {
        visual,
        audio,
        dropped_frames,
        dropped_samples,
    })
}

/// Builds disjoint train/test sets. Each stream contributes one positive and
/// one negative cut at the same `t0`; the split is shuffled by its seed.
pub fn build_dataset(
    config: &SyntheticConfig,
    fusion: &FusionConfig,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Vec<AvClip>, Vec<AvClip>)> {
    for (name, count) in [("n_train", n_train), ("n_test", n_test)] {
        if count < 2 || count % 2 != 0 {
            return Err(Error::Config(format!(
                "{name} must be even and >= 2, got {count}"
            )));
        }
    }
    config.validate(fusion)?;
    let train = build_split(config, fusion, n_train / 2, seed)?;
    let test = build_split(config, fusion, n_test / 2, seed.wrapping_add(1))?;
    Ok((train, test))
}

/// Seeds of the streams a split draws, in order.
pub fn split_stream_seeds(split_seed: u64, streams: usize) -> Vec<u64> {
    let mut rng = Rng::new(split_seed);
    (0..streams).map(|_| rng.next_u64()).collect()
}

fn build_split(
    config: &SyntheticConfig,
    fusion: &FusionConfig,
    streams: usize,
    split_seed: u64,
) -> Result<Vec<AvClip>> {
    let n = fusion.n_blocks;
    let mut clips = Vec::with_capacity(streams * 2);
    for stream_seed in split_stream_seeds(split_seed, streams) {
        let stream = gen_stream(config, fusion, stream_seed)?;
        let mut pick = Rng::new(!stream_seed);
        let t0 = loop {
            let t0 = pick.below(stream.blocks - n + 1);
            if !feasible_shifts(&stream, t0, n).is_empty() {
                break t0;
            }
        };
        clips.push(cut_positive(&stream, t0, n)?);
        clips.push(make_negative(&stream, t0, n, &mut pick)?);
    }
    Rng::new(split_seed ^ 0x5348_5546_464C_4521).shuffle(&mut clips);
    Ok(clips)
}

/// Serializes a clip into the `AVC1` container.
pub fn encode_clip(clip: &AvClip) -> Result<Vec<u8>> {
    let shift = i16::try_from(clip.shift_blocks)
        .map_err(|_| Error::Range(format!("shift {} does not fit in 16 bits", clip.shift_blocks)))?;
    let mut out = Vec::new();
    out.extend_from_slice(CLIP_MAGIC);
    out.push(CLIP_VERSION);
    out.push(clip.label);
    out.extend_from_slice(&shift.to_le_bytes());
    let n = clip.block_discriminative.len();
    out.extend_from_slice(&(n as u32).to_le_bytes());
    let mut mask = vec![0u8; n.div_ceil(8)];
    for (i, &d) in clip.block_discriminative.iter().enumerate() {
        if d {
            mask[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&mask);
    encode_tensor(&clip.visual, &mut out);
    encode_tensor(&clip.audio, &mut out);
    Ok(out)
}

pub fn decode_clip(bytes: &[u8]) -> Result<AvClip> {
    let mut r = ByteReader::new(bytes);
    r.magic(CLIP_MAGIC)?;
    let at = r.offset();
    let version = r.u8("version")?;
    if version != CLIP_VERSION {
        return Err(Error::format(at, format!("unsupported clip version {version}")));
    }
    let at = r.offset();
    let label = r.u8("label")?;
    if label > 1 {
        return Err(Error::format(at, format!("label byte {label} is not 0 or 1")));
    }
    let shift = r.i16("shift")? as i32;
    let n = r.u32("block count")? as usize;
    let mask = r.take(n.div_ceil(8), "discriminativity mask")?;
    let block_discriminative = (0..n).map(|i| mask[i / 8] & (1 << (i % 8)) != 0).collect();
    let visual = r.tensor()?;
    let audio = r.tensor()?;
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), format!("{} trailing bytes", r.remaining())));
    }
    if visual.rank() != 4 || audio.rank() != 2 || audio.shape()[1] != 1 {
        return Err(Error::format(
            0,
            format!(
                "clip tensors must be visual [F,H,W,C] and audio [L,1], got {:?} and {:?}",
                visual.shape(),
                audio.shape()
            ),
        ));
    }
    Ok(AvClip {
        visual,
        audio,
        label,
        shift_blocks: shift,
        block_discriminative,
    })
}

pub fn save_clip(clip: &AvClip, path: &Path) -> Result<()> {
    fs::write(path, encode_clip(clip)?)?;
    Ok(())
}

pub fn load_clip(path: &Path) -> Result<AvClip> {
    decode_clip(&fs::read(path)?)
}

/// Train and test clips as stored in a dataset directory.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<AvClip>,
    pub test: Vec<AvClip>,
}

/// Writes `train/<i>.avc`, `test/<i>.avc` and a `path,label` manifest.
pub fn write_dataset(dir: &Path, train: &[AvClip], test: &[AvClip]) -> Result<()> {
    // encode everything first so a bad clip leaves no partial directory
    let mut files: Vec<(PathBuf, Vec<u8>, u8)> = Vec::new();
    for (split, clips) in [("train", train), ("test", test)] {
        for (i, clip) in clips.iter().enumerate() {
            files.push((PathBuf::from(split).join(format!("{i}.avc")), encode_clip(clip)?, clip.label));
        }
    }
    let mut manifest = String::new();
    for split in ["train", "test"] {
        fs::create_dir_all(dir.join(split))?;
    }
    for (rel, bytes, label) in &files {
        fs::write(dir.join(rel), bytes)?;
        manifest.push_str(&format!("{},{label}\n", rel.display()));
    }
    fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let mut ds = Dataset::default();
    let mut offset = 0u64;
    for line in manifest.lines() {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (rel, label) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::format(line_offset, format!("manifest line {line:?} is not path,label")))?;
        let label: u8 = label
            .trim()
            .parse()
            .map_err(|_| Error::format(line_offset, format!("bad label in manifest line {line:?}")))?;
        let clip = load_clip(&dir.join(rel))?;
        if clip.label != label {
            return Err(Error::format(
                line_offset,
                format!("manifest says {rel} has label {label}, file says {}", clip.label),
            ));
        }
        match rel.split(['/', '\\']).next() {
            Some("train") => ds.train.push(clip),
            Some("test") => ds.test.push(clip),
            _ => {
                return Err(Error::format(
                    line_offset,
                    format!("manifest path {rel} is not under train/ or test/"),
                ))
            }
        }
    }
    Ok(ds)
}
