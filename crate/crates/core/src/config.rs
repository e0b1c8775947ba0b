//! Text run configs: `key = value` lines, `#` comments, every key optional.
//!
//! ```
//! use avsync::config::RunConfig;
//!
//! let cfg = RunConfig::parse_str("# tiny run\nepochs = 3\nvariant = temporal\n").unwrap();
//! assert_eq!(cfg.train.epochs, 3);
//! assert_eq!(RunConfig::parse_str(&cfg.to_text()).unwrap(), cfg);
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::model::{FusionConfig, Variant};
use crate::train::TrainConfig;

pub const RESOLVED_FILE: &str = "resolved.cfg";

/// Everything a CLI run needs besides paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub fusion: FusionConfig,
    pub synthetic: SyntheticConfig,
    pub train: TrainConfig,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::Temporal,
            fusion: FusionConfig::default(),
            synthetic: SyntheticConfig::default(),
            train: TrainConfig::default(),
            n_train: 512,
            n_test: 512,
        }
    }
}

/// All accepted keys, in the order `resolved.cfg` lists them.
pub const KEYS: &[&str] = &[
    "variant",
    // model geometry
    "n_blocks",
    "frames_per_block",
    "frame_height",
    "frame_width",
    "frame_channels",
    "audio_per_block",
    "feat_h",
    "feat_w",
    "feat_t",
    "c_visual",
    "c_audio",
    "joint_layers",
    "attn_hidden_temporal",
    "attn_hidden_spatiotemporal",
    "decision_hidden",
    "dropout_t",
    "dropout_st",
    "st_softmax_per_block",
    // synthetic data
    "stream_blocks",
    "p_event",
    "p_visual_distractor",
    "p_audio_distractor",
    "ambient",
    "noise_amplitude",
    "event_intensity",
    "distractor_intensity",
    "square_side",
    "flash_frames",
    "click_decay",
    "ambient_amplitude",
    "ambient_period_frames",
    "min_shift",
    "max_shift",
    "bidirectional_shift",
    "n_train",
    "n_test",
    // training
    "batch_size",
    "epochs",
    "lr",
    "seed",
    "eval_every",
];

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse {value:?} as {}", std::any::type_name::<T>()))
}

fn positive(value: &str) -> std::result::Result<usize, String> {
    match parse::<usize>(value)? {
        0 => Err("must be >= 1".into()),
        v => Ok(v),
    }
}

fn probability(value: &str) -> std::result::Result<f64, String> {
    let p: f64 = parse(value)?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is outside [0, 1]"))
    }
}

fn dropout(value: &str) -> std::result::Result<f64, String> {
    let p: f64 = parse(value)?;
    if (0.0..1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is outside [0, 1)"))
    }
}

fn non_negative(value: &str) -> std::result::Result<f64, String> {
    let v: f64 = parse(value)?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be finite and >= 0"))
    }
}

fn boolean(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {value:?}")),
    }
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let f = &mut self.fusion;
        let s = &mut self.synthetic;
        let t = &mut self.train;
        match key {
            "variant" => self.variant = v.parse().map_err(|e: Error| e.to_string())?,
            "n_blocks" => f.n_blocks = positive(v)?,
            "frames_per_block" => f.frames_per_block = positive(v)?,
            "frame_height" => f.frame_height = positive(v)?,
            "frame_width" => f.frame_width = positive(v)?,
            "frame_channels" => f.frame_channels = positive(v)?,
            "audio_per_block" => f.audio_per_block = positive(v)?,
            "feat_h" => f.feat_h = positive(v)?,
            "feat_w" => f.feat_w = positive(v)?,
            "feat_t" => f.feat_t = positive(v)?,
            "c_visual" => f.c_visual = positive(v)?,
            "c_audio" => f.c_audio = positive(v)?,
            "joint_layers" => f.joint_layers = parse(v)?,
            "attn_hidden_temporal" => f.attn_hidden_temporal = positive(v)?,
            "attn_hidden_spatiotemporal" => f.attn_hidden_spatiotemporal = positive(v)?,
            "decision_hidden" => f.decision_hidden = positive(v)?,
            "dropout_t" => f.dropout_t = dropout(v)?,
            "dropout_st" => f.dropout_st = dropout(v)?,
            "st_softmax_per_block" => f.st_softmax_per_block = boolean(v)?,
            "stream_blocks" => s.stream_blocks = positive(v)?,
            "p_event" => s.p_event = probability(v)?,
            "p_visual_distractor" => s.p_visual_distractor = probability(v)?,
            "p_audio_distractor" => s.p_audio_distractor = probability(v)?,
            "ambient" => s.ambient = v.parse().map_err(|e: Error| e.to_string())?,
            "noise_amplitude" => s.noise_amplitude = non_negative(v)?,
            "event_intensity" => s.event_intensity = non_negative(v)?,
            "distractor_intensity" => s.distractor_intensity = non_negative(v)?,
            "square_side" => s.square_side = positive(v)?,
            "flash_frames" => s.flash_frames = positive(v)?,
            "click_decay" => s.click_decay = positive(v)?,
            "ambient_amplitude" => s.ambient_amplitude = non_negative(v)?,
            "ambient_period_frames" => s.ambient_period_frames = positive(v)?,
            "min_shift" => s.min_shift = positive(v)?,
            "max_shift" => s.max_shift = positive(v)?,
            "bidirectional_shift" => s.bidirectional_shift = boolean(v)?,
            "n_train" => self.n_train = positive(v)?,
            "n_test" => self.n_test = positive(v)?,
            "batch_size" => t.batch_size = positive(v)?,
            "epochs" => t.epochs = positive(v)?,
            "lr" => t.lr = non_negative(v)?,
            "seed" => t.seed = parse(v)?,
            "eval_every" => t.eval_every = positive(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let f = &self.fusion;
        let s = &self.synthetic;
        let t = &self.train;
        match key {
            "variant" => self.variant.to_string(),
            "n_blocks" => f.n_blocks.to_string(),
            "frames_per_block" => f.frames_per_block.to_string(),
            "frame_height" => f.frame_height.to_string(),
            "frame_width" => f.frame_width.to_string(),
            "frame_channels" => f.frame_channels.to_string(),
            "audio_per_block" => f.audio_per_block.to_string(),
            "feat_h" => f.feat_h.to_string(),
            "feat_w" => f.feat_w.to_string(),
            "feat_t" => f.feat_t.to_string(),
            "c_visual" => f.c_visual.to_string(),
            "c_audio" => f.c_audio.to_string(),
            "joint_layers" => f.joint_layers.to_string(),
            "attn_hidden_temporal" => f.attn_hidden_temporal.to_string(),
            "attn_hidden_spatiotemporal" => f.attn_hidden_spatiotemporal.to_string(),
            "decision_hidden" => f.decision_hidden.to_string(),
            "dropout_t" => f.dropout_t.to_string(),
            "dropout_st" => f.dropout_st.to_string(),
            "st_softmax_per_block" => f.st_softmax_per_block.to_string(),
            "stream_blocks" => s.stream_blocks.to_string(),
            "p_event" => s.p_event.to_string(),
            "p_visual_distractor" => s.p_visual_distractor.to_string(),
            "p_audio_distractor" => s.p_audio_distractor.to_string(),
            "ambient" => s.ambient.to_string(),
            "noise_amplitude" => s.noise_amplitude.to_string(),
            "event_intensity" => s.event_intensity.to_string(),
            "distractor_intensity" => s.distractor_intensity.to_string(),
            "square_side" => s.square_side.to_string(),
            "flash_frames" => s.flash_frames.to_string(),
            "click_decay" => s.click_decay.to_string(),
            "ambient_amplitude" => s.ambient_amplitude.to_string(),
            "ambient_period_frames" => s.ambient_period_frames.to_string(),
            "min_shift" => s.min_shift.to_string(),
            "max_shift" => s.max_shift.to_string(),
            "bidirectional_shift" => s.bidirectional_shift.to_string(),
            "n_train" => self.n_train.to_string(),
            "n_test" => self.n_test.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "epochs" => t.epochs.to_string(),
            "lr" => t.lr.to_string(),
            "seed" => t.seed.to_string(),
            "eval_every" => t.eval_every.to_string(),
            other => unreachable!("unlisted key {other}"),
        }
    }

    /// Parses config text on top of the defaults. A key may appear once.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::ConfigLine {
                    line,
                    key: content.to_string(),
                    message: "expected `key = value`".into(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            let fail = |message: String| Error::ConfigLine {
                line,
                key: key.to_string(),
                message,
            };
            if !seen.insert(key.to_string()) && KEYS.contains(&key) {
                return Err(fail("key given more than once".into()));
            }
            cfg.set(key, value).map_err(fail)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Cross-field checks that no single line can be blamed for.
    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        self.synthetic.validate(&self.fusion)?;
        self.train.validate()?;
        for (name, n) in [("n_train", self.n_train), ("n_test", self.n_test)] {
            if n < 2 || n % 2 != 0 {
                return Err(Error::Config(format!("{name} must be even and >= 2, got {n}")));
            }
        }
        Ok(())
    }

    /// Every key with its resolved value; parsing this reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# fully resolved run configuration\n");
        for key in KEYS {
            writeln!(out, "{key} = {}", self.get(key)).expect("writing to a String");
        }
        out
    }

    /// Writes `resolved.cfg` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(RESOLVED_FILE), self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_desk_profile() {
        let cfg = RunConfig::parse_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.fusion.n_blocks, 5);
        assert_eq!(cfg.fusion.decision_hidden, 512);
        assert_eq!(cfg.train.batch_size, 80);
        assert_eq!(cfg.train.epochs, 300);
        assert_eq!(cfg.train.lr, 1e-3);
    }

    #[test]
    fn errors_name_key_and_line() {
        let err = RunConfig::parse_str("# comment\n\ndropout_t = 1.5\n").unwrap_err();
        match err {
            Error::ConfigLine { line, key, .. } => {
                assert_eq!(line, 3);
                assert_eq!(key, "dropout_t");
            }
            other => panic!("unexpected {other:?}"),
        }
        for (text, key) in [
            ("colour = red", "colour"),
            ("epochs = many", "epochs"),
            ("epochs = 0", "epochs"),
            ("variant = fancy", "variant"),
            ("epochs = 2\nepochs = 3", "epochs"),
            ("just words", "just words"),
        ] {
            match RunConfig::parse_str(text) {
                Err(Error::ConfigLine { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn resolved_text_round_trips() {
        let cfg = RunConfig::parse_str(
            "variant = spatiotemporal\nlr = 0.00031\np_event = 0.15 # sparse\nambient = none\nseed = 18446744073709551615\n",
        )
        .unwrap();
        let text = cfg.to_text();
        assert_eq!(RunConfig::parse_str(&text).unwrap(), cfg);
        assert_eq!(text.lines().count(), KEYS.len() + 1);
    }

    #[test]
    fn cross_field_errors_surface() {
        assert!(RunConfig::parse_str("feat_h = 3").is_err());
        assert!(RunConfig::parse_str("n_train = 7").is_err());
    }
}
