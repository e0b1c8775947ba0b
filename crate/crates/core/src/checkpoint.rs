//! `AVCK` model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "AVCK" | u16 version | u8 variant | u64 seed
//! | 15 x u32 geometry | f64 dropout_t | f64 dropout_st | u8 per-block softmax
//! | u32 count | count x (u16 name length, name, AVT1 f32 tensor)
//! | u8 has optimizer state [| u64 step | count x (AVT1 f64 m, AVT1 f64 v)]
//! ```
//!
//! Parameters are stored as binary32, which is exactly what the model keeps
//! in memory, so a save/load round trip reproduces predictions bit for bit.

use std::fs;
use std::path::Path;

use crate::codec::{encode_tensor, encode_tensor_f64, ByteReader};
use crate::error::{Error, Result};
use crate::model::{FusionConfig, SyncModel, Variant};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AVCK";
pub const CHECKPOINT_VERSION: u16 = 1;

fn geometry(c: &FusionConfig) -> [usize; 15] {
    [
        c.n_blocks,
        c.frames_per_block,
        c.frame_height,
        c.frame_width,
        c.frame_channels,
        c.audio_per_block,
        c.feat_h,
        c.feat_w,
        c.feat_t,
        c.c_visual,
        c.c_audio,
        c.joint_layers,
        c.attn_hidden_temporal,
        c.attn_hidden_spatiotemporal,
        c.decision_hidden,
    ]
}

fn from_geometry(g: [usize; 15], dropout_t: f64, dropout_st: f64, per_block: bool) -> FusionConfig {
    FusionConfig {
        n_blocks: g[0],
        frames_per_block: g[1],
        frame_height: g[2],
        frame_width: g[3],
        frame_channels: g[4],
        audio_per_block: g[5],
        feat_h: g[6],
        feat_w: g[7],
        feat_t: g[8],
        c_visual: g[9],
        c_audio: g[10],
        joint_layers: g[11],
        attn_hidden_temporal: g[12],
        attn_hidden_spatiotemporal: g[13],
        decision_hidden: g[14],
        dropout_t,
        dropout_st,
        st_softmax_per_block: per_block,
    }
}

/// Serializes the model, optionally with its Adam state.
pub fn encode_checkpoint(model: &SyncModel, with_optimizer: bool) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(model.variant().code());
    out.extend_from_slice(&model.seed().to_le_bytes());
    let cfg = model.config();
    for v in geometry(cfg) {
        let v = u32::try_from(v)
            .map_err(|_| Error::Config(format!("extent {v} does not fit in u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&cfg.dropout_t.to_le_bytes());
    out.extend_from_slice(&cfg.dropout_st.to_le_bytes());
    out.push(cfg.st_softmax_per_block as u8);

    let store = model.store();
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        encode_tensor(&p.value, &mut out);
    }
    out.push(with_optimizer as u8);
    if with_optimizer {
        out.extend_from_slice(&store.step().to_le_bytes());
        for p in store.iter() {
            encode_tensor_f64(p.first_moment(), &mut out);
            encode_tensor_f64(p.second_moment(), &mut out);
        }
    }
    Ok(out)
}

/// Rebuilds a model from checkpoint bytes. Every parameter is checked
/// against the architecture implied by the stored variant and geometry.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<SyncModel> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
    }
    let at = r.offset();
    let code = r.u8("variant")?;
    let variant = Variant::from_code(code)
        .ok_or_else(|| Error::format(at, format!("unknown variant code {code}")))?;
    let seed = r.u64("seed")?;
    let mut g = [0usize; 15];
    for slot in &mut g {
        *slot = r.u32("config")? as usize;
    }
    let dropout_t = r.f64("dropout_t")?;
    let dropout_st = r.f64("dropout_st")?;
    let per_block = r.u8("softmax flag")? != 0;
    let config_at = r.offset();
    let config = from_geometry(g, dropout_t, dropout_st, per_block);
    let mut model = SyncModel::new(variant, config, seed)
        .map_err(|e| Error::format(config_at, format!("stored configuration is invalid: {e}")))?;

    let at = r.offset();
    let count = r.u32("parameter count")? as usize;
    if count != model.store().len() {
        return Err(Error::format(
            at,
            format!(
                "{variant} model has {} parameters, checkpoint has {count}",
                model.store().len()
            ),
        ));
    }
    let ids: Vec<_> = model.store().ids().collect();
    for &id in &ids {
        let at = r.offset();
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "parameter name")?)
            .map_err(|_| Error::format(at, "parameter name is not UTF-8"))?
            .to_string();
        let expected = &model.store().param(id).name;
        if &name != expected {
            return Err(Error::format(
                at,
                format!("expected parameter {expected}, found {name}"),
            ));
        }
        let at = r.offset();
        let value = r.tensor()?;
        let want = model.store().value(id).shape();
        if value.shape() != want {
            return Err(Error::format(
                at,
                format!("parameter {name} has shape {:?}, expected {want:?}", value.shape()),
            ));
        }
        model.store_mut().set_value(id, value)?;
    }
    if r.u8("optimizer flag")? != 0 {
        let step = r.u64("optimizer step")?;
        let mut moments = Vec::with_capacity(ids.len());
        for &id in &ids {
            let at = r.offset();
            let m = r.tensor()?;
            let v = r.tensor()?;
            let want = model.store().value(id).shape();
            if m.shape() != want || v.shape() != want {
                let name = &model.store().param(id).name;
                return Err(Error::format(at, format!("optimizer state shape mismatch for {name}")));
            }
            moments.push((m, v));
        }
        model.store_mut().restore_optimizer_state(step, moments)?;
    }
    if r.remaining() != 0 {
        return Err(Error::format(
            r.offset(),
            format!("{} trailing bytes", r.remaining()),
        ));
    }
    Ok(model)
}

/// Writes through a temporary sibling so a failed save never leaves a
/// truncated checkpoint behind.
pub fn save_checkpoint(model: &SyncModel, path: &Path, with_optimizer: bool) -> Result<()> {
    let bytes = encode_checkpoint(model, with_optimizer)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SyncModel> {
    decode_checkpoint(&fs::read(path)?)
}
