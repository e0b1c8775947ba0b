//! Trains for one epoch, saves a checkpoint, reloads it and confirms the
//! reloaded model predicts bit-identically.
//!
//! cargo run --release --example checkpoint_roundtrip

use anyhow::{ensure, Result};
use avsync::checkpoint::{load_checkpoint, save_checkpoint};
use avsync::data::{build_dataset, SyntheticConfig};
use avsync::train::Trainer;
use avsync::{FusionConfig, SyncModel, Variant};

fn main() -> Result<()> {
    let fusion = FusionConfig::default();
    let (train, test) = build_dataset(&SyntheticConfig::default(), &fusion, 32, 10, 0)?;
    let dir = tempfile::tempdir()?;
    for variant in Variant::ALL {
        let mut model = SyncModel::new(variant, fusion.clone(), 0)?;
        Trainer::new(1e-3, 0)?.epoch(&mut model, &train, 16, 1)?;
        let path = dir.path().join(format!("{variant}.avck"));
        save_checkpoint(&model, &path, true)?;
        let back = load_checkpoint(&path)?;
        for clip in &test {
            let (a, b) = (model.predict(clip)?, back.predict(clip)?);
            ensure!(a.logits.map(f64::to_bits) == b.logits.map(f64::to_bits), "{variant} drifted");
        }
        println!(
            "{:<15} {} bytes, {} parameters, step {}: identical logits on {} clips",
            variant.name(),
            std::fs::metadata(&path)?.len(),
            back.store().total_values(),
            back.store().step(),
            test.len()
        );
    }
    Ok(())
}
