//! Briefly trains a spatio-temporal model, then prints where it looks on a
//! few test clips: per-block attention mass next to the ground-truth event
//! blocks, and the most attended cell.
//!
//! cargo run --release --example attention_export -- --epochs 20

use anyhow::{Context, Result};
use avsync::data::{build_dataset, SyntheticConfig};
use avsync::train::{train, TrainConfig};
use avsync::{FusionConfig, SyncModel, Variant};
use clap::Parser;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    clips: usize,
    #[arg(long, default_value_t = 6)]
    show: usize,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let fusion = FusionConfig::default();
    let (train_set, test_set) = build_dataset(&SyntheticConfig::default(), &fusion, args.clips, args.clips, 1)?;
    let mut model = SyncModel::new(Variant::SpatioTemporal, fusion.clone(), 1)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        eval_every: args.epochs,
        batch_size: 32.min(args.clips),
        ..TrainConfig::default()
    };
    let h = train(&mut model, &train_set, &test_set, &cfg)?;
    println!("test accuracy {:.3}\n", h.last().test_acc);

    for clip in test_set.iter().take(args.show) {
        let p = model.predict(clip)?;
        let score = p.sync_score();
        let map = p.attention.context("spatio-temporal model returns a map")?;
        let mass: Vec<String> = map.block_mass().iter().map(|m| format!("{m:.2}")).collect();
        let events: Vec<&str> = clip
            .block_discriminative
            .iter()
            .map(|&d| if d { "E" } else { "." })
            .collect();
        let (argmax, _) = map
            .weights
            .data()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &w)| if w > best.1 { (i, w) } else { best });
        // weights are [N, T, H, W]
        let (hw, thw) = (fusion.feat_h * fusion.feat_w, fusion.cells_per_block());
        println!(
            "label {} score {:.2}  events [{}]  block mass [{}]  peak n={} t={} h={} w={}",
            clip.label,
            score,
            events.join(""),
            mass.join(" "),
            argmax / thw,
            argmax % thw / hw,
            argmax % hw / fusion.feat_w,
            argmax % fusion.feat_w
        );
    }
    Ok(())
}
