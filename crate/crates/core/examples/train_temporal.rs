//! Trains the temporal-attention model and prints its learning curve.
//!
//! cargo run --release --example train_temporal -- --epochs 40 --clips 256

use anyhow::Result;
use avsync::data::{build_dataset, SyntheticConfig};
use avsync::train::{train, TrainConfig};
use avsync::{FusionConfig, SyncModel, Variant};
use clap::Parser;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    clips: usize,
    #[arg(long, default_value_t = 5)]
    eval_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> Result<()> {
    env_logger::init();
    let args = Args::parse();
    let fusion = FusionConfig::default();
    let (train_set, test_set) =
        build_dataset(&SyntheticConfig::default(), &fusion, args.clips, args.clips, args.seed)?;
    let mut model = SyncModel::new(Variant::Temporal, fusion, args.seed)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        eval_every: args.eval_every,
        batch_size: 80.min(args.clips),
        seed: args.seed,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &train_set, &test_set, &cfg)?;
    println!("epoch  train_loss  train_acc  test_acc  attn_mass");
    for m in &history.records {
        println!(
            "{:>5}  {:>10.4}  {:>9.3}  {:>8.3}  {:>9.3}",
            m.epoch,
            m.train_loss,
            m.train_acc,
            m.test_acc,
            m.attn_mass.unwrap_or(f64::NAN)
        );
    }
    println!("{} optimizer steps", history.steps);
    Ok(())
}
