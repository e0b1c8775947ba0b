//! Trains the uniform, temporal and spatio-temporal models on the same
//! synthetic data for several seeds and prints a comparison table.
//!
//! cargo run --release --example compare_variants -- --seeds 3 --epochs 60

use anyhow::Result;
use avsync::data::{build_dataset, SyntheticConfig};
use avsync::train::{median, train_and_evaluate, TrainConfig};
use avsync::{FusionConfig, Variant};
use clap::Parser;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 512)]
    clips: usize,
    #[arg(long, default_value_t = 0.3)]
    p_event: f64,
    #[arg(long, default_value_t = 80)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
}

fn main() -> Result<()> {
    env_logger::init();
    let args = Args::parse();
    let fusion = FusionConfig::default();
    let synthetic = SyntheticConfig {
        p_event: args.p_event,
        ..SyntheticConfig::default()
    };
    let variants = [Variant::Uniform, Variant::Temporal, Variant::SpatioTemporal];
    let mut acc = vec![Vec::new(); 3];
    println!("variant          seed  test_acc  separation  attn_mass  reference  seconds");
    for seed in 0..args.seeds {
        let (train, test) = build_dataset(&synthetic, &fusion, args.clips, args.clips, seed)?;
        for (k, variant) in variants.into_iter().enumerate() {
            let cfg = TrainConfig {
                batch_size: args.batch_size,
                epochs: args.epochs,
                lr: args.lr,
                seed,
                ..TrainConfig::default()
            };
            let (_, s) = train_and_evaluate(variant, &fusion, &train, &test, &cfg)?;
            let (mass, reference) = s
                .alignment
                .map(|a| (format!("{:.3}", a.mass), format!("{:.3}", a.uniform_reference)))
                .unwrap_or(("-".into(), "-".into()));
            println!(
                "{:<16} {:>4}  {:>8.4}  {:>10.4}  {:>9}  {:>9}  {:>7.1}",
                variant.name(),
                seed,
                s.test_acc,
                s.score_separation(),
                mass,
                reference,
                s.seconds
            );
            acc[k].push(s.test_acc);
        }
    }
    for (variant, a) in variants.iter().zip(&acc) {
        println!("median {:<16} {:.4}", variant.name(), median(a));
    }
    Ok(())
}
