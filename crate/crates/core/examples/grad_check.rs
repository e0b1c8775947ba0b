//! Finite-difference check of every model variant's analytic gradients.
//!
//! cargo run --release --example grad_check -- --seeds 2 --per-param 8

use anyhow::{ensure, Result};
use avsync::gradcheck::{check_model, Coordinates, Kinks};
use avsync::{FusionConfig, Variant};
use clap::Parser;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 2)]
    seeds: u64,
    #[arg(long, default_value_t = 8)]
    per_param: usize,
    /// Let finite differences cross relu kinks instead of pinning them.
    #[arg(long)]
    free_kinks: bool,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let kinks = if args.free_kinks { Kinks::Free } else { Kinks::Pinned };
    let config = FusionConfig::default();
    let mut worst = 0.0f64;
    for variant in Variant::ALL {
        for seed in 0..args.seeds {
            let coords = Coordinates::Sampled {
                per_param: args.per_param,
                seed,
            };
            let r = check_model(variant, &config, seed, coords, kinks)?;
            println!(
                "{:<15} seed {seed}: {:.2e} over {} coordinates (worst {:?})",
                variant.name(),
                r.max_rel_error,
                r.checked,
                r.worst
            );
            worst = worst.max(r.max_rel_error);
        }
    }
    println!("max relative error {worst:.2e}");
    ensure!(args.free_kinks || worst <= 1e-3, "gradient check failed");
    Ok(())
}
