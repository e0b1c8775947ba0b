//! Generates a synthetic dataset directory and reports what is in it.
//!
//! cargo run --release --example gen_dataset -- --out /tmp/avsync-data --clips 64

use std::path::PathBuf;

use anyhow::Result;
use avsync::data::{build_dataset, write_dataset, SyntheticConfig};
use avsync::FusionConfig;
use clap::Parser;

#[derive(Parser)]
struct Args {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    clips: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.3)]
    p_event: f64,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let synthetic = SyntheticConfig {
        p_event: args.p_event,
        ..SyntheticConfig::default()
    };
    let fusion = FusionConfig::default();
    let (train, test) = build_dataset(&synthetic, &fusion, args.clips, args.clips, args.seed)?;
    write_dataset(&args.out, &train, &test)?;

    let all = train.iter().chain(&test);
    let blocks: usize = all.clone().map(|c| c.block_discriminative.len()).sum();
    let hits: usize = all.clone().flat_map(|c| &c.block_discriminative).filter(|&&d| d).count();
    let mut shifts = [0usize; 15];
    for c in all.filter(|c| c.label == 0) {
        shifts[(c.shift_blocks + 7) as usize] += 1;
    }
    println!("{} train / {} test clips -> {}", train.len(), test.len(), args.out.display());
    println!("discriminative blocks: {hits} of {blocks}");
    println!("negative shifts (blocks: count):");
    for (i, n) in shifts.iter().enumerate().filter(|(_, &n)| n > 0) {
        println!("  {:+}: {n}", i as i32 - 7);
    }
    Ok(())
}
