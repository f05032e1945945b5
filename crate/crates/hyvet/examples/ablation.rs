//! Trains each channel-ablation variant on the planted synthetic dataset
//! and prints held-out test accuracy per mode, one stratified split each.
//! (The `ablate` subcommand runs the heavier cross-validated protocol.)
//!
//! Usage: `cargo run --example ablation [epochs] [seed]`

use hyvet::model::AblationMode;
use hyvet::synth::{generate_synthetic, SyntheticConfig};
use hyvet::train::{prepare, score, split_edges, train_with_mode, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(600);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(42);

    let data = generate_synthetic(&SyntheticConfig::default())?;
    let mut config = TrainConfig::with_dimension(64);
    config.epochs = epochs;
    config.seed = seed;

    let prep = prepare(&data.hypergraph, None, &config)?;
    let split = split_edges(&prep.labels, config.ratios, config.seed)?;

    println!("mode          test_acc   l_rec    l_d");
    for mode in AblationMode::ALL {
        let (params, history) = train_with_mode(&data.hypergraph, None, &config, mode)?;
        let outputs = score(&prep, &params, &config, mode, &split.train)?;
        let correct =
            split.test.iter().filter(|&&e| outputs.predictions[e] == prep.labels[e]).count();
        let last = history.records.last().expect("at least one epoch");
        println!(
            "{:<12}  {:.4}     {:.4}   {:.4}",
            mode.name(),
            correct as f64 / split.test.len() as f64,
            last.l_rec,
            last.l_d,
        );
    }
    Ok(())
}
