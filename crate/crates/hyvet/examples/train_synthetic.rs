//! Trains the full two-channel model on the default planted synthetic
//! dataset and reports loss trajectory plus held-out test accuracy.
//!
//! Usage: `cargo run --example train_synthetic [epochs]`

use std::time::Instant;

use hyvet::model::AblationMode;
use hyvet::synth::{generate_synthetic, SyntheticConfig};
use hyvet::train::{prepare, score, split_edges, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize =
        std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(600);

    let data = generate_synthetic(&SyntheticConfig::default())?;
    println!(
        "dataset: {} users, {} news items, {} incidences",
        data.hypergraph.node_count(),
        data.hypergraph.edge_count(),
        data.hypergraph.incidence.incidence_count(),
    );

    let mut config = TrainConfig::with_dimension(64);
    config.epochs = epochs;

    let t0 = Instant::now();
    let (params, history) = train(&data.hypergraph, &config)?;
    let elapsed = t0.elapsed().as_secs_f64();

    for r in history.records.iter().step_by((epochs / 10).max(1)) {
        println!(
            "epoch {:>4}  rec {:.4}  mi {:.4}  det {:.4}  total {:.4}  val_acc {:.3}",
            r.epoch, r.l_rec, r.l_mi, r.l_d, r.l_total, r.val_acc
        );
    }
    println!("{epochs} epochs in {elapsed:.1}s ({:.1} ms/epoch)", 1e3 * elapsed / epochs as f64);

    // Score the untouched test split of the same deterministic split the
    // trainer used.
    let prep = prepare(&data.hypergraph, None, &config)?;
    let split = split_edges(&prep.labels, config.ratios, config.seed)?;
    let outputs = score(&prep, &params, &config, AblationMode::Full, &split.train)?;
    let correct = split
        .test
        .iter()
        .filter(|&&e| outputs.predictions[e] == prep.labels[e])
        .count();
    println!("test accuracy: {:.3} ({} of {})", correct as f64 / split.test.len() as f64, correct, split.test.len());
    Ok(())
}
