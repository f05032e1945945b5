//! Trains a small model and writes the fused per-item embeddings
//! (credibility view next to semantic view) to a CSV file for downstream
//! analysis or visualization.
//!
//! Usage: cargo run --example export_embeddings [out.csv]

use hyvet::eval::export_embeddings;
use hyvet::model::AblationMode;
use hyvet::synth::{generate_synthetic, SyntheticConfig};
use hyvet::train::{prepare, score, split_edges, train_with_mode, TrainConfig};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let out: PathBuf =
        args.get(1).map(PathBuf::from).unwrap_or_else(|| "runs/example-embeddings.csv".into());

    let synth = SyntheticConfig { m: 600, t: 150, ..SyntheticConfig::default() };
    let data = generate_synthetic(&synth)?;

    let mut config = TrainConfig::with_dimension(32);
    config.epochs = 150;

    let (params, _) = train_with_mode(&data.hypergraph, None, &config, AblationMode::Full)?;
    let prep = prepare(&data.hypergraph, None, &config)?;
    let split = split_edges(&prep.labels, config.ratios, config.seed)?;
    let outputs = score(&prep, &params, &config, AblationMode::Full, &split.train)?;

    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    export_embeddings(&data.edge_ids, &prep.labels, &outputs, &out)?;

    let written = std::fs::read_to_string(&out)?;
    let mut lines = written.lines();
    println!("wrote {} rows to {}", written.lines().count() - 1, out.display());
    println!("header: {}", lines.next().unwrap());
    if let Some(first) = lines.next() {
        let short: String = first.chars().take(80).collect();
        println!("first row: {short}…");
    }
    Ok(())
}
