//! Early-detection curve: train once on the complete spread history, then
//! re-evaluate the same parameters on copies of the data truncated at
//! increasing time cutoffs, so each item keeps only the users who had
//! participated by that point.
//!
//! Usage: cargo run --example early_detection [epochs]

use hyvet::data::time_window;
use hyvet::model::AblationMode;
use hyvet::synth::{generate_synthetic, SyntheticConfig};
use hyvet::train::{prepare, score, split_edges, train_with_mode, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(150);

    let synth = SyntheticConfig { m: 600, t: 150, ..SyntheticConfig::default() };
    let data = generate_synthetic(&synth)?;

    let mut config = TrainConfig::with_dimension(32);
    config.epochs = epochs;

    println!("training on the full history ({epochs} epochs)…");
    let (params, _) = train_with_mode(&data.hypergraph, None, &config, AblationMode::Full)?;
    let prep = prepare(&data.hypergraph, None, &config)?;
    let split = split_edges(&prep.labels, config.ratios, config.seed)?;

    let accuracy_on_test = |prep: &hyvet::train::PreparedData| -> Result<f64, Box<dyn std::error::Error>> {
        let out = score(prep, &params, &config, AblationMode::Full, &split.train)?;
        let correct = split
            .test
            .iter()
            .filter(|&&e| out.predictions[e] == prep.labels[e])
            .count();
        Ok(correct as f64 / split.test.len() as f64)
    };

    let full_acc = accuracy_on_test(&prep)?;
    let total = data.hypergraph.incidence.incidence_count() as f64;

    println!("\n{:<8} {:>10} {:>16}", "cutoff", "accuracy", "kept incidences");
    let hours = [2.0, 4.0, 8.0, 16.0, 24.0, 36.0, 48.0, 72.0];
    for h in hours {
        let windowed = time_window(&data.hypergraph, h * 3600.0)?;
        let wprep = prepare(&windowed, None, &config)?;
        let acc = accuracy_on_test(&wprep)?;
        let kept = windowed.incidence.incidence_count() as f64 / total;
        println!("{:<8} {acc:>10.4} {kept:>15.1}%", format!("{h}h"), kept = kept * 100.0);
    }
    println!("{:<8} {full_acc:>10.4} {:>15.1}%", "full", 100.0);
    Ok(())
}
