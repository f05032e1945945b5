//! Stratified k-fold cross-validation on a small synthetic dataset, plus a
//! paired t-test comparing the full model against the credibility-only
//! ablation on the same folds.
//!
//! Usage: cargo run --example cross_validation [epochs]

use hyvet::eval::{paired_t_test, run_ablation};
use hyvet::model::AblationMode;
use hyvet::synth::{generate_synthetic, SyntheticConfig};
use hyvet::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(150);

    let synth = SyntheticConfig { m: 600, t: 150, ..SyntheticConfig::default() };
    let data = generate_synthetic(&synth)?;

    let mut config = TrainConfig::with_dimension(32);
    config.epochs = epochs;

    println!(
        "{}-fold CV on {} users / {} items, {} epochs per fold\n",
        config.folds,
        data.hypergraph.node_count(),
        data.hypergraph.edge_count(),
        epochs
    );

    let full = run_ablation(&data.hypergraph, &config, AblationMode::Full)?;
    println!("full model:");
    println!("{}", full.table());

    let cre = run_ablation(&data.hypergraph, &config, AblationMode::CreOnly)?;
    println!("credibility channel only:");
    println!("{}", cre.table());

    let (t, p) = paired_t_test(&full.fold_accuracy, &cre.fold_accuracy)?;
    println!("paired t-test on fold accuracies: t = {t:.3}, p = {p:.4}");
    println!("fold accuracies, full: {:?}", full.fold_accuracy);
    println!("fold accuracies, cre:  {:?}", cre.fold_accuracy);
    Ok(())
}
