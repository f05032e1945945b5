//! Scratch probe for generator/trainer tuning. Not part of the examples
//! set — deleted once defaults are frozen.
//!
//! Usage: tune <epochs> <seed> <vocab> <gap> <two_stage> <text_lo> <text_hi>

use hyvet::model::AblationMode;
use hyvet::synth::{generate_synthetic, SyntheticConfig};
use hyvet::train::{prepare, score, split_edges, train_with_mode, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(42);
    let vocab: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(500);
    let gap: f64 = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(0.15);
    let two_stage: bool = args.get(4).map(|s| s.parse()).transpose()?.unwrap_or(false);
    let text_lo: usize = args.get(5).map(|s| s.parse()).transpose()?.unwrap_or(8);
    let text_hi: usize = args.get(6).map(|s| s.parse()).transpose()?.unwrap_or(20);

    let synth = SyntheticConfig {
        vocab_size: vocab,
        credible_mean: gap,
        uncredible_mean: -gap,
        text_len: (text_lo, text_hi),
        ..SyntheticConfig::default()
    };
    let data = generate_synthetic(&synth)?;
    let mut config = TrainConfig::with_dimension(64);
    config.epochs = epochs;
    config.seed = seed;
    config.cre_two_stage = two_stage;

    let cv: bool = args.get(7).map(|s| s.parse()).transpose()?.unwrap_or(false);
    if cv {
        print!("CV epochs={epochs} seed={seed} vocab={vocab} gap={gap} | ");
        for mode in AblationMode::ALL {
            let report = hyvet::eval::run_ablation(&data.hypergraph, &config, mode)?;
            print!("{}={:.4} ", mode.name(), report.accuracy.mean);
        }
        println!();
        return Ok(());
    }

    let prep = prepare(&data.hypergraph, None, &config)?;
    let split = split_edges(&prep.labels, config.ratios, config.seed)?;
    print!("epochs={epochs} seed={seed} vocab={vocab} gap={gap} two_stage={two_stage} text={text_lo}..{text_hi} | ");
    for mode in AblationMode::ALL {
        let (params, _) = train_with_mode(&data.hypergraph, None, &config, mode)?;
        let outputs = score(&prep, &params, &config, mode, &split.train)?;
        let correct =
            split.test.iter().filter(|&&e| outputs.predictions[e] == prep.labels[e]).count();
        print!("{}={:.4} ", mode.name(), correct as f64 / split.test.len() as f64);
    }
    println!();
    Ok(())
}
