//! Demonstrates the hashed n-gram text embedder: unit norms, determinism,
//! sensitivity to the hash seed, and cosine similarity between texts.
//!
//! Usage: cargo run --example text_embedding

use hyvet::embed::{embed_all, embed_text, EmbedderConfig};
use hyvet::tensor::lane_dot;

fn main() {
    let config = EmbedderConfig::hashed(64);

    let texts: Vec<String> = [
        "breaking news: mayor opens new hospital wing downtown",
        "mayor opens new hospital wing, city celebrates",
        "you won't believe this one weird trick doctors hate",
        "shocking secret trick exposed, doctors furious",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let matrix = embed_all(&texts, &config);
    println!("embedded {} texts into dimension {}", matrix.rows(), matrix.cols());
    for i in 0..matrix.rows() {
        let norm = lane_dot(matrix.row(i), matrix.row(i)).sqrt();
        println!("  text {i}: norm {norm:.6}");
    }

    println!("\ncosine similarities:");
    for i in 0..texts.len() {
        for j in (i + 1)..texts.len() {
            let cos = lane_dot(matrix.row(i), matrix.row(j));
            println!("  ({i},{j}): {cos:+.4}");
        }
    }
    println!("related headlines score far above unrelated ones.");

    // Same text, same config → identical vector, every run, any platform.
    let a = embed_text(&texts[0], &config);
    let b = embed_text(&texts[0], &config);
    assert_eq!(a, b);
    println!("\ndeterminism: repeated embedding is bit-identical");

    // A different hash seed relocates every bucket but keeps unit norm.
    let reseeded = EmbedderConfig { hash_seed: 99, ..config };
    let c = embed_text(&texts[0], &reseeded);
    let norm_c = lane_dot(&c, &c).sqrt();
    println!("hash seed 99: vector changed = {}, norm {norm_c:.6}", a != c);

    // Empty text embeds to the zero vector rather than failing.
    let empty = embed_text("", &EmbedderConfig::hashed(64));
    assert!(empty.iter().all(|&v| v == 0.0));
    println!("empty text embeds to the zero vector");
}
