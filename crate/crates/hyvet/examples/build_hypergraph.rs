//! Builds a small hypergraph by hand and inspects its structure: degree
//! vectors, isolated nodes, the normalized propagation operator, and the
//! user co-participation projection.
//!
//! Usage: cargo run --example build_hypergraph

use hyvet::hypergraph::propagation_operator;
use hyvet::{Incidence, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Six users, four news items. User 5 never participates.
    let edges = vec![vec![0, 1, 2], vec![1, 2, 3], vec![3, 4], vec![0, 4]];
    let incidence = Incidence::new(edges, 6)?;

    println!("users: {}, items: {}", incidence.node_count(), incidence.edge_count());
    println!("user degrees: {:?}", incidence.node_degrees());
    println!("item sizes:   {:?}", incidence.edge_degrees());
    println!("isolated users: {:?}", incidence.isolated_nodes());

    let pairs = incidence.coparticipation_projection();
    println!("co-participating pairs ({}):", pairs.len());
    for (a, b) in &pairs {
        println!("  u{a} — u{b}");
    }

    // Unit edge weights give the plain normalized operator.
    let op = propagation_operator(&incidence, &[1.0; 4], 1e-12)?;
    let dense = op.to_dense();
    println!("\npropagation operator (dense view):");
    for i in 0..dense.rows() {
        let row: Vec<String> = dense.row(i).iter().map(|v| format!("{v:6.3}")).collect();
        println!("  [{}]", row.join(" "));
    }

    // Applying the operator to a one-hot signal shows how mass spreads
    // to co-participants; the isolated user receives nothing.
    let mut signal = Tensor::zeros(6, 1);
    signal.data_mut()[0] = 1.0;
    let spread = op.apply(&signal);
    println!("\none step of propagation from u0:");
    for (i, v) in spread.data().iter().enumerate() {
        println!("  u{i}: {v:.4}");
    }
    Ok(())
}
