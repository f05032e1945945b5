//! Verifies analytic gradients against central finite differences for the
//! differentiable building blocks and for a composite encoder-style chain.
//!
//! Usage: cargo run --example gradient_check

use hyvet::autodiff::grad_check;
use hyvet::hypergraph::PropagationStructure;
use hyvet::{Incidence, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;

    // Contrastive alignment loss with respect to one of its views.
    let b = random(6, 4, &mut rng);
    let err = grad_check(
        |a| {
            let mut tape = Tape::new();
            let av = tape.leaf(a.clone(), true);
            let bv = tape.leaf(b.clone(), false);
            let loss = tape.info_nce(av, bv, 0.5)?;
            tape.backward(loss);
            Ok((tape.scalar(loss), tape.take_grad(av).unwrap()))
        },
        &random(6, 4, &mut rng),
        h,
    )?;
    println!("info_nce          worst rel err {err:.3e}");

    // Hypergraph propagation through the factored operator.
    let incidence = Incidence::new(vec![vec![0, 1, 2], vec![2, 3], vec![0, 3, 4]], 5)?;
    let structure = Rc::new(PropagationStructure::new(&incidence, 1e-12));
    let weights = Tensor::from_vec(3, 1, vec![1.0, 0.8, 1.2]);
    let err = grad_check(
        |z| {
            let mut tape = Tape::new();
            let zv = tape.leaf(z.clone(), true);
            let wv = tape.leaf(weights.clone(), false);
            let prop = tape.propagate(zv, wv, Rc::clone(&structure))?;
            let loss = tape.mse_loss(prop, &Tensor::zeros(5, 3))?;
            tape.backward(loss);
            Ok((tape.scalar(loss), tape.take_grad(zv).unwrap()))
        },
        &random(5, 3, &mut rng),
        h,
    )?;
    println!("propagate         worst rel err {err:.3e}");

    // A composite chain: affine → relu → affine → masked cross-entropy,
    // differentiated with respect to the first weight matrix.
    let x = random(8, 5, &mut rng);
    let w2 = random(6, 2, &mut rng);
    let b1 = Tensor::zeros(1, 6);
    let b2 = Tensor::zeros(1, 2);
    let labels = Rc::new(vec![0u8, 1, 1, 0, 1, 0, 0, 1]);
    let rows = Rc::new((0..8).collect::<Vec<usize>>());
    let err = grad_check(
        |w1| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone(), false);
            let w1v = tape.leaf(w1.clone(), true);
            let b1v = tape.leaf(b1.clone(), false);
            let w2v = tape.leaf(w2.clone(), false);
            let b2v = tape.leaf(b2.clone(), false);
            let hid = tape.affine(xv, w1v, b1v)?;
            let act = tape.relu(hid)?;
            let logits = tape.affine(act, w2v, b2v)?;
            let loss =
                tape.softmax_cross_entropy_masked(logits, Rc::clone(&labels), Rc::clone(&rows))?;
            tape.backward(loss);
            Ok((tape.scalar(loss), tape.take_grad(w1v).unwrap()))
        },
        &random(5, 6, &mut rng),
        h,
    )?;
    println!("mlp chain         worst rel err {err:.3e}");

    Ok(())
}
