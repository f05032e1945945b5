//! End-to-end acceptance suite. Each test checks one headline property of
//! the pipeline and prints a single `PASS`/`FAIL` line (run with
//! `cargo test --test acceptance -- --nocapture` to see them all).
//!
//! The heavyweight checks train real models on the planted synthetic
//! dataset, so this suite is minutes of CPU, not seconds.

use std::collections::BTreeSet;
use std::rc::Rc;
use std::time::Instant;

use hyvet::autodiff::grad_check;
use hyvet::data::time_window;
use hyvet::eval::{case_study_stats, compute_metrics, paired_t_test, run_ablation};
use hyvet::hypergraph::{propagation_operator, PropagationStructure};
use hyvet::model::{build_forward, AblationMode, ForwardInputs, ModelDims, ModelParams};
use hyvet::synth::{generate_synthetic, SyntheticConfig};
use hyvet::train::{
    kfold_cv, prepare, score, split_edges, train, train_with_split, write_run_artifacts,
    TrainConfig,
};
use hyvet::{Hypergraph, Incidence, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(label: &str, outcome: Result<(), String>) {
    match outcome {
        Ok(()) => println!("{label}: PASS"),
        Err(why) => {
            println!("{label}: FAIL — {why}");
            panic!("{label}: {why}");
        }
    }
}

fn check(cond: bool, why: impl Fn() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why())
    }
}

/// The standard evaluation configuration for the planted dataset: the
/// default recipe at an embedding width that keeps a full run in
/// milliseconds per epoch.
fn eval_config() -> TrainConfig {
    TrainConfig::with_dimension(64)
}

// ---------------------------------------------------------------------
// 1. The factored propagation operator equals the explicit dense product
//    built from schoolbook matrix arithmetic, on 200 random hypergraphs.
// ---------------------------------------------------------------------

fn schoolbook_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.rows());
    let mut out = Tensor::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a[(i, k)] * b[(k, j)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// D_v^{-1/2} · H · W · D_e^{-1} · Hᵀ · D_v^{-1/2} assembled entirely from
/// dense matrices, sharing no code with the factored implementation.
fn dense_reference(incidence: &Incidence, weights: &[f64], eps: f64) -> Tensor {
    let (m, t) = (incidence.node_count(), incidence.edge_count());
    let mut h = Tensor::zeros(m, t);
    for (e, members) in incidence.edges().iter().enumerate() {
        for &v in members {
            h[(v, e)] = 1.0;
        }
    }
    let mut dv = Tensor::zeros(m, m);
    for v in 0..m {
        let deg: f64 = (0..t).map(|e| h[(v, e)]).sum();
        dv[(v, v)] = if deg == 0.0 { 0.0 } else { 1.0 / deg.sqrt() };
    }
    let mut w_de = Tensor::zeros(t, t);
    for e in 0..t {
        let deg: f64 = (0..m).map(|v| h[(v, e)]).sum();
        w_de[(e, e)] = weights[e] / (deg + eps);
    }
    let ht = Tensor::from_fn(t, m, |i, j| h[(j, i)]);
    let mut s = schoolbook_matmul(&dv, &h);
    s = schoolbook_matmul(&s, &w_de);
    s = schoolbook_matmul(&s, &ht);
    schoolbook_matmul(&s, &dv)
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_operator_oracle() -> Result<(), String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE97);
    for case in 0..200 {
        let m = rng.random_range(2..=50);
        let t = rng.random_range(1..=50);
        let p = rng.random_range(0.05..0.5);
        let edges: Vec<Vec<usize>> = (0..t)
            .map(|_| {
                let mut members: Vec<usize> =
                    (0..m).filter(|_| rng.random::<f64>() < p).collect();
                if members.is_empty() {
                    members.push(rng.random_range(0..m));
                }
                members
            })
            .collect();
        let incidence = Incidence::new(edges, m).map_err(|e| e.to_string())?;
        let weights: Vec<f64> =
            (0..t).map(|_| rng.random_range(0.1..2.0)).collect();
        let eps = 1e-12;

        let op = propagation_operator(&incidence, &weights, eps).map_err(|e| e.to_string())?;
        let reference = dense_reference(&incidence, &weights, eps);

        let diff = max_abs_diff(&op.to_dense(), &reference);
        check(diff <= 1e-12, || {
            format!("case {case} (m={m}, t={t}): dense view differs by {diff:e}")
        })?;

        // The factored application must match dense multiplication too.
        let z = Tensor::from_fn(m, 3, |_, _| rng.random_range(-1.0..1.0));
        let diff = max_abs_diff(&op.apply(&z), &schoolbook_matmul(&reference, &z));
        check(diff <= 1e-12, || {
            format!("case {case} (m={m}, t={t}): factored apply differs by {diff:e}")
        })?;
    }
    let elapsed = started.elapsed().as_secs_f64();
    check(elapsed < 5.0, || format!("200 oracle cases took {elapsed:.2}s (budget 5s)"))
}

#[test]
fn operator_matches_dense_oracle() {
    report("1 operator oracle", criterion_operator_oracle());
}

// ---------------------------------------------------------------------
// 2. Every differentiable op, and the fully composed objective on a
//    6-user/3-edge toy, pass central finite-difference checks.
// ---------------------------------------------------------------------

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Entries bounded away from zero so ReLU kinks stay clear of the finite
/// difference step.
fn offset_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        sign * rng.random_range(0.3..1.0)
    })
}

fn criterion_gradient_suite() -> Result<(), String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE98);
    let h = 1e-5;
    let op_tol = 1e-5;
    let mut results: Vec<(&str, f64)> = Vec::new();

    // Reduce matrix-valued ops to a scalar through a fixed inner product.
    let coeffs47 = random_tensor(4, 7, &mut rng);
    let coeffs45 = random_tensor(4, 5, &mut rng);
    let coeffs410 = random_tensor(4, 10, &mut rng);
    let coeffs35 = random_tensor(3, 5, &mut rng);

    let b_mat = random_tensor(5, 7, &mut rng);
    results.push((
        "matmul",
        grad_check(
            |a| {
                let mut tape = Tape::new();
                let av = tape.leaf(a.clone(), true);
                let bv = tape.leaf(b_mat.clone(), false);
                let prod = tape.matmul(av, bv)?;
                let loss = tape.inner(prod, coeffs47.clone())?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(av).unwrap()))
            },
            &random_tensor(4, 5, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    let aff_w = random_tensor(5, 7, &mut rng);
    let aff_b = random_tensor(1, 7, &mut rng);
    results.push((
        "affine",
        grad_check(
            |x| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true);
                let wv = tape.leaf(aff_w.clone(), false);
                let bv = tape.leaf(aff_b.clone(), false);
                let out = tape.affine(xv, wv, bv)?;
                let loss = tape.inner(out, coeffs47.clone())?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(xv).unwrap()))
            },
            &random_tensor(4, 5, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    results.push((
        "relu",
        grad_check(
            |x| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true);
                let out = tape.relu(xv)?;
                let loss = tape.inner(out, coeffs45.clone())?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(xv).unwrap()))
            },
            &offset_tensor(4, 5, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    results.push((
        "sigmoid",
        grad_check(
            |x| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true);
                let out = tape.sigmoid(xv)?;
                let loss = tape.inner(out, coeffs45.clone())?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(xv).unwrap()))
            },
            &random_tensor(4, 5, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    let add_rhs = random_tensor(4, 5, &mut rng);
    results.push((
        "add",
        grad_check(
            |x| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true);
                let rv = tape.leaf(add_rhs.clone(), false);
                let out = tape.add(xv, rv)?;
                let loss = tape.inner(out, coeffs45.clone())?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(xv).unwrap()))
            },
            &random_tensor(4, 5, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    results.push((
        "scale",
        grad_check(
            |x| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true);
                let out = tape.scale(xv, -1.7)?;
                let loss = tape.inner(out, coeffs45.clone())?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(xv).unwrap()))
            },
            &random_tensor(4, 5, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    let cat_rhs = random_tensor(4, 5, &mut rng);
    results.push((
        "concat_cols",
        grad_check(
            |x| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true);
                let rv = tape.leaf(cat_rhs.clone(), false);
                let out = tape.concat_cols(xv, rv)?;
                let loss = tape.inner(out, coeffs410.clone())?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(xv).unwrap()))
            },
            &random_tensor(4, 5, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    results.push((
        "inner",
        grad_check(
            |x| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true);
                let loss = tape.inner(xv, coeffs45.clone())?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(xv).unwrap()))
            },
            &random_tensor(4, 5, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    let groups = Rc::new(vec![vec![0, 1, 2], vec![2, 3], vec![0, 3, 4, 5]]);
    results.push((
        "mean_pool_rows",
        grad_check(
            |x| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true);
                let out = tape.mean_pool_rows(xv, Rc::clone(&groups))?;
                let loss = tape.inner(out, coeffs35.clone())?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(xv).unwrap()))
            },
            &random_tensor(6, 5, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    let toy_inc =
        Incidence::new(vec![vec![0, 1, 2], vec![2, 3], vec![0, 3, 4, 5]], 6).unwrap();
    let structure = Rc::new(PropagationStructure::new(&toy_inc, 1e-12));
    let prop_w = Tensor::from_vec(3, 1, vec![1.0, 0.7, 1.4]);
    let prop_coeffs = random_tensor(6, 5, &mut rng);
    results.push((
        "propagate (features)",
        grad_check(
            |z| {
                let mut tape = Tape::new();
                let zv = tape.leaf(z.clone(), true);
                let wv = tape.leaf(prop_w.clone(), false);
                let out = tape.propagate(zv, wv, Rc::clone(&structure))?;
                let loss = tape.inner(out, prop_coeffs.clone())?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(zv).unwrap()))
            },
            &random_tensor(6, 5, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    let prop_z = random_tensor(6, 5, &mut rng);
    results.push((
        "propagate (weights)",
        grad_check(
            |w| {
                let mut tape = Tape::new();
                let zv = tape.leaf(prop_z.clone(), false);
                let wv = tape.leaf(w.clone(), true);
                let out = tape.propagate(zv, wv, Rc::clone(&structure))?;
                let loss = tape.inner(out, prop_coeffs.clone())?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(wv).unwrap()))
            },
            &offset_tensor(3, 1, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    let mse_target = random_tensor(4, 5, &mut rng);
    results.push((
        "mse_loss",
        grad_check(
            |x| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true);
                let loss = tape.mse_loss(xv, &mse_target)?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(xv).unwrap()))
            },
            &random_tensor(4, 5, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    let ce_labels = Rc::new(vec![0u8, 1, 1, 0, 1, 0]);
    results.push((
        "softmax_cross_entropy",
        grad_check(
            |x| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true);
                let loss = tape.softmax_cross_entropy(xv, Rc::clone(&ce_labels))?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(xv).unwrap()))
            },
            &random_tensor(6, 2, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    let ce_rows = Rc::new(vec![0usize, 2, 4, 5]);
    results.push((
        "softmax_cross_entropy_masked",
        grad_check(
            |x| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true);
                let loss = tape.softmax_cross_entropy_masked(
                    xv,
                    Rc::clone(&ce_labels),
                    Rc::clone(&ce_rows),
                )?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(xv).unwrap()))
            },
            &random_tensor(6, 2, &mut rng),
            h,
        )
        .map_err(|e| e.to_string())?,
    ));

    let nce_other = random_tensor(6, 4, &mut rng);
    for (label, swap) in [("info_nce (left)", false), ("info_nce (right)", true)] {
        results.push((
            label,
            grad_check(
                |a| {
                    let mut tape = Tape::new();
                    let av = tape.leaf(a.clone(), true);
                    let bv = tape.leaf(nce_other.clone(), false);
                    let loss = if swap {
                        tape.info_nce(bv, av, 0.5)?
                    } else {
                        tape.info_nce(av, bv, 0.5)?
                    };
                    tape.backward(loss);
                    Ok((tape.scalar(loss), tape.take_grad(av).unwrap()))
                },
                &random_tensor(6, 4, &mut rng),
                h,
            )
            .map_err(|e| e.to_string())?,
        ));
    }

    for (op, err) in &results {
        check(*err < op_tol, || format!("{op}: relative error {err:e} ≥ {op_tol:e}"))?;
    }

    // Fully composed objective on a 6-user/3-edge toy, with respect to
    // every parameter tensor.
    let dims = ModelDims { d_u: 4, d_h: 5, d: 6, t: 3 };
    let mut base = ModelParams::init(dims, 11);
    // Nudge biases off their all-zero init so no ReLU sits on its kink.
    for tensor in base.tensors_mut() {
        if tensor.rows() == 1 {
            let cols = tensor.cols();
            *tensor = Tensor::from_fn(1, cols, |_, _| rng.random_range(0.05..0.25));
        }
    }
    let x = random_tensor(6, 4, &mut rng);
    let ze = random_tensor(3, 6, &mut rng);
    let labels = Rc::new(vec![0u8, 1, 0]);
    let train_rows = Rc::new(vec![0usize, 1, 2]);
    let groups = Rc::new(toy_inc.edges().to_vec());

    let model_tol = 1e-4;
    for k in 0..base.tensors().len() {
        let start = base.tensors()[k].clone();
        let err = grad_check(
            |candidate| {
                let mut params = base.clone();
                *params.tensors_mut()[k] = candidate.clone();
                let mut tape = Tape::new();
                let inputs = ForwardInputs {
                    structure: &structure,
                    groups: &groups,
                    x: &x,
                    ze: &ze,
                    labels: &labels,
                    train_rows: &train_rows,
                    alpha: 0.5,
                    tau: 0.5,
                    mode: AblationMode::Full,
                };
                let (leaves, heads) =
                    build_forward(&mut tape, &params, &inputs, true).map_err(|e| match e {
                        hyvet::model::ModelError::Autodiff(a) => a,
                        other => panic!("unexpected forward failure: {other}"),
                    })?;
                tape.backward(heads.total);
                Ok((tape.scalar(heads.total), tape.take_grad(leaves.ids[k]).unwrap()))
            },
            &start,
            h,
        )
        .map_err(|e| e.to_string())?;
        check(err < model_tol, || {
            format!("full objective, parameter {k}: relative error {err:e} ≥ {model_tol:e}")
        })?;
    }

    let elapsed = started.elapsed().as_secs_f64();
    check(elapsed < 10.0, || format!("gradient suite took {elapsed:.2}s (budget 10s)"))
}

#[test]
fn gradients_match_finite_differences() {
    report("2 gradient suite", criterion_gradient_suite());
}

// ---------------------------------------------------------------------
// 3. The full model learns the planted signal (5-fold CV ≥ 0.95 in under
//    3 minutes) and stays at chance on the null control.
// ---------------------------------------------------------------------

fn criterion_planted_signal() -> Result<(), String> {
    let data = generate_synthetic(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let config = eval_config();

    let started = Instant::now();
    let report = kfold_cv(&data.hypergraph, &config).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed().as_secs_f64();

    check(report.accuracy.mean >= 0.95, || {
        format!("planted-signal CV accuracy {:.4} < 0.95", report.accuracy.mean)
    })?;
    check(elapsed < 180.0, || {
        format!("planted-signal CV took {elapsed:.1}s (budget 180s)")
    })?;

    let null = generate_synthetic(&SyntheticConfig::default().null_control())
        .map_err(|e| e.to_string())?;
    let null_report = kfold_cv(&null.hypergraph, &config).map_err(|e| e.to_string())?;
    check(
        (0.40..=0.60).contains(&null_report.accuracy.mean),
        || {
            format!(
                "null-control CV accuracy {:.4} outside [0.40, 0.60]",
                null_report.accuracy.mean
            )
        },
    )
}

#[test]
fn planted_signal_is_learned_and_null_is_chance() {
    report("3 planted signal + null control", criterion_planted_signal());
}

// ---------------------------------------------------------------------
// 4. Channel ablations order as expected on the planted dataset, for
//    three training seeds: full ≥ concat ≥ semantic-only > credibility-
//    only, with a ≥ 0.1 gap between the single channels.
// ---------------------------------------------------------------------

fn criterion_ablation_ordering() -> Result<(), String> {
    let data = generate_synthetic(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let mut config = eval_config();
    config.epochs = 300;

    for seed in [42u64, 7, 19] {
        config.seed = seed;
        let mut acc = std::collections::BTreeMap::new();
        for mode in AblationMode::ALL {
            let report =
                run_ablation(&data.hypergraph, &config, mode).map_err(|e| e.to_string())?;
            acc.insert(mode.name(), report.accuracy.mean);
        }
        let (full, concat, sem, cre) = (
            acc["full"],
            acc["concat_no_mi"],
            acc["sem_only"],
            acc["cre_only"],
        );
        check(full >= concat, || {
            format!("seed {seed}: full {full:.4} < concat_no_mi {concat:.4}")
        })?;
        check(concat >= sem, || {
            format!("seed {seed}: concat_no_mi {concat:.4} < sem_only {sem:.4}")
        })?;
        check(sem > cre, || {
            format!("seed {seed}: sem_only {sem:.4} ≤ cre_only {cre:.4}")
        })?;
        check(sem - cre >= 0.1, || {
            format!("seed {seed}: sem_only − cre_only = {:.4} < 0.1", sem - cre)
        })?;
    }
    Ok(())
}

#[test]
fn ablation_ordering_holds_across_seeds() {
    report("4 ablation ordering", criterion_ablation_ordering());
}

// ---------------------------------------------------------------------
// 5. Early detection: accuracy vs time cutoff is nondecreasing within
//    ±0.03 and reaches 90% of full-data accuracy once half the
//    participation events are visible.
// ---------------------------------------------------------------------

fn criterion_early_detection() -> Result<(), String> {
    let data = generate_synthetic(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let config = eval_config();
    let hypergraph = &data.hypergraph;

    let (params, _) = train(hypergraph, &config).map_err(|e| e.to_string())?;
    let prep = prepare(hypergraph, None, &config).map_err(|e| e.to_string())?;
    let split = split_edges(&prep.labels, config.ratios, config.seed).map_err(|e| e.to_string())?;

    let test_accuracy = |prep: &hyvet::train::PreparedData| -> Result<f64, String> {
        let out = score(prep, &params, &config, AblationMode::Full, &split.train)
            .map_err(|e| e.to_string())?;
        let correct =
            split.test.iter().filter(|&&e| out.predictions[e] == prep.labels[e]).count();
        Ok(correct as f64 / split.test.len() as f64)
    };

    let full_accuracy = test_accuracy(&prep)?;
    let total_incidences = hypergraph.incidence.incidence_count() as f64;

    let hours = [2.0, 4.0, 8.0, 16.0, 24.0, 36.0, 48.0, 72.0];
    let mut curve = Vec::new();
    for &hrs in &hours {
        let windowed = time_window(hypergraph, hrs * 3600.0).map_err(|e| e.to_string())?;
        let wprep = prepare(&windowed, None, &config).map_err(|e| e.to_string())?;
        let accuracy = test_accuracy(&wprep)?;
        let kept = windowed.incidence.incidence_count() as f64 / total_incidences;
        curve.push((hrs, accuracy, kept));
    }

    for window in curve.windows(2) {
        let (h0, a0, _) = window[0];
        let (h1, a1, _) = window[1];
        check(a1 >= a0 - 0.03, || {
            format!("accuracy drops {a0:.4} → {a1:.4} between {h0}h and {h1}h (noise band 0.03)")
        })?;
    }
    check(curve.last().unwrap().1 >= full_accuracy - 0.03, || {
        format!(
            "72h accuracy {:.4} below full-data accuracy {full_accuracy:.4} − 0.03",
            curve.last().unwrap().1
        )
    })?;

    let halfway = curve
        .iter()
        .find(|(_, _, kept)| *kept >= 0.5)
        .ok_or_else(|| "no cutoff reaches 50% of incidences".to_string())?;
    check(halfway.1 >= 0.9 * full_accuracy, || {
        format!(
            "at {}h ({}% incidences) accuracy {:.4} < 0.9 × full {:.4}",
            halfway.0,
            (halfway.2 * 100.0).round(),
            halfway.1,
            full_accuracy
        )
    })
}

#[test]
fn early_detection_curve_shape() {
    report("5 early-detection shape", criterion_early_detection());
}

// ---------------------------------------------------------------------
// 6. Case-study statistics: direction (fake spreads wider and denser)
//    and exact agreement with a brute-force loop oracle.
// ---------------------------------------------------------------------

struct OracleClassStats {
    edges: usize,
    mean_users_per_edge: f64,
    attr_means: Vec<f64>,
    distinct_users: usize,
    coparticipation_density: f64,
}

/// Direct from the definitions, nested loops only.
fn oracle_class_stats(hg: &Hypergraph, class: u8) -> OracleClassStats {
    let labels: Vec<u8> = hg.edge_labels.iter().map(|l| l.unwrap()).collect();
    let class_edges: Vec<&Vec<usize>> = hg
        .incidence
        .edges()
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l == class)
        .map(|(e, _)| e)
        .collect();
    let edges = class_edges.len();
    let mut total_members = 0usize;
    let mut involved = BTreeSet::new();
    for e in &class_edges {
        total_members += e.len();
        for &v in e.iter() {
            involved.insert(v);
        }
    }
    let n = involved.len();
    let mut attr_means = vec![0.0; hg.attr_dim()];
    for &v in &involved {
        for (c, slot) in attr_means.iter_mut().enumerate() {
            *slot += hg.node_attrs[(v, c)];
        }
    }
    for slot in &mut attr_means {
        *slot /= n as f64;
    }
    // A pair co-participates when at least one class edge contains both.
    let mut pairs = BTreeSet::new();
    for e in &class_edges {
        for i in 0..e.len() {
            for j in (i + 1)..e.len() {
                pairs.insert((e[i].min(e[j]), e[i].max(e[j])));
            }
        }
    }
    let possible = n * (n - 1) / 2;
    OracleClassStats {
        edges,
        mean_users_per_edge: total_members as f64 / edges as f64,
        attr_means,
        distinct_users: n,
        coparticipation_density: pairs.len() as f64 / possible as f64,
    }
}

fn criterion_case_study() -> Result<(), String> {
    let data = generate_synthetic(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let stats = case_study_stats(&data.hypergraph).map_err(|e| e.to_string())?;

    check(
        stats.fake.mean_users_per_edge > stats.real.mean_users_per_edge,
        || {
            format!(
                "mean users per edge: fake {:.4} ≤ real {:.4}",
                stats.fake.mean_users_per_edge, stats.real.mean_users_per_edge
            )
        },
    )?;
    check(
        stats.fake.coparticipation_density > stats.real.coparticipation_density,
        || {
            format!(
                "co-participation density: fake {:.6} ≤ real {:.6}",
                stats.fake.coparticipation_density, stats.real.coparticipation_density
            )
        },
    )?;

    for (class, reported) in [(0u8, &stats.real), (1u8, &stats.fake)] {
        let oracle = oracle_class_stats(&data.hypergraph, class);
        check(reported.edges == oracle.edges, || {
            format!("class {class}: edge count {} ≠ oracle {}", reported.edges, oracle.edges)
        })?;
        check(reported.distinct_users == oracle.distinct_users, || {
            format!(
                "class {class}: distinct users {} ≠ oracle {}",
                reported.distinct_users, oracle.distinct_users
            )
        })?;
        let d = (reported.mean_users_per_edge - oracle.mean_users_per_edge).abs();
        check(d <= 1e-12, || {
            format!("class {class}: mean users per edge off by {d:e}")
        })?;
        let d = (reported.coparticipation_density - oracle.coparticipation_density).abs();
        check(d <= 1e-12, || {
            format!("class {class}: co-participation density off by {d:e}")
        })?;
        for (c, (a, b)) in reported.attr_means.iter().zip(&oracle.attr_means).enumerate() {
            let d = (a - b).abs();
            check(d <= 1e-12, || format!("class {class}: attr[{c}] mean off by {d:e}"))?;
        }
    }
    Ok(())
}

#[test]
fn case_study_matches_brute_force() {
    report("6 case-study direction + oracle", criterion_case_study());
}

// ---------------------------------------------------------------------
// 7. Metric arithmetic equals a per-class loop oracle exactly, and
//    t-test p-values match numerical integration of the t density.
// ---------------------------------------------------------------------

fn oracle_metrics(preds: &[u8], labels: &[u8]) -> (f64, f64, f64, f64, [[usize; 2]; 2]) {
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &l) in preds.iter().zip(labels) {
        confusion[l as usize][p as usize] += 1;
    }
    let accuracy = (confusion[0][0] + confusion[1][1]) as f64 / labels.len() as f64;
    let mut ps = Vec::new();
    let mut rs = Vec::new();
    let mut fs = Vec::new();
    for c in 0..2usize {
        if confusion[c][0] + confusion[c][1] == 0 {
            continue;
        }
        let tp = confusion[c][c] as f64;
        let fp = confusion[1 - c][c] as f64;
        let fn_ = confusion[c][1 - c] as f64;
        let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let r = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        ps.push(p);
        rs.push(r);
        fs.push(f);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (accuracy, mean(&ps), mean(&rs), mean(&fs), confusion)
}

/// Two-sided p-value by Simpson integration of the unnormalized t density
/// (1 + x²/ν)^(−(ν+1)/2); the substitution x = c·u/(1−u) maps the tails
/// onto a finite interval. No special functions shared with the library.
fn oracle_two_sided_p(t: f64, dof: f64) -> f64 {
    let density = |x: f64| (1.0 + x * x / dof).powf(-(dof + 1.0) / 2.0);
    // Simpson over u ∈ [0,1) with x = a + u/(1−u), dx = du/(1−u)².
    let integrate_from = |a: f64| -> f64 {
        let n = 40_000usize; // even
        let hstep = 1.0 / n as f64;
        let eval = |u: f64| {
            let one_minus = 1.0 - u;
            if one_minus <= 1e-12 {
                return 0.0;
            }
            density(a + u / one_minus) / (one_minus * one_minus)
        };
        let mut sum = eval(0.0);
        for i in 1..n {
            let u = i as f64 * hstep;
            sum += eval(u) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * hstep / 3.0
    };
    let tail = integrate_from(t.abs());
    let half = integrate_from(0.0);
    (tail / half).min(1.0)
}

fn criterion_metric_arithmetic() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE99);
    for case in 0..1000 {
        let n = rng.random_range(1..=200);
        // A spread of regimes: balanced, skewed, single-class.
        let p_fake = [0.5, 0.5, 0.9, 0.1, 0.0, 1.0][case % 6];
        let labels: Vec<u8> =
            (0..n).map(|_| u8::from(rng.random::<f64>() < p_fake)).collect();
        let preds: Vec<u8> = labels
            .iter()
            .map(|&l| if rng.random::<f64>() < 0.8 { l } else { 1 - l })
            .collect();

        let report = compute_metrics(&preds, &labels).map_err(|e| e.to_string())?;
        let (acc, prec, rec, f1, confusion) = oracle_metrics(&preds, &labels);
        check(report.accuracy.mean == acc, || {
            format!("case {case}: accuracy {} ≠ oracle {acc}", report.accuracy.mean)
        })?;
        check(report.precision.mean == prec, || {
            format!("case {case}: precision {} ≠ oracle {prec}", report.precision.mean)
        })?;
        check(report.recall.mean == rec, || {
            format!("case {case}: recall {} ≠ oracle {rec}", report.recall.mean)
        })?;
        check(report.f1.mean == f1, || {
            format!("case {case}: f1 {} ≠ oracle {f1}", report.f1.mean)
        })?;
        check(report.confusion == confusion, || {
            format!("case {case}: confusion {:?} ≠ oracle {confusion:?}", report.confusion)
        })?;
    }

    // p-values against the numerical oracle, over a range of sizes and
    // effect strengths (skipping the pinned degenerate cases).
    let mut checked = 0usize;
    for case in 0..200 {
        let n = rng.random_range(5..=30);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let shift = [0.0, 0.02, 0.1][case % 3];
        let b: Vec<f64> =
            a.iter().map(|v| v + shift + rng.random_range(-0.05..0.05)).collect();
        let (t, p) = paired_t_test(&a, &b).map_err(|e| e.to_string())?;
        if !t.is_finite() || t == 0.0 {
            continue;
        }
        let expected = oracle_two_sided_p(t, (n - 1) as f64);
        let d = (p - expected).abs();
        check(d <= 1e-6, || {
            format!("case {case}: p {p:.9} vs numerical {expected:.9} (|Δ| = {d:e}, t = {t:.4})")
        })?;
        checked += 1;
    }
    check(checked >= 150, || {
        format!("only {checked} non-degenerate t-test cases exercised")
    })
}

#[test]
fn metric_arithmetic_matches_oracles() {
    report("7 metric arithmetic", criterion_metric_arithmetic());
}

// ---------------------------------------------------------------------
// 8. Determinism and leakage: identical (data, config, seed) reproduce
//    artifacts byte-for-byte (wall-clock column aside), and perturbing
//    test-split labels cannot change the trained parameters.
// ---------------------------------------------------------------------

fn strip_seconds_column(csv: &str) -> String {
    csv.lines()
        .map(|line| match line.rfind(',') {
            Some(pos) => &line[..pos],
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_determinism_and_leakage() -> Result<(), String> {
    let data = generate_synthetic(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let mut config = eval_config();
    config.epochs = 120;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (dir_a, dir_b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&dir_a, &dir_b] {
        let (params, history) = train(&data.hypergraph, &config).map_err(|e| e.to_string())?;
        write_run_artifacts(out, &config, &params, &history).map_err(|e| e.to_string())?;
    }
    for name in ["config.txt", "params.ckpt"] {
        let a = std::fs::read(dir_a.join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir_b.join(name)).map_err(|e| e.to_string())?;
        check(a == b, || format!("{name} differs between identical runs"))?;
    }
    let a = std::fs::read_to_string(dir_a.join("history.csv")).map_err(|e| e.to_string())?;
    let b = std::fs::read_to_string(dir_b.join("history.csv")).map_err(|e| e.to_string())?;
    check(strip_seconds_column(&a) == strip_seconds_column(&b), || {
        "history.csv differs between identical runs beyond the wall-clock column".to_string()
    })?;

    // Leakage: flip every test label under a fixed split; the training
    // trajectory must not move by a single bit.
    let labels: Vec<u8> =
        data.hypergraph.edge_labels.iter().map(|l| l.unwrap()).collect();
    let split = split_edges(&labels, config.ratios, config.seed).map_err(|e| e.to_string())?;
    let mut perturbed = data.hypergraph.clone();
    for &e in &split.test {
        perturbed.edge_labels[e] = perturbed.edge_labels[e].map(|l| 1 - l);
    }
    let (params_clean, _) =
        train_with_split(&data.hypergraph, None, &config, AblationMode::Full, &split)
            .map_err(|e| e.to_string())?;
    let (params_perturbed, _) =
        train_with_split(&perturbed, None, &config, AblationMode::Full, &split)
            .map_err(|e| e.to_string())?;
    for (k, (a, b)) in
        params_clean.tensors().iter().zip(params_perturbed.tensors().iter()).enumerate()
    {
        check(a.data() == b.data(), || {
            format!("parameter {k} changed when test labels were perturbed")
        })?;
    }
    Ok(())
}

#[test]
fn determinism_and_leakage_guarantees() {
    report("8 determinism + leakage", criterion_determinism_and_leakage());
}

// ---------------------------------------------------------------------
// 9. Performance envelope: < 50 ms/epoch at the default scale and
//    < 2 s/epoch at 10× users and edges, measured from run history.
// ---------------------------------------------------------------------

fn mean_epoch_seconds(hg: &Hypergraph, config: &TrainConfig) -> Result<f64, String> {
    let (_, history) = train(hg, config).map_err(|e| e.to_string())?;
    let secs: Vec<f64> = history.records.iter().map(|r| r.seconds).collect();
    Ok(secs.iter().sum::<f64>() / secs.len() as f64)
}

fn criterion_performance() -> Result<(), String> {
    let mut config = eval_config();
    config.epochs = 5;

    let data = generate_synthetic(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let per_epoch = mean_epoch_seconds(&data.hypergraph, &config)?;
    check(per_epoch < 0.050, || {
        format!("default scale: {:.1} ms/epoch ≥ 50 ms", per_epoch * 1e3)
    })?;

    let big = SyntheticConfig { m: 20_000, t: 4_000, ..SyntheticConfig::default() };
    let data = generate_synthetic(&big).map_err(|e| e.to_string())?;
    config.epochs = 3;
    let per_epoch = mean_epoch_seconds(&data.hypergraph, &config)?;
    check(per_epoch < 2.0, || {
        format!("10× scale: {:.2} s/epoch ≥ 2 s", per_epoch)
    })
}

#[test]
fn performance_envelope() {
    report("9 performance envelope", criterion_performance());
}
