//! End-to-end training: stratified splits, the fixed-epoch optimization
//! loop, k-fold cross-validation, and run artifacts.
//!
//! Everything here is deterministic given (dataset, config, seed): splits
//! and initialization draw from sub-seeded generators, training is
//! full-batch (no minibatch composition to vary), and folds use
//! independent derived seeds so their results do not depend on execution
//! order. The supervised loss only ever sees training-split labels;
//! reconstruction and the contrastive term are unsupervised and computed
//! transductively on the whole hypergraph.

use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape};
use crate::embed::{embed_all, fnv1a64, EmbedderConfig};
use crate::eval::{compute_metrics, MetricsReport};
use crate::hypergraph::{Hypergraph, PropagationStructure};
use crate::model::{
    build_forward, AblationMode, ForwardInputs, ForwardOutputs, ModelDims, ModelError,
    ModelParams,
};
use crate::optim::{clamp_min, AdamState};
use crate::seeding::{sub_seed, sub_seed_indexed, tags};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("too few edges: {0}")]
    TooFewEdges(String),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("every edge needs a label to train")]
    MissingLabels,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("failed to write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Hyperparameters and protocol settings for one run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Embedding width shared by both channels.
    pub d: usize,
    /// Hidden width of the MLPs and the first conv layer; `None` means d.
    pub d_h: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    /// Weight of the contrastive term in the objective.
    pub alpha: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Train/validation/test fractions.
    pub ratios: [f64; 3],
    pub folds: usize,
    pub seed: u64,
    /// Guard added to edge degrees in the propagation operator.
    pub eps: f64,
    pub embedder: EmbedderConfig,
    /// Optional credibility-only ablation variant: train the autoencoder
    /// alone first, then fit only the classifier on the frozen pooled
    /// embeddings (each phase runs `epochs`).
    pub cre_two_stage: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::with_dimension(768)
    }
}

impl TrainConfig {
    /// Defaults with both channels at width `d`.
    pub fn with_dimension(d: usize) -> TrainConfig {
        TrainConfig {
            d,
            d_h: None,
            epochs: 600,
            lr: 0.001,
            alpha: 0.5,
            tau: 0.5,
            ratios: [0.7, 0.1, 0.2],
            folds: 5,
            seed: 42,
            eps: 1e-12,
            embedder: EmbedderConfig::hashed(d),
            cre_two_stage: false,
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.d_h.unwrap_or(self.d)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.d == 0 {
            return bad("d must be ≥ 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be ≥ 2, got {}", self.folds));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive and finite, got {}", self.lr));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be ≥ 0 and finite, got {}", self.alpha));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be positive and finite, got {}", self.tau));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios must sum to 1, got {sum}"));
        }
        if self.ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return bad(format!("split ratios must lie in [0,1], got {:?}", self.ratios));
        }
        self.embedder.validate().map_err(TrainError::InvalidConfig)?;
        if self.embedder.dimension != self.d {
            return bad(format!(
                "embedder dimension {} must match d {}",
                self.embedder.dimension, self.d
            ));
        }
        Ok(())
    }

    /// Canonical key=value snapshot; doubles as the config-hash preimage
    /// and the `config.txt` artifact, and parses back through the
    /// config-file reader.
    pub fn canonical_string(&self) -> String {
        let e = &self.embedder;
        format!(
            "train.d={}\ntrain.d_h={}\ntrain.epochs={}\ntrain.lr={}\ntrain.alpha={}\n\
             train.tau={}\ntrain.ratios={},{},{}\ntrain.folds={}\ntrain.seed={}\n\
             train.eps={:e}\ntrain.cre_two_stage={}\nembed.kind={}\nembed.d={}\n\
             embed.ngram_min={}\nembed.ngram_max={}\nembed.hash_seed={}\nembed.lowercase={}\n",
            self.d,
            self.hidden_width(),
            self.epochs,
            self.lr,
            self.alpha,
            self.tau,
            self.ratios[0],
            self.ratios[1],
            self.ratios[2],
            self.folds,
            self.seed,
            self.eps,
            self.cre_two_stage,
            e.kind,
            e.dimension,
            e.ngram_min,
            e.ngram_max,
            e.hash_seed,
            e.lowercase,
        )
    }

    /// Stable hash of the canonical snapshot, recorded in checkpoints.
    pub fn config_hash(&self) -> u64 {
        fnv1a64(0, self.canonical_string().as_bytes())
    }
}

/// One epoch's loss values, validation accuracy (measured on that epoch's
/// forward pass, before the parameter update), and wall-clock seconds.
#[derive(Copy, Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_rec: f64,
    pub l_mi: f64,
    pub l_d: f64,
    pub l_total: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

/// Full per-epoch trace of one training run.
#[derive(Clone, Debug, Default)]
pub struct RunHistory {
    pub records: Vec<EpochRecord>,
}

impl RunHistory {
    pub fn all_finite(&self) -> bool {
        self.records.iter().all(|r| {
            [r.l_rec, r.l_mi, r.l_d, r.l_total, r.val_acc, r.seconds]
                .iter()
                .all(|v| v.is_finite())
        })
    }

    /// Comma-separated table. The `seconds` column is wall-clock and is
    /// the one field of a run that is not reproducible bit-for-bit.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_rec,l_mi,l_d,l_total,val_acc,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.l_rec, r.l_mi, r.l_d, r.l_total, r.val_acc, r.seconds
            ));
        }
        out
    }
}

/// Disjoint, exhaustive edge index sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder apportionment of `total` into `ratios.len()` parts;
/// leftover units go to the largest fractional parts, ties to the lower
/// index.
fn largest_remainder(total: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| total as f64 * r).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &s in order.iter().take(total - assigned) {
        sizes[s] += 1;
    }
    sizes
}

/// Stratified cell sizes: `result[class][split]` units of each class per
/// split, such that rows sum to the class counts and columns sum to the
/// largest-remainder split sizes for the whole population. Within those
/// constraints, leftover units go to the cells with the largest fractional
/// quota (ties: lower split index, then lower class index).
fn stratified_cell_sizes(class_counts: &[usize], ratios: &[f64]) -> Vec<Vec<usize>> {
    let total: usize = class_counts.iter().sum();
    let split_sizes = largest_remainder(total, ratios);
    let quotas: Vec<Vec<f64>> = class_counts
        .iter()
        .map(|&tc| ratios.iter().map(|r| tc as f64 * r).collect())
        .collect();
    let mut cells: Vec<Vec<usize>> =
        quotas.iter().map(|row| row.iter().map(|q| q.floor() as usize).collect()).collect();
    let mut row_deficit: Vec<usize> = class_counts
        .iter()
        .zip(&cells)
        .map(|(&tc, row)| tc - row.iter().sum::<usize>())
        .collect();
    let mut col_deficit: Vec<usize> = (0..ratios.len())
        .map(|s| split_sizes[s] - cells.iter().map(|row| row[s]).sum::<usize>())
        .collect();
    // Row and column deficits have equal totals, so an eligible cell always
    // exists while any deficit remains.
    while row_deficit.iter().sum::<usize>() > 0 {
        let mut best: Option<(usize, usize, f64)> = None;
        for (c, row) in quotas.iter().enumerate() {
            if row_deficit[c] == 0 {
                continue;
            }
            for (s, q) in row.iter().enumerate() {
                if col_deficit[s] == 0 {
                    continue;
                }
                let frac = q - q.floor();
                let better = match best {
                    None => true,
                    Some((bc, bs, bf)) => {
                        frac > bf || (frac == bf && (s < bs || (s == bs && c < bc)))
                    }
                };
                if better {
                    best = Some((c, s, frac));
                }
            }
        }
        let (c, s, _) = best.expect("deficit totals match");
        cells[c][s] += 1;
        row_deficit[c] -= 1;
        col_deficit[s] -= 1;
    }
    cells
}

/// Shuffles each class's indices with its own derived generator and deals
/// them contiguously into splits of the given cell sizes.
fn deal_stratified(
    labels: &[u8],
    cells: &[Vec<usize>],
    seed: u64,
) -> Vec<Vec<usize>> {
    let n_splits = cells[0].len();
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n_splits];
    for class in 0..cells.len() {
        let mut idx: Vec<usize> =
            (0..labels.len()).filter(|&i| usize::from(labels[i]) == class).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed_indexed(seed, tags::SPLIT, class as u64));
        idx.shuffle(&mut rng);
        let mut cursor = 0;
        for (s, &take) in cells[class].iter().enumerate() {
            out[s].extend_from_slice(&idx[cursor..cursor + take]);
            cursor += take;
        }
    }
    for split in &mut out {
        split.sort_unstable();
    }
    out
}

/// Stratified train/validation/test split over edge labels.
/// Deterministic per seed; errors if any of the three sets comes out empty.
pub fn split_edges(labels: &[u8], ratios: [f64; 3], seed: u64) -> Result<Split, TrainError> {
    let class_counts = [
        labels.iter().filter(|&&l| l == 0).count(),
        labels.iter().filter(|&&l| l == 1).count(),
    ];
    let cells = stratified_cell_sizes(&class_counts, &ratios);
    let mut parts = deal_stratified(labels, &cells, seed);
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    for (name, part) in [("train", &train), ("validation", &val), ("test", &test)] {
        if part.is_empty() {
            return Err(TrainError::TooFewEdges(format!(
                "{name} split is empty for {} edges with ratios {ratios:?}",
                labels.len()
            )));
        }
    }
    Ok(Split { train, val, test })
}

/// Stratified fold test sets: per class, indices are shuffled with a
/// class-derived generator and dealt round-robin over folds.
pub(crate) fn fold_test_sets(
    labels: &[u8],
    folds: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, TrainError> {
    let mut sets: Vec<Vec<usize>> = vec![Vec::new(); folds];
    for class in 0..2u64 {
        let mut idx: Vec<usize> =
            (0..labels.len()).filter(|&i| u64::from(labels[i]) == class).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed_indexed(seed, tags::FOLD, class));
        idx.shuffle(&mut rng);
        for (i, e) in idx.into_iter().enumerate() {
            sets[i % folds].push(e);
        }
    }
    for set in &mut sets {
        set.sort_unstable();
    }
    if let Some(empty) = sets.iter().position(Vec::is_empty) {
        return Err(TrainError::TooFewEdges(format!(
            "fold {empty} has an empty test set ({} edges over {folds} folds)",
            labels.len()
        )));
    }
    Ok(sets)
}

/// Everything shared by all folds/epochs of one dataset + config:
/// propagation structure, pooling groups, attributes, text embeddings,
/// and the complete label vector.
pub struct PreparedData {
    pub structure: Rc<PropagationStructure>,
    pub groups: Rc<Vec<Vec<usize>>>,
    pub x: Tensor,
    pub ze: Tensor,
    pub labels: Vec<u8>,
}

/// Validates the config against the data and assembles [`PreparedData`].
/// Texts are embedded here (or the precomputed matrix is shape-checked),
/// so repeated training runs can share the work.
pub fn prepare(
    hypergraph: &Hypergraph,
    precomputed: Option<&Tensor>,
    config: &TrainConfig,
) -> Result<PreparedData, TrainError> {
    config.validate()?;
    let labels = hypergraph.complete_labels().ok_or(TrainError::MissingLabels)?;
    let ze = match precomputed {
        Some(m) => {
            if m.shape() != (hypergraph.edge_count(), config.d) {
                return Err(TrainError::InvalidConfig(format!(
                    "precomputed embeddings are {:?}, expected ({}, {})",
                    m.shape(),
                    hypergraph.edge_count(),
                    config.d
                )));
            }
            m.clone()
        }
        None => embed_all(&hypergraph.edge_texts, &config.embedder),
    };
    Ok(PreparedData {
        structure: Rc::new(PropagationStructure::new(&hypergraph.incidence, config.eps)),
        groups: Rc::new(hypergraph.incidence.edges().to_vec()),
        x: hypergraph.node_attrs.clone(),
        ze,
        labels,
    })
}

fn accuracy_on_rows(logits: &Tensor, labels: &[u8], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let correct = rows
        .iter()
        .filter(|&&e| u8::from(logits[(e, 1)] > logits[(e, 0)]) == labels[e])
        .count();
    correct as f64 / rows.len() as f64
}

/// Which loss head drives an optimization phase, and which parameter
/// slots the optimizer may move.
#[derive(Copy, Clone)]
enum Phase {
    /// The mode's composite objective, all parameters.
    Objective,
    /// Reconstruction only, all parameters (classifier gets no gradient).
    ReconstructionOnly,
    /// Supervised loss only, classifier parameters only.
    ClassifierOnly,
}

fn run_phase(
    params: &mut ModelParams,
    prep: &PreparedData,
    train_rows: &Rc<Vec<usize>>,
    val_rows: &[usize],
    config: &TrainConfig,
    mode: AblationMode,
    phase: Phase,
    history: &mut RunHistory,
) -> Result<(), TrainError> {
    let shapes = ModelParams::shapes(params.dims);
    let mut adam = AdamState::new(config.lr, &shapes);
    let labels = Rc::new(prep.labels.clone());
    // Slots 9.. are the classifier blocks (see PARAM_NAMES ordering).
    let slot_allowed = |slot: usize| match phase {
        Phase::Objective | Phase::ReconstructionOnly => true,
        Phase::ClassifierOnly => slot >= 9,
    };
    let epoch_base = history.records.len();
    for e in 1..=config.epochs {
        let epoch = epoch_base + e;
        let t0 = Instant::now();
        let inputs = ForwardInputs {
            structure: &prep.structure,
            groups: &prep.groups,
            x: &prep.x,
            ze: &prep.ze,
            labels: &labels,
            train_rows,
            alpha: config.alpha,
            tau: config.tau,
            mode,
        };
        let mut tape = Tape::new();
        let (leaves, heads) = match build_forward(&mut tape, params, &inputs, true) {
            Ok(pair) => pair,
            Err(ModelError::Autodiff(AutodiffError::NonFinite { .. })) => {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            Err(other) => return Err(other.into()),
        };
        let (l_rec, l_mi, l_d, l_total) = (
            tape.scalar(heads.l_rec),
            tape.scalar(heads.l_mi),
            tape.scalar(heads.l_d),
            tape.scalar(heads.total),
        );
        let head = match phase {
            Phase::Objective => heads.total,
            Phase::ReconstructionOnly => heads.l_rec,
            Phase::ClassifierOnly => heads.l_d,
        };
        tape.backward(head);
        let grads: Vec<Tensor> = leaves
            .ids
            .iter()
            .enumerate()
            .map(|(slot, &id)| {
                let zero = || Tensor::zeros(shapes[slot].0, shapes[slot].1);
                if slot_allowed(slot) {
                    tape.take_grad(id).unwrap_or_else(zero)
                } else {
                    zero()
                }
            })
            .collect();
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        let mut param_refs = params.tensors_mut();
        adam.step(&mut param_refs, &grad_refs);
        drop(param_refs);
        clamp_min(&mut params.edge_w, 0.0);

        let val_acc = accuracy_on_rows(tape.value(heads.logits), &prep.labels, val_rows);
        history.records.push(EpochRecord {
            epoch,
            l_rec,
            l_mi,
            l_d,
            l_total,
            val_acc,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(())
}

/// Core loop shared by plain training and CV folds: seeded init, fixed
/// epochs, Adam, edge weights clamped nonnegative after every step.
fn run_training_loop(
    prep: &PreparedData,
    train_rows: Vec<usize>,
    val_rows: Vec<usize>,
    config: &TrainConfig,
    mode: AblationMode,
    run_seed: u64,
) -> Result<(ModelParams, RunHistory), TrainError> {
    let dims = ModelDims {
        d_u: prep.x.cols(),
        d_h: config.hidden_width(),
        d: config.d,
        t: prep.labels.len(),
    };
    let mut params = ModelParams::init(dims, sub_seed(run_seed, tags::INIT));
    let mut history = RunHistory::default();
    let train_rows = Rc::new(train_rows);
    let two_stage = mode == AblationMode::CreOnly && config.cre_two_stage;
    if two_stage {
        run_phase(
            &mut params,
            prep,
            &train_rows,
            &val_rows,
            config,
            mode,
            Phase::ReconstructionOnly,
            &mut history,
        )?;
        run_phase(
            &mut params,
            prep,
            &train_rows,
            &val_rows,
            config,
            mode,
            Phase::ClassifierOnly,
            &mut history,
        )?;
    } else {
        run_phase(
            &mut params,
            prep,
            &train_rows,
            &val_rows,
            config,
            mode,
            Phase::Objective,
            &mut history,
        )?;
    }
    Ok((params, history))
}

/// Trains on the stratified train split with validation tracking; the test
/// split stays untouched for later evaluation.
pub fn train(
    hypergraph: &Hypergraph,
    config: &TrainConfig,
) -> Result<(ModelParams, RunHistory), TrainError> {
    train_with_mode(hypergraph, None, config, AblationMode::Full)
}

/// `train` with explicit channel configuration and optional precomputed
/// text embeddings.
pub fn train_with_mode(
    hypergraph: &Hypergraph,
    precomputed: Option<&Tensor>,
    config: &TrainConfig,
    mode: AblationMode,
) -> Result<(ModelParams, RunHistory), TrainError> {
    let prep = prepare(hypergraph, precomputed, config)?;
    let split = split_edges(&prep.labels, config.ratios, config.seed)?;
    run_training_loop(&prep, split.train, split.val, config, mode, config.seed)
}

/// `train` against a caller-supplied split instead of deriving one from
/// the labels. This is the right entry point for leakage experiments:
/// the stratified split itself depends on every label, so holding the
/// split fixed is what isolates the gradient path.
pub fn train_with_split(
    hypergraph: &Hypergraph,
    precomputed: Option<&Tensor>,
    config: &TrainConfig,
    mode: AblationMode,
    split: &Split,
) -> Result<(ModelParams, RunHistory), TrainError> {
    let prep = prepare(hypergraph, precomputed, config)?;
    let t = prep.labels.len();
    if split.train.iter().chain(&split.val).chain(&split.test).any(|&e| e >= t) {
        return Err(TrainError::InvalidConfig(format!(
            "split references an edge index ≥ {t}"
        )));
    }
    if split.train.is_empty() {
        return Err(TrainError::TooFewEdges("supplied split has an empty train set".into()));
    }
    run_training_loop(&prep, split.train.clone(), split.val.clone(), config, mode, config.seed)
}

/// Stratified k-fold cross-validation of the full model.
pub fn kfold_cv(
    hypergraph: &Hypergraph,
    config: &TrainConfig,
) -> Result<MetricsReport, TrainError> {
    kfold_cv_with_mode(hypergraph, None, config, AblationMode::Full)
}

/// K-fold cross-validation with explicit channel configuration. Each fold
/// trains on the remaining edges (with an internal train/validation split
/// at the first two ratios, renormalized) and is scored on its own test
/// set; folds use independently derived seeds, so results do not depend on
/// the order folds run in.
pub fn kfold_cv_with_mode(
    hypergraph: &Hypergraph,
    precomputed: Option<&Tensor>,
    config: &TrainConfig,
    mode: AblationMode,
) -> Result<MetricsReport, TrainError> {
    let prep = prepare(hypergraph, precomputed, config)?;
    let folds = fold_test_sets(&prep.labels, config.folds, config.seed)?;
    let mut reports = Vec::with_capacity(config.folds);
    for (f, test_rows) in folds.iter().enumerate() {
        let report = run_fold(&prep, test_rows, f, config, mode)?;
        reports.push(report);
    }
    Ok(MetricsReport::from_folds(&reports))
}

/// [`kfold_cv_with_mode`] with folds distributed over up to `jobs`
/// threads. Every fold trains from its own derived seed on its own tape,
/// so the report is bit-identical to the sequential run regardless of
/// thread count; with an error in several folds, the lowest-indexed one
/// is reported.
pub fn kfold_cv_parallel(
    hypergraph: &Hypergraph,
    precomputed: Option<&Tensor>,
    config: &TrainConfig,
    mode: AblationMode,
    jobs: usize,
) -> Result<MetricsReport, TrainError> {
    if jobs <= 1 {
        return kfold_cv_with_mode(hypergraph, precomputed, config, mode);
    }
    config.validate()?;
    let labels = hypergraph.complete_labels().ok_or(TrainError::MissingLabels)?;
    let folds = fold_test_sets(&labels, config.folds, config.seed)?;
    // Round-robin folds over threads; each thread prepares its own data
    // (the tape and its Rc-based structure sharing are thread-local).
    let buckets: Vec<Vec<(usize, &[usize])>> = (0..jobs.min(folds.len()))
        .map(|j| folds.iter().enumerate().skip(j).step_by(jobs).map(|(f, t)| (f, t.as_slice())).collect())
        .collect();
    let mut results: Vec<Option<Result<MetricsReport, TrainError>>> =
        (0..folds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = buckets
            .into_iter()
            .map(|bucket| {
                scope.spawn(move || -> Vec<(usize, Result<MetricsReport, TrainError>)> {
                    let prep = match prepare(hypergraph, precomputed, config) {
                        Ok(p) => p,
                        Err(e) => {
                            let f = bucket.first().map(|&(f, _)| f).unwrap_or(0);
                            return vec![(f, Err(e))];
                        }
                    };
                    bucket
                        .into_iter()
                        .map(|(f, rows)| (f, run_fold(&prep, rows, f, config, mode)))
                        .collect()
                })
            })
            .collect();
        for handle in handles {
            for (f, r) in handle.join().expect("fold worker panicked") {
                results[f] = Some(r);
            }
        }
    });
    let mut reports = Vec::with_capacity(folds.len());
    for r in results.into_iter().flatten() {
        reports.push(r?);
    }
    Ok(MetricsReport::from_folds(&reports))
}

fn run_fold(
    prep: &PreparedData,
    test_rows: &[usize],
    fold_index: usize,
    config: &TrainConfig,
    mode: AblationMode,
) -> Result<MetricsReport, TrainError> {
    let rest: Vec<usize> =
        (0..prep.labels.len()).filter(|e| !test_rows.contains(e)).collect();
    let rest_labels: Vec<u8> = rest.iter().map(|&e| prep.labels[e]).collect();
    // Internal train/val proportions: the first two ratios, renormalized.
    let denom = config.ratios[0] + config.ratios[1];
    let inner = [config.ratios[0] / denom, config.ratios[1] / denom];
    let class_counts = [
        rest_labels.iter().filter(|&&l| l == 0).count(),
        rest_labels.iter().filter(|&&l| l == 1).count(),
    ];
    // Offset keeps fold seeds clear of the per-class shuffle seeds above.
    let fold_seed = sub_seed_indexed(config.seed, tags::FOLD, 0x10000 + fold_index as u64);
    let cells = stratified_cell_sizes(&class_counts, &inner);
    let parts = deal_stratified(&rest_labels, &cells, fold_seed);
    let to_global = |local: &[usize]| -> Vec<usize> { local.iter().map(|&i| rest[i]).collect() };
    let train_rows = to_global(&parts[0]);
    let val_rows = to_global(&parts[1]);
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(TrainError::TooFewEdges(format!(
            "fold {fold_index}: internal split over {} edges left train={} val={}",
            rest.len(),
            train_rows.len(),
            val_rows.len()
        )));
    }
    let (params, _history) =
        run_training_loop(prep, train_rows.clone(), val_rows, config, mode, fold_seed)?;

    // Score the held-out fold. The loss mask still points at the fold's
    // training rows (predictions don't depend on it).
    let outputs = score(prep, &params, config, mode, &train_rows)?;
    let preds: Vec<u8> = test_rows.iter().map(|&e| outputs.predictions[e]).collect();
    let truth: Vec<u8> = test_rows.iter().map(|&e| prep.labels[e]).collect();
    compute_metrics(&preds, &truth).map_err(|e| TrainError::InvalidConfig(e.to_string()))
}

/// Inference pass of trained parameters over the whole prepared graph.
/// `loss_rows` is only the mask the supervised loss head averages over —
/// predictions cover every edge and do not depend on it.
pub fn score(
    prep: &PreparedData,
    params: &ModelParams,
    config: &TrainConfig,
    mode: AblationMode,
    loss_rows: &[usize],
) -> Result<ForwardOutputs, TrainError> {
    let labels_rc = Rc::new(prep.labels.clone());
    let rows_rc = Rc::new(loss_rows.to_vec());
    let inputs = ForwardInputs {
        structure: &prep.structure,
        groups: &prep.groups,
        x: &prep.x,
        ze: &prep.ze,
        labels: &labels_rc,
        train_rows: &rows_rc,
        alpha: config.alpha,
        tau: config.tau,
        mode,
    };
    Ok(crate::model::forward(&params, &inputs)?)
}

/// Writes the run artifacts: `config.txt` (canonical snapshot),
/// `history.csv`, and the `params.ckpt` checkpoint.
pub fn write_run_artifacts(
    dir: &Path,
    config: &TrainConfig,
    params: &ModelParams,
    history: &RunHistory,
) -> Result<(), TrainError> {
    let io_err = |path: &Path, source: std::io::Error| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let config_path = dir.join("config.txt");
    std::fs::write(&config_path, config.canonical_string())
        .map_err(|e| io_err(&config_path, e))?;
    let history_path = dir.join("history.csv");
    std::fs::write(&history_path, history.to_csv()).map_err(|e| io_err(&history_path, e))?;
    params.save(&dir.join("params.ckpt"), config.seed, config.config_hash())?;
    Ok(())
}
