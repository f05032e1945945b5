//! Evaluation and analysis: classification metrics, paired significance
//! tests, the ablation protocol, per-class case-study statistics, and
//! embedding export.
//!
//! Precision/recall/F1 are macro-averaged over the classes present in the
//! ground-truth labels, with zero-division components defined as 0. This
//! choice is load-bearing for comparability: micro-averaged numbers on the
//! same predictions differ. Macro-F1 is the mean of per-class F1 scores,
//! not the harmonic mean of macro precision and macro recall.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::hypergraph::{Hypergraph, Incidence};
use crate::model::{AblationMode, ForwardOutputs};
use crate::stats::t_two_sided_p;
use crate::tensor::Tensor;
use crate::train::{kfold_cv_with_mode, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {a} predictions vs {b} labels")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("every edge needs a label for this analysis")]
    MissingLabels,
    #[error("failed to write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Mean and sample standard deviation of one metric over folds/seeds.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MetricSummary { mean, std }
}

/// Classification quality report: the four headline metrics with their
/// dispersion over folds, per-fold raw values, and summed confusion counts
/// (`confusion[label][prediction]`).
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub accuracy: MetricSummary,
    pub precision: MetricSummary,
    pub recall: MetricSummary,
    pub f1: MetricSummary,
    pub fold_accuracy: Vec<f64>,
    pub fold_precision: Vec<f64>,
    pub fold_recall: Vec<f64>,
    pub fold_f1: Vec<f64>,
    pub confusion: [[usize; 2]; 2],
}

impl MetricsReport {
    /// Pools per-fold reports: raw values are concatenated and re-summarized,
    /// confusion counts are summed.
    pub fn from_folds(folds: &[MetricsReport]) -> MetricsReport {
        let mut fold_accuracy = Vec::new();
        let mut fold_precision = Vec::new();
        let mut fold_recall = Vec::new();
        let mut fold_f1 = Vec::new();
        let mut confusion = [[0usize; 2]; 2];
        for f in folds {
            fold_accuracy.extend_from_slice(&f.fold_accuracy);
            fold_precision.extend_from_slice(&f.fold_precision);
            fold_recall.extend_from_slice(&f.fold_recall);
            fold_f1.extend_from_slice(&f.fold_f1);
            for l in 0..2 {
                for p in 0..2 {
                    confusion[l][p] += f.confusion[l][p];
                }
            }
        }
        MetricsReport {
            accuracy: summarize(&fold_accuracy),
            precision: summarize(&fold_precision),
            recall: summarize(&fold_recall),
            f1: summarize(&fold_f1),
            fold_accuracy,
            fold_precision,
            fold_recall,
            fold_f1,
            confusion,
        }
    }

    /// Flat machine-readable form: `name,value` rows under a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,value\n");
        let blocks = [
            ("accuracy", &self.accuracy, &self.fold_accuracy),
            ("precision", &self.precision, &self.fold_precision),
            ("recall", &self.recall, &self.fold_recall),
            ("f1", &self.f1, &self.fold_f1),
        ];
        for (name, summary, folds) in blocks {
            out.push_str(&format!("{name}_mean,{}\n", summary.mean));
            out.push_str(&format!("{name}_std,{}\n", summary.std));
            for (i, v) in folds.iter().enumerate() {
                out.push_str(&format!("{name}_fold{i},{v}\n"));
            }
        }
        for l in 0..2 {
            for p in 0..2 {
                out.push_str(&format!("confusion_label{l}_pred{p},{}\n", self.confusion[l][p]));
            }
        }
        out
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<10} {:>8} {:>8}\n", "metric", "mean", "std"));
        for (name, s) in [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ] {
            out.push_str(&format!("{name:<10} {:>8.4} {:>8.4}\n", s.mean, s.std));
        }
        out.push_str(&format!(
            "confusion [label×pred]: [[{}, {}], [{}, {}]]\n",
            self.confusion[0][0], self.confusion[0][1], self.confusion[1][0], self.confusion[1][1]
        ));
        out
    }
}

/// Accuracy plus macro precision/recall/F1 for one prediction vector.
///
/// Per-class components divide-by-zero to 0, and the macro average runs
/// over the classes that appear in `labels` — so a single correctly
/// classified example scores 1.0 across the board instead of being dragged
/// down by the absent class.
pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricsReport, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch { a: predictions.len(), b: labels.len() });
    }
    if labels.is_empty() {
        return Err(EvalError::TooFewSamples { needed: 1, got: 0 });
    }
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &l) in predictions.iter().zip(labels) {
        confusion[usize::from(l)][usize::from(p)] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    let accuracy = correct as f64 / labels.len() as f64;

    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    let mut f1s = Vec::new();
    for c in 0..2usize {
        let support = confusion[c][0] + confusion[c][1];
        if support == 0 {
            continue; // class absent from ground truth: skipped by macro
        }
        let tp = confusion[c][c] as f64;
        let fp = confusion[1 - c][c] as f64;
        let fn_ = confusion[c][1 - c] as f64;
        let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let r = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        precisions.push(p);
        recalls.push(r);
        f1s.push(f);
    }
    let macro_mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (precision, recall, f1) = (macro_mean(&precisions), macro_mean(&recalls), macro_mean(&f1s));
    Ok(MetricsReport {
        accuracy: MetricSummary { mean: accuracy, std: 0.0 },
        precision: MetricSummary { mean: precision, std: 0.0 },
        recall: MetricSummary { mean: recall, std: 0.0 },
        f1: MetricSummary { mean: f1, std: 0.0 },
        fold_accuracy: vec![accuracy],
        fold_precision: vec![precision],
        fold_recall: vec![recall],
        fold_f1: vec![f1],
        confusion,
    })
}

/// Paired two-sided t-test on matched score vectors.
///
/// Degenerate cases are pinned: identical vectors give (t=0, p=1); a
/// constant nonzero shift has zero variance and is reported as t=±∞ with
/// p=0 (i.e. below any printable threshold).
pub fn paired_t_test(scores_a: &[f64], scores_b: &[f64]) -> Result<(f64, f64), EvalError> {
    if scores_a.len() != scores_b.len() {
        return Err(EvalError::LengthMismatch { a: scores_a.len(), b: scores_b.len() });
    }
    let n = scores_a.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples { needed: 2, got: n });
    }
    let diffs: Vec<f64> = scores_a.iter().zip(scores_b).map(|(a, b)| a - b).collect();
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok((0.0, 1.0));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        let t = if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        return Ok((t, 0.0));
    }
    let t = mean / (var / n as f64).sqrt();
    Ok((t, t_two_sided_p(t, (n - 1) as f64)))
}

/// Trains and cross-validates the network with one channel configuration.
/// `mode = Full` is by construction the same computation as plain k-fold
/// cross-validation.
pub fn run_ablation(
    hypergraph: &Hypergraph,
    config: &TrainConfig,
    mode: AblationMode,
) -> Result<MetricsReport, EvalError> {
    Ok(kfold_cv_with_mode(hypergraph, None, config, mode)?)
}

/// Same, with externally supplied text embeddings instead of the hashed
/// embedder.
pub fn run_ablation_with_embeddings(
    hypergraph: &Hypergraph,
    embeddings: Option<&Tensor>,
    config: &TrainConfig,
    mode: AblationMode,
) -> Result<MetricsReport, EvalError> {
    Ok(kfold_cv_with_mode(hypergraph, embeddings, config, mode)?)
}

/// Spreading-pattern statistics for one label class.
#[derive(Clone, Debug)]
pub struct ClassStats {
    pub label: u8,
    pub edges: usize,
    pub mean_users_per_edge: f64,
    /// Per-attribute-column mean over the distinct users involved in this
    /// class's edges.
    pub attr_means: Vec<f64>,
    pub distinct_users: usize,
    /// Realized co-participating pairs over all possible pairs of involved
    /// users, within this class's edges only.
    pub coparticipation_density: f64,
}

/// Per-class spreading statistics (real vs fake).
#[derive(Clone, Debug)]
pub struct CaseStudyStats {
    pub real: ClassStats,
    pub fake: ClassStats,
}

impl CaseStudyStats {
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<28} {:>12} {:>12}\n",
            "statistic", "real (0)", "fake (1)"
        ));
        out.push_str(&format!(
            "{:<28} {:>12} {:>12}\n",
            "edges", self.real.edges, self.fake.edges
        ));
        out.push_str(&format!(
            "{:<28} {:>12.4} {:>12.4}\n",
            "mean users per edge", self.real.mean_users_per_edge, self.fake.mean_users_per_edge
        ));
        out.push_str(&format!(
            "{:<28} {:>12} {:>12}\n",
            "distinct users involved", self.real.distinct_users, self.fake.distinct_users
        ));
        out.push_str(&format!(
            "{:<28} {:>12.6} {:>12.6}\n",
            "co-participation density",
            self.real.coparticipation_density,
            self.fake.coparticipation_density
        ));
        for (i, (r, f)) in self.real.attr_means.iter().zip(&self.fake.attr_means).enumerate() {
            out.push_str(&format!("{:<28} {r:>12.4} {f:>12.4}\n", format!("attr[{i}] mean")));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("statistic,real,fake\n");
        out.push_str(&format!("edges,{},{}\n", self.real.edges, self.fake.edges));
        out.push_str(&format!(
            "mean_users_per_edge,{},{}\n",
            self.real.mean_users_per_edge, self.fake.mean_users_per_edge
        ));
        out.push_str(&format!(
            "distinct_users,{},{}\n",
            self.real.distinct_users, self.fake.distinct_users
        ));
        out.push_str(&format!(
            "coparticipation_density,{},{}\n",
            self.real.coparticipation_density, self.fake.coparticipation_density
        ));
        for (i, (r, f)) in self.real.attr_means.iter().zip(&self.fake.attr_means).enumerate() {
            out.push_str(&format!("attr{i}_mean,{r},{f}\n"));
        }
        out
    }
}

fn class_stats(hypergraph: &Hypergraph, labels: &[u8], class: u8) -> ClassStats {
    let m = hypergraph.node_count();
    let class_edges: Vec<Vec<usize>> = hypergraph
        .incidence
        .edges()
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == class)
        .map(|(e, _)| e.clone())
        .collect();
    let edges = class_edges.len();
    if edges == 0 {
        return ClassStats {
            label: class,
            edges: 0,
            mean_users_per_edge: 0.0,
            attr_means: vec![0.0; hypergraph.attr_dim()],
            distinct_users: 0,
            coparticipation_density: 0.0,
        };
    }
    let total_members: usize = class_edges.iter().map(Vec::len).sum();
    let mean_users_per_edge = total_members as f64 / edges as f64;

    let involved: BTreeSet<usize> = class_edges.iter().flatten().copied().collect();
    let n = involved.len();
    let mut attr_means = vec![0.0; hypergraph.attr_dim()];
    for &v in &involved {
        for (c, s) in attr_means.iter_mut().enumerate() {
            *s += hypergraph.node_attrs[(v, c)];
        }
    }
    for s in &mut attr_means {
        *s /= n as f64;
    }

    // Density of the co-participation projection restricted to this class.
    let sub = Incidence::new(class_edges, m).expect("class edges are valid by construction");
    let pairs = sub.coparticipation_projection().len();
    let possible = n * (n - 1) / 2;
    let coparticipation_density = if possible == 0 { 0.0 } else { pairs as f64 / possible as f64 };

    ClassStats {
        label: class,
        edges,
        mean_users_per_edge,
        attr_means,
        distinct_users: n,
        coparticipation_density,
    }
}

/// Per-class spreading statistics; needs every edge labeled.
pub fn case_study_stats(hypergraph: &Hypergraph) -> Result<CaseStudyStats, EvalError> {
    let labels = hypergraph.complete_labels().ok_or(EvalError::MissingLabels)?;
    Ok(CaseStudyStats {
        real: class_stats(hypergraph, &labels, 0),
        fake: class_stats(hypergraph, &labels, 1),
    })
}

/// Writes one CSV line per edge: id, label, prediction, then the fused
/// embedding (text embedding followed by pooled user embedding). Values
/// use the shortest representation that parses back to the same float.
pub fn export_embeddings(
    edge_ids: &[String],
    labels: &[u8],
    outputs: &ForwardOutputs,
    path: &Path,
) -> Result<(), EvalError> {
    let t = outputs.u.rows();
    assert_eq!(edge_ids.len(), t, "one id per edge");
    assert_eq!(labels.len(), t, "one label per edge");
    let width = outputs.ze.cols() + outputs.u.cols();
    let mut out = String::from("edge_id,label,pred");
    for i in 0..width {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for e in 0..t {
        out.push_str(&format!("{},{},{}", edge_ids[e], labels[e], outputs.predictions[e]));
        for v in outputs.ze.row(e).iter().chain(outputs.u.row(e)) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|source| EvalError::Io { path: path.display().to_string(), source })
}
