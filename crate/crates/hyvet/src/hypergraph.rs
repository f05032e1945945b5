//! Attributed user/news hypergraphs and the normalized propagation operator.
//!
//! Users are nodes, news pieces are hyperedges over the users who spread
//! them. The incidence matrix `H` (m×t) is stored as per-edge sorted
//! node-index lists since every access pattern downstream (pooling,
//! windowing, propagation) is edge-major. The propagation operator
//!
//! ```text
//! S = D_v^{-1/2} · H · W · D_e^{-1} · Hᵀ · D_v^{-1/2}
//! ```
//!
//! is kept in factored form: applying it to a feature matrix costs
//! O(nnz(H)·d) instead of O(m²·d), which is what makes the large
//! configurations tractable. `to_dense` materializes S for small instances
//! and tests.

use std::collections::BTreeSet;
use std::rc::Rc;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum HypergraphError {
    #[error("hyperedge {edge} has no incident nodes")]
    EmptyHyperedge { edge: usize },
    #[error("hyperedge {edge} references node {node} but only {node_count} nodes exist")]
    IndexOutOfRange { edge: usize, node: usize, node_count: usize },
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("negative timestamp {value} on edge {edge}")]
    NegativeTimestamp { edge: usize, value: f64 },
}

/// Sparse binary incidence matrix H (m nodes × t hyperedges), stored as one
/// sorted, deduplicated node-index list per edge.
#[derive(Clone, Debug, PartialEq)]
pub struct Incidence {
    node_count: usize,
    edges: Vec<Vec<usize>>,
}

impl Incidence {
    /// Builds a validated incidence from raw per-edge node lists.
    ///
    /// Lists are sorted and duplicates within a list are collapsed. Empty
    /// lists and out-of-range indices are rejected.
    pub fn new(edge_node_lists: Vec<Vec<usize>>, node_count: usize) -> Result<Self, HypergraphError> {
        let mut edges = edge_node_lists;
        for (e, list) in edges.iter_mut().enumerate() {
            if list.is_empty() {
                return Err(HypergraphError::EmptyHyperedge { edge: e });
            }
            if let Some(&bad) = list.iter().find(|&&v| v >= node_count) {
                return Err(HypergraphError::IndexOutOfRange { edge: e, node: bad, node_count });
            }
            list.sort_unstable();
            list.dedup();
        }
        Ok(Incidence { node_count, edges })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &[usize] {
        &self.edges[e]
    }

    /// Total number of (node, edge) incidences, Σ_e |e|.
    pub fn incidence_count(&self) -> usize {
        self.edges.iter().map(|e| e.len()).sum()
    }

    /// D_v: per-node count of incident hyperedges (row sums of H).
    pub fn node_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.node_count];
        for edge in &self.edges {
            for &v in edge {
                deg[v] += 1;
            }
        }
        deg
    }

    /// D_e: per-edge node count (column sums of H).
    pub fn edge_degrees(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.len()).collect()
    }

    /// Nodes that participate in no hyperedge. These get a zero propagation
    /// scale and ingestion warns about them.
    pub fn isolated_nodes(&self) -> Vec<usize> {
        self.node_degrees()
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(v, _)| v)
            .collect()
    }

    /// Undirected simple graph connecting every pair of users that co-occur
    /// in at least one hyperedge. Pairs are returned sorted, `u < v`, without
    /// duplicates.
    pub fn coparticipation_projection(&self) -> Vec<(usize, usize)> {
        let mut pairs = BTreeSet::new();
        for edge in &self.edges {
            for (i, &u) in edge.iter().enumerate() {
                for &v in &edge[i + 1..] {
                    pairs.insert((u, v));
                }
            }
        }
        pairs.into_iter().collect()
    }

    /// Dense m×t copy of H, for small instances and oracle tests.
    pub fn to_dense(&self) -> Tensor {
        let mut h = Tensor::zeros(self.node_count, self.edges.len());
        for (e, edge) in self.edges.iter().enumerate() {
            for &v in edge {
                h[(v, e)] = 1.0;
            }
        }
        h
    }
}

/// The static part of the propagation operator: everything except the
/// learnable edge weights. Shared (via `Rc`) between the operator snapshot
/// and the differentiation tape, which re-applies it with fresh weights
/// every epoch.
#[derive(Debug)]
pub struct PropagationStructure {
    node_count: usize,
    edges: Vec<Vec<usize>>,
    /// D_v^{-1/2}, with isolated nodes pinned to 0 instead of dividing by zero.
    node_scale: Vec<f64>,
    /// 1/(|e| + ε); ε guards D_e^{-1} even though edge degrees are ≥ 1.
    inv_edge_degree: Vec<f64>,
}

impl PropagationStructure {
    pub fn new(incidence: &Incidence, epsilon: f64) -> Self {
        assert!(epsilon > 0.0, "epsilon must be positive");
        let node_scale = incidence
            .node_degrees()
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
            .collect();
        let inv_edge_degree = incidence
            .edge_degrees()
            .iter()
            .map(|&d| 1.0 / (d as f64 + epsilon))
            .collect();
        PropagationStructure {
            node_count: incidence.node_count(),
            edges: incidence.edges().to_vec(),
            node_scale,
            inv_edge_degree,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    pub fn node_scale(&self) -> &[f64] {
        &self.node_scale
    }

    pub fn inv_edge_degree(&self) -> &[f64] {
        &self.inv_edge_degree
    }

    /// S·Z for the given edge weights, computed in factored form:
    /// scale rows by D_v^{-1/2}, sum per edge (Hᵀ·), scale per edge by
    /// w_e/(|e|+ε), scatter back to nodes (H·), scale rows again.
    pub fn apply_weighted(&self, weights: &[f64], z: &Tensor) -> Tensor {
        assert_eq!(weights.len(), self.edges.len(), "one weight per edge");
        assert_eq!(z.rows(), self.node_count, "feature rows must match node count");
        let d = z.cols();
        let mut scaled = z.clone();
        scale_rows(&mut scaled, &self.node_scale);
        let edge_sums = self.pool_to_edges(&scaled);
        let mut out = Tensor::zeros(self.node_count, d);
        for (e, edge) in self.edges.iter().enumerate() {
            let c = weights[e] * self.inv_edge_degree[e];
            let row = edge_sums.row(e);
            for &v in edge {
                let out_row = out.row_mut(v);
                for (o, &s) in out_row.iter_mut().zip(row) {
                    *o += c * s;
                }
            }
        }
        scale_rows(&mut out, &self.node_scale);
        out
    }

    /// Hᵀ·Z: per-edge sums of the member rows (t×d).
    pub(crate) fn pool_to_edges(&self, z: &Tensor) -> Tensor {
        let d = z.cols();
        let mut out = Tensor::zeros(self.edges.len(), d);
        for (e, edge) in self.edges.iter().enumerate() {
            let row = out.row_mut(e);
            for &v in edge {
                for (o, &x) in row.iter_mut().zip(z.row(v)) {
                    *o += x;
                }
            }
        }
        out
    }

    /// H·R: scatter per-edge rows back onto their member nodes (m×d).
    pub(crate) fn scatter_to_nodes(&self, r: &Tensor) -> Tensor {
        let d = r.cols();
        let mut out = Tensor::zeros(self.node_count, d);
        for (e, edge) in self.edges.iter().enumerate() {
            let row = r.row(e);
            for &v in edge {
                let out_row = out.row_mut(v);
                for (o, &x) in out_row.iter_mut().zip(row) {
                    *o += x;
                }
            }
        }
        out
    }
}

pub(crate) fn scale_rows(t: &mut Tensor, scale: &[f64]) {
    assert_eq!(t.rows(), scale.len());
    for (i, &s) in scale.iter().enumerate() {
        for x in t.row_mut(i) {
            *x *= s;
        }
    }
}

/// Snapshot of S for a fixed weight vector.
#[derive(Debug)]
pub struct PropagationOperator {
    structure: Rc<PropagationStructure>,
    edge_weights: Vec<f64>,
}

/// Builds the normalized propagation operator for the given edge weights.
///
/// Zero-degree nodes get a zero row/column (their D_v^{-1/2} entry is 0);
/// D_e^{-1} is guarded by `epsilon`.
pub fn propagation_operator(
    incidence: &Incidence,
    edge_weights: &[f64],
    epsilon: f64,
) -> Result<PropagationOperator, HypergraphError> {
    if edge_weights.len() != incidence.edge_count() {
        return Err(HypergraphError::ShapeMismatch {
            what: "edge_weights length",
            expected: incidence.edge_count(),
            got: edge_weights.len(),
        });
    }
    Ok(PropagationOperator {
        structure: Rc::new(PropagationStructure::new(incidence, epsilon)),
        edge_weights: edge_weights.to_vec(),
    })
}

impl PropagationOperator {
    pub fn structure(&self) -> &Rc<PropagationStructure> {
        &self.structure
    }

    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weights
    }

    /// S·Z without materializing S.
    pub fn apply(&self, z: &Tensor) -> Tensor {
        self.structure.apply_weighted(&self.edge_weights, z)
    }

    /// Materializes S as a dense m×m matrix. Quadratic in m; intended for
    /// small hypergraphs and verification.
    pub fn to_dense(&self) -> Tensor {
        let s = &self.structure;
        let m = s.node_count;
        let mut out = Tensor::zeros(m, m);
        for (e, edge) in s.edges.iter().enumerate() {
            let c = self.edge_weights[e] * s.inv_edge_degree[e];
            for &u in edge {
                for &v in edge {
                    out[(u, v)] += s.node_scale[u] * c * s.node_scale[v];
                }
            }
        }
        out
    }
}

/// An attributed hypergraph: incidence structure plus user attributes, news
/// texts, optional labels and optional participation timestamps.
///
/// `incidence_times`, when present, is aligned with the (sorted) per-edge
/// node lists: `incidence_times[e][k]` is the timestamp, in seconds since
/// edge `e`'s publication, at which node `incidence.edge(e)[k]` joined.
#[derive(Clone, Debug)]
pub struct Hypergraph {
    pub incidence: Incidence,
    pub node_attrs: Tensor,
    pub edge_texts: Vec<String>,
    /// Per-edge label: 0 real, 1 fake, `None` for unlabeled (inference-only)
    /// edges.
    pub edge_labels: Vec<Option<u8>>,
    pub incidence_times: Option<Vec<Vec<f64>>>,
}

impl Hypergraph {
    pub fn new(
        incidence: Incidence,
        node_attrs: Tensor,
        edge_texts: Vec<String>,
        edge_labels: Vec<Option<u8>>,
        incidence_times: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, HypergraphError> {
        let (m, t) = (incidence.node_count(), incidence.edge_count());
        if node_attrs.rows() != m {
            return Err(HypergraphError::ShapeMismatch {
                what: "node_attrs rows",
                expected: m,
                got: node_attrs.rows(),
            });
        }
        if edge_texts.len() != t {
            return Err(HypergraphError::ShapeMismatch {
                what: "edge_texts length",
                expected: t,
                got: edge_texts.len(),
            });
        }
        if edge_labels.len() != t {
            return Err(HypergraphError::ShapeMismatch {
                what: "edge_labels length",
                expected: t,
                got: edge_labels.len(),
            });
        }
        if let Some(times) = &incidence_times {
            if times.len() != t {
                return Err(HypergraphError::ShapeMismatch {
                    what: "incidence_times length",
                    expected: t,
                    got: times.len(),
                });
            }
            for (e, (ts, edge)) in times.iter().zip(incidence.edges()).enumerate() {
                if ts.len() != edge.len() {
                    return Err(HypergraphError::ShapeMismatch {
                        what: "incidence_times entries for edge",
                        expected: edge.len(),
                        got: ts.len(),
                    });
                }
                if let Some(&bad) = ts.iter().find(|&&x| !(x >= 0.0)) {
                    return Err(HypergraphError::NegativeTimestamp { edge: e, value: bad });
                }
            }
        }
        Ok(Hypergraph { incidence, node_attrs, edge_texts, edge_labels, incidence_times })
    }

    pub fn node_count(&self) -> usize {
        self.incidence.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.incidence.edge_count()
    }

    pub fn attr_dim(&self) -> usize {
        self.node_attrs.cols()
    }

    /// All labels if every edge carries one, `None` otherwise.
    pub fn complete_labels(&self) -> Option<Vec<u8>> {
        self.edge_labels.iter().copied().collect()
    }
}
