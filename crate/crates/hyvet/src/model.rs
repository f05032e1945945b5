//! The detection network.
//!
//! Two channels meet here: a hypergraph autoencoder that embeds users by
//! how news propagates through them (credibility channel), and fixed text
//! embeddings of the news themselves (semantic channel). Per-edge user
//! embeddings are mean-pooled, optionally pulled toward their news text by
//! a symmetric contrastive term, and classified by a small MLP over the
//! concatenation of both channels.
//!
//! `build_forward` records the whole computation on a [`Tape`]; training
//! backpropagates through it, inference just reads the values off.

use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, ValueId};
use crate::hypergraph::PropagationStructure;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch { what: &'static str, expected: (usize, usize), got: (usize, usize) },
    #[error("failed to access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
}

/// Which parts of the network participate in the objective. Used both for
/// normal training (`Full`) and for the ablation protocol.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AblationMode {
    /// Both channels, contrastive fusion on.
    Full,
    /// Both channels concatenated, no contrastive term (α forced to 0).
    ConcatNoMi,
    /// Semantic channel only: the pooled user embeddings entering the
    /// classifier are zeroed and only the supervised loss trains.
    SemOnly,
    /// Credibility channel only: the text embeddings entering the
    /// classifier are zeroed; autoencoder + supervised loss train.
    CreOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] =
        [AblationMode::Full, AblationMode::ConcatNoMi, AblationMode::SemOnly, AblationMode::CreOnly];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::ConcatNoMi => "concat_no_mi",
            AblationMode::SemOnly => "sem_only",
            AblationMode::CreOnly => "cre_only",
        }
    }

    pub fn parse(s: &str) -> Option<AblationMode> {
        AblationMode::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Widths of every block: user attributes d_u, hidden width d_h, embedding
/// width d, hyperedge count t (the learnable edge weights are per-edge).
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub d_u: usize,
    pub d_h: usize,
    pub d: usize,
    pub t: usize,
}

/// All learnable state: two propagation filter matrices, the per-edge
/// weights, and two 3-layer MLPs (decoder d→d_u, classifier 2d→2).
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub theta0: Tensor,
    pub theta1: Tensor,
    pub edge_w: Tensor,
    pub dec_w: [Tensor; 3],
    pub dec_b: [Tensor; 3],
    pub clf_w: [Tensor; 3],
    pub clf_b: [Tensor; 3],
}

/// Canonical parameter order used by the optimizer, checkpoints, and
/// gradient extraction. Frozen: checkpoints depend on it.
pub const PARAM_NAMES: [&str; 15] = [
    "theta0", "theta1", "edge_w", "dec_w1", "dec_b1", "dec_w2", "dec_b2", "dec_w3", "dec_b3",
    "clf_w1", "clf_b1", "clf_w2", "clf_b2", "clf_w3", "clf_b3",
];

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl ModelParams {
    /// Shapes in `PARAM_NAMES` order for the given dims.
    pub fn shapes(dims: ModelDims) -> Vec<(usize, usize)> {
        let ModelDims { d_u, d_h, d, t } = dims;
        vec![
            (d_u, d_h),
            (d_h, d),
            (t, 1),
            (d, d_h),
            (1, d_h),
            (d_h, d_h),
            (1, d_h),
            (d_h, d_u),
            (1, d_u),
            (2 * d, d_h),
            (1, d_h),
            (d_h, d_h),
            (1, d_h),
            (d_h, 2),
            (1, 2),
        ]
    }

    /// Seeded initialization: weights uniform in ±sqrt(6/(fan_in+fan_out)),
    /// biases zero, edge weights one. The fill order is fixed, so one seed
    /// always produces the same parameters.
    pub fn init(dims: ModelDims, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ModelDims { d_u, d_h, d, t } = dims;
        ModelParams {
            dims,
            theta0: xavier(d_u, d_h, &mut rng),
            theta1: xavier(d_h, d, &mut rng),
            edge_w: Tensor::from_fn(t, 1, |_, _| 1.0),
            dec_w: [
                xavier(d, d_h, &mut rng),
                xavier(d_h, d_h, &mut rng),
                xavier(d_h, d_u, &mut rng),
            ],
            dec_b: [Tensor::zeros(1, d_h), Tensor::zeros(1, d_h), Tensor::zeros(1, d_u)],
            clf_w: [
                xavier(2 * d, d_h, &mut rng),
                xavier(d_h, d_h, &mut rng),
                xavier(d_h, 2, &mut rng),
            ],
            clf_b: [Tensor::zeros(1, d_h), Tensor::zeros(1, d_h), Tensor::zeros(1, 2)],
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = vec![&self.theta0, &self.theta1, &self.edge_w];
        for i in 0..3 {
            v.push(&self.dec_w[i]);
            v.push(&self.dec_b[i]);
        }
        for i in 0..3 {
            v.push(&self.clf_w[i]);
            v.push(&self.clf_b[i]);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = vec![&mut self.theta0, &mut self.theta1, &mut self.edge_w];
        let [d0, d1, d2] = &mut self.dec_w;
        let [b0, b1, b2] = &mut self.dec_b;
        let [c0, c1, c2] = &mut self.clf_w;
        let [e0, e1, e2] = &mut self.clf_b;
        for (w, b) in [(d0, b0), (d1, b1), (d2, b2), (c0, e0), (c1, e1), (c2, e2)] {
            v.push(w);
            v.push(b);
        }
        v
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Writes a versioned textual checkpoint. Values are stored as the hex
    /// of their IEEE-754 bits, so load is bit-exact.
    pub fn save(&self, path: &Path, seed: u64, config_hash: u64) -> Result<(), ModelError> {
        let mut out = String::new();
        out.push_str("hyvet-params v1\n");
        out.push_str(&format!("seed={seed}\n"));
        out.push_str(&format!("config_hash={config_hash:016x}\n"));
        for (name, tensor) in PARAM_NAMES.iter().zip(self.tensors()) {
            out.push_str(&format!("tensor {name} {} {}\n", tensor.rows(), tensor.cols()));
            for r in 0..tensor.rows() {
                let row: Vec<String> =
                    tensor.row(r).iter().map(|v| format!("{:016x}", v.to_bits())).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        std::fs::write(path, out)
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })
    }

    /// Loads a checkpoint written by [`ModelParams::save`]. Returns the
    /// parameters plus the recorded seed and config hash.
    pub fn load(path: &Path) -> Result<(ModelParams, u64, u64), ModelError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ModelError::Io { path: display.clone(), source })?;
        let parse_err = |line: usize, msg: String| ModelError::Parse {
            path: display.clone(),
            line,
            msg,
        };
        fn expect_line<'t>(
            pair: Option<(usize, &'t str)>,
            what: &str,
            path: &str,
        ) -> Result<(usize, &'t str), ModelError> {
            pair.ok_or_else(|| ModelError::Parse {
                path: path.to_string(),
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            })
        }
        let mut lines = text.lines().enumerate();
        let (n, header) = expect_line(lines.next(), "header", &display)?;
        if header != "hyvet-params v1" {
            return Err(parse_err(n + 1, format!("unrecognized header {header:?}")));
        }
        let (n, seed_line) = expect_line(lines.next(), "seed", &display)?;
        let seed: u64 = seed_line
            .strip_prefix("seed=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(n + 1, "expected seed=<u64>".into()))?;
        let (n, hash_line) = expect_line(lines.next(), "config_hash", &display)?;
        let config_hash = hash_line
            .strip_prefix("config_hash=")
            .and_then(|s| u64::from_str_radix(s, 16).ok())
            .ok_or_else(|| parse_err(n + 1, "expected config_hash=<hex>".into()))?;

        let mut tensors = Vec::with_capacity(PARAM_NAMES.len());
        for name in PARAM_NAMES {
            let (n, head) = expect_line(lines.next(), "tensor header", &display)?;
            let parts: Vec<&str> = head.split(' ').collect();
            if parts.len() != 4 || parts[0] != "tensor" || parts[1] != name {
                return Err(parse_err(n + 1, format!("expected `tensor {name} <rows> <cols>`")));
            }
            let rows: usize =
                parts[2].parse().map_err(|_| parse_err(n + 1, "bad row count".into()))?;
            let cols: usize =
                parts[3].parse().map_err(|_| parse_err(n + 1, "bad col count".into()))?;
            let mut t = Tensor::zeros(rows, cols);
            for r in 0..rows {
                let (n, row_line) = expect_line(lines.next(), "tensor row", &display)?;
                let mut wrote = 0;
                for (c, word) in row_line.split(' ').enumerate() {
                    if c >= cols {
                        return Err(parse_err(n + 1, "too many values in row".into()));
                    }
                    let bits = u64::from_str_radix(word, 16)
                        .map_err(|_| parse_err(n + 1, format!("bad hex value {word:?}")))?;
                    t[(r, c)] = f64::from_bits(bits);
                    wrote += 1;
                }
                if wrote != cols {
                    return Err(parse_err(n + 1, format!("expected {cols} values, got {wrote}")));
                }
            }
            tensors.push(t);
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked above");
        let (theta0, theta1, edge_w) = (next(), next(), next());
        let dec_w1 = next();
        let dec_b1 = next();
        let dec_w2 = next();
        let dec_b2 = next();
        let dec_w3 = next();
        let dec_b3 = next();
        let clf_w1 = next();
        let clf_b1 = next();
        let clf_w2 = next();
        let clf_b2 = next();
        let clf_w3 = next();
        let clf_b3 = next();
        let dims = ModelDims {
            d_u: theta0.rows(),
            d_h: theta0.cols(),
            d: theta1.cols(),
            t: edge_w.rows(),
        };
        let params = ModelParams {
            dims,
            theta0,
            theta1,
            edge_w,
            dec_w: [dec_w1, dec_w2, dec_w3],
            dec_b: [dec_b1, dec_b2, dec_b3],
            clf_w: [clf_w1, clf_w2, clf_w3],
            clf_b: [clf_b1, clf_b2, clf_b3],
        };
        for ((tensor, want), name) in params
            .tensors()
            .iter()
            .zip(ModelParams::shapes(dims))
            .zip(PARAM_NAMES)
        {
            if tensor.shape() != want {
                return Err(ModelError::Parse {
                    path: display,
                    line: 0,
                    msg: format!(
                        "tensor {name}: shape {:?} inconsistent with recorded dims, expected {want:?}",
                        tensor.shape()
                    ),
                });
            }
        }
        Ok((params, seed, config_hash))
    }
}

/// Everything the forward pass consumes besides the parameters.
pub struct ForwardInputs<'a> {
    pub structure: &'a Rc<PropagationStructure>,
    /// Per-edge member lists (row groups for pooling); must mirror the
    /// structure's edges.
    pub groups: &'a Rc<Vec<Vec<usize>>>,
    /// Standardized user attributes, m×d_u.
    pub x: &'a Tensor,
    /// Text embeddings, t×d.
    pub ze: &'a Tensor,
    pub labels: &'a Rc<Vec<u8>>,
    /// Rows the supervised loss averages over (training split).
    pub train_rows: &'a Rc<Vec<usize>>,
    pub alpha: f64,
    pub tau: f64,
    pub mode: AblationMode,
}

/// Tape handles for the parameter leaves, in `PARAM_NAMES` order.
pub struct ParamLeaves {
    pub ids: Vec<ValueId>,
}

/// Tape handles for the interesting heads of the graph.
pub struct ForwardHeads {
    pub z: ValueId,
    pub xhat: ValueId,
    pub u: ValueId,
    pub logits: ValueId,
    pub l_rec: ValueId,
    pub l_d: ValueId,
    pub l_mi: ValueId,
    pub total: ValueId,
}

/// Records the full forward computation on `tape`.
///
/// The contrastive term is always evaluated (it is cheap relative to the
/// rest and keeps run histories comparable across modes) but enters the
/// objective only in `Full` mode, scaled by α. The supervised loss reads
/// only `train_rows`; labels outside it never touch the graph.
pub fn build_forward(
    tape: &mut Tape,
    params: &ModelParams,
    inputs: &ForwardInputs<'_>,
    trainable: bool,
) -> Result<(ParamLeaves, ForwardHeads), ModelError> {
    let dims = params.dims;
    if inputs.x.cols() != dims.d_u {
        return Err(ModelError::ShapeMismatch {
            what: "user attributes",
            expected: (inputs.x.rows(), dims.d_u),
            got: inputs.x.shape(),
        });
    }
    if inputs.ze.shape() != (dims.t, dims.d) {
        return Err(ModelError::ShapeMismatch {
            what: "text embeddings",
            expected: (dims.t, dims.d),
            got: inputs.ze.shape(),
        });
    }

    let ids: Vec<ValueId> =
        params.tensors().into_iter().map(|t| tape.leaf(t.clone(), trainable)).collect();
    let (theta0, theta1, edge_w) = (ids[0], ids[1], ids[2]);
    let dec = [(ids[3], ids[4]), (ids[5], ids[6]), (ids[7], ids[8])];
    let clf = [(ids[9], ids[10]), (ids[11], ids[12]), (ids[13], ids[14])];

    let x = tape.leaf(inputs.x.clone(), false);
    let ze = tape.leaf(inputs.ze.clone(), false);

    // Credibility encoder: Z = S · ReLU(S · X · Θ0) · Θ1.
    let xw = tape.matmul(x, theta0)?;
    let p1 = tape.propagate(xw, edge_w, inputs.structure.clone())?;
    let a1 = tape.relu(p1)?;
    let aw = tape.matmul(a1, theta1)?;
    let z = tape.propagate(aw, edge_w, inputs.structure.clone())?;

    // Decoder back to attribute space; identity output layer.
    let mut h = z;
    for (k, (w, b)) in dec.iter().enumerate() {
        h = tape.affine(h, *w, *b)?;
        if k < 2 {
            h = tape.relu(h)?;
        }
    }
    let xhat = h;
    let l_rec = tape.mse_loss(xhat, inputs.x)?;

    // Per-edge pooled user embeddings.
    let u = tape.mean_pool_rows(z, inputs.groups.clone())?;

    // Contrastive alignment between the two channels.
    let l_mi = tape.info_nce(ze, u, inputs.tau)?;

    // Classifier over the (mode-masked) concatenation of both channels.
    let zero_half = || Tensor::zeros(dims.t, dims.d);
    let clf_in = match inputs.mode {
        AblationMode::Full | AblationMode::ConcatNoMi => tape.concat_cols(ze, u)?,
        AblationMode::SemOnly => {
            let blank = tape.leaf(zero_half(), false);
            tape.concat_cols(ze, blank)?
        }
        AblationMode::CreOnly => {
            let blank = tape.leaf(zero_half(), false);
            tape.concat_cols(blank, u)?
        }
    };
    let mut c = clf_in;
    for (k, (w, b)) in clf.iter().enumerate() {
        c = tape.affine(c, *w, *b)?;
        if k < 2 {
            c = tape.relu(c)?;
        }
    }
    let logits = c;
    let l_d = tape.softmax_cross_entropy_masked(logits, inputs.labels.clone(), inputs.train_rows.clone())?;

    let total = match inputs.mode {
        AblationMode::Full => {
            let rec_d = tape.add(l_rec, l_d)?;
            let mi_scaled = tape.scale(l_mi, inputs.alpha)?;
            tape.add(rec_d, mi_scaled)?
        }
        AblationMode::ConcatNoMi | AblationMode::CreOnly => tape.add(l_rec, l_d)?,
        AblationMode::SemOnly => l_d,
    };

    Ok((
        ParamLeaves { ids },
        ForwardHeads { z, xhat, u, logits, l_rec, l_d, l_mi, total },
    ))
}

/// Scalar values of the four loss heads.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Losses {
    pub rec: f64,
    pub mi: f64,
    pub det: f64,
    pub total: f64,
}

/// Values extracted from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    pub z: Tensor,
    pub xhat: Tensor,
    pub u: Tensor,
    pub ze: Tensor,
    pub logits: Tensor,
    pub predictions: Vec<u8>,
    pub losses: Losses,
}

/// Runs the forward pass without keeping the tape (inference/evaluation).
pub fn forward(
    params: &ModelParams,
    inputs: &ForwardInputs<'_>,
) -> Result<ForwardOutputs, ModelError> {
    let mut tape = Tape::new();
    let (_, heads) = build_forward(&mut tape, params, inputs, false)?;
    let logits = tape.value(heads.logits).clone();
    Ok(ForwardOutputs {
        z: tape.value(heads.z).clone(),
        xhat: tape.value(heads.xhat).clone(),
        u: tape.value(heads.u).clone(),
        ze: inputs.ze.clone(),
        predictions: predictions_from_logits(&logits),
        logits,
        losses: Losses {
            rec: tape.scalar(heads.l_rec),
            mi: tape.scalar(heads.l_mi),
            det: tape.scalar(heads.l_d),
            total: tape.scalar(heads.total),
        },
    })
}

/// User embeddings Z = S·ReLU(S·X·Θ0)·Θ1 for the current edge weights.
pub fn encode_users(
    structure: &Rc<PropagationStructure>,
    x: &Tensor,
    params: &ModelParams,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let theta0 = tape.leaf(params.theta0.clone(), false);
    let theta1 = tape.leaf(params.theta1.clone(), false);
    let edge_w = tape.leaf(params.edge_w.clone(), false);
    let x = tape.leaf(x.clone(), false);
    let xw = tape.matmul(x, theta0)?;
    let p1 = tape.propagate(xw, edge_w, structure.clone())?;
    let a1 = tape.relu(p1)?;
    let aw = tape.matmul(a1, theta1)?;
    let z = tape.propagate(aw, edge_w, structure.clone())?;
    Ok(tape.value(z).clone())
}

/// Attribute reconstructions X̂ from user embeddings.
pub fn decode_users(z: &Tensor, params: &ModelParams) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let mut h = tape.leaf(z.clone(), false);
    for k in 0..3 {
        let w = tape.leaf(params.dec_w[k].clone(), false);
        let b = tape.leaf(params.dec_b[k].clone(), false);
        h = tape.affine(h, w, b)?;
        if k < 2 {
            h = tape.relu(h)?;
        }
    }
    Ok(tape.value(h).clone())
}

/// Classifier head alone: logits and hard predictions from the two
/// channel matrices.
pub fn classify(
    params: &ModelParams,
    ze: &Tensor,
    u: &Tensor,
) -> Result<(Tensor, Vec<u8>), ModelError> {
    let mut tape = Tape::new();
    let a = tape.leaf(ze.clone(), false);
    let b = tape.leaf(u.clone(), false);
    let mut c = tape.concat_cols(a, b)?;
    for k in 0..3 {
        let w = tape.leaf(params.clf_w[k].clone(), false);
        let bias = tape.leaf(params.clf_b[k].clone(), false);
        c = tape.affine(c, w, bias)?;
        if k < 2 {
            c = tape.relu(c)?;
        }
    }
    let logits = tape.value(c).clone();
    let preds = predictions_from_logits(&logits);
    Ok((logits, preds))
}

/// Argmax with ties resolved to class 0 (real): a news piece is only
/// called fake when the fake logit strictly wins.
pub fn predictions_from_logits(logits: &Tensor) -> Vec<u8> {
    (0..logits.rows())
        .map(|i| u8::from(logits[(i, 1)] > logits[(i, 0)]))
        .collect()
}

/// Row-wise softmax (for probability readouts; predictions use raw logits).
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - mx).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}
