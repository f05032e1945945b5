//! Synthetic hypergraphs with planted credibility/veracity signal.
//!
//! The generator plants, by construction, the phenomena the detector is
//! supposed to pick up: a pool of uncredible users whose attributes are
//! shifted, fake news that recruits mostly from that pool (`p_align`),
//! class-specific vocabularies with configurable overlap, a mild activity
//! skew (fake items reach slightly more users), and exponential
//! inter-arrival spreading times. Setting `p_align = 0.5` and overlap 1.0
//! removes every label correlation — trained accuracy must drop to chance,
//! which is the generator's own null test.
//!
//! Independently of the label signal, each item carries a latent theme
//! (`coupling`) that tilts both who shares it and how it is worded, so the
//! structural and textual views agree on item identity, not just on the
//! label — the raw material a mutual-information objective trains on.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use thiserror::Error;

use crate::hypergraph::{Hypergraph, Incidence};
use crate::seeding::{sub_seed, tags};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

/// Knobs of the planted-signal generator. The defaults are the standard
/// benchmark instance used throughout the test suite.
#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    /// Users.
    pub m: usize,
    /// News hyperedges.
    pub t: usize,
    /// Fraction of fake edges; also sizes the uncredible user pool.
    pub fraction_fake: f64,
    /// Attribute columns per user.
    pub attr_dim: usize,
    /// Pre-standardization attribute mean of credible users (all columns).
    pub credible_mean: f64,
    /// Same for uncredible users.
    pub uncredible_mean: f64,
    /// Attribute standard deviation within each pool. The default keeps it
    /// well under the pool-mean gap, so most attribute variance is carried
    /// by credibility and an autoencoder has something to reconstruct.
    pub cov_scale: f64,
    /// Fraction of each class vocabulary shared with the other class.
    pub vocab_overlap: f64,
    /// Words per class vocabulary.
    pub vocab_size: usize,
    /// Poisson mean of edge sizes before the activity skew.
    pub mean_users_per_edge: f64,
    /// Probability that an edge recruits its whole user set from the
    /// label-aligned pool (uncredible for fake news, credible for real);
    /// otherwise it recruits from the opposite pool. 0.5 = no structural
    /// signal; misaligned edges bound what user structure alone can reveal.
    pub p_align: f64,
    /// Words per news text, inclusive range.
    pub text_len: (usize, usize),
    /// Mean seconds between consecutive participants of one edge.
    pub mean_interarrival_seconds: f64,
    /// Strength of the per-item theme shared by an item's participant draw
    /// and its word draw. Each item gets a latent direction (kept orthogonal
    /// to the pool-separation axis, so it carries no label information);
    /// members are drawn from the label-chosen pool tilted toward attribute
    /// agreement with that direction, and words from the label-chosen
    /// vocabulary tilted the same way. 0 makes both draws uniform, leaving
    /// the two channels independent given the label.
    pub coupling: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            m: 2000,
            t: 400,
            fraction_fake: 0.5,
            attr_dim: 8,
            credible_mean: 0.15,
            uncredible_mean: -0.15,
            cov_scale: 0.1,
            vocab_overlap: 0.3,
            vocab_size: 100,
            mean_users_per_edge: 45.0,
            p_align: 0.85,
            text_len: (15, 30),
            mean_interarrival_seconds: 7200.0,
            coupling: 3.0,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    /// The no-signal control: member draws ignore labels and both classes
    /// share one vocabulary.
    pub fn null_control(mut self) -> SyntheticConfig {
        self.p_align = 0.5;
        self.vocab_overlap = 1.0;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidConfig(msg));
        if self.m < 4 {
            return bad(format!("m must be ≥ 4, got {}", self.m));
        }
        if self.t < 2 {
            return bad(format!("t must be ≥ 2, got {}", self.t));
        }
        if !(self.fraction_fake > 0.0 && self.fraction_fake < 1.0) {
            return bad(format!("fraction_fake must lie in (0,1), got {}", self.fraction_fake));
        }
        if !(0.5..=1.0).contains(&self.p_align) {
            return bad(format!("p_align must lie in [0.5,1], got {}", self.p_align));
        }
        if !(0.0..=1.0).contains(&self.vocab_overlap) {
            return bad(format!("vocab_overlap must lie in [0,1], got {}", self.vocab_overlap));
        }
        if self.attr_dim == 0 {
            return bad("attr_dim must be ≥ 1".into());
        }
        if !(self.cov_scale > 0.0) {
            return bad(format!("cov_scale must be positive, got {}", self.cov_scale));
        }
        if !(self.mean_users_per_edge >= 2.0) {
            return bad(format!(
                "mean_users_per_edge must be ≥ 2, got {}",
                self.mean_users_per_edge
            ));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be ≥ 1".into());
        }
        if self.text_len.0 == 0 || self.text_len.0 > self.text_len.1 {
            return bad(format!("text_len range {:?} is empty", self.text_len));
        }
        if !(self.mean_interarrival_seconds > 0.0) {
            return bad(format!(
                "mean_interarrival_seconds must be positive, got {}",
                self.mean_interarrival_seconds
            ));
        }
        if !self.coupling.is_finite() || self.coupling < 0.0 {
            return bad(format!("coupling must be finite and ≥ 0, got {}", self.coupling));
        }
        Ok(())
    }
}

/// A generated dataset plus its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub hypergraph: Hypergraph,
    /// Per-user ground truth: true = uncredible.
    pub uncredible: Vec<bool>,
    pub user_ids: Vec<String>,
    pub edge_ids: Vec<String>,
}

/// Standardizes columns in place to zero mean and unit (population)
/// variance; constant columns go to all-zero. Columns already within 1e-9
/// of standardized are left untouched so the operation is idempotent.
pub(crate) fn standardize_columns(x: &mut Tensor) {
    let (m, d) = x.shape();
    if m == 0 {
        return;
    }
    for c in 0..d {
        let mean = (0..m).map(|r| x[(r, c)]).sum::<f64>() / m as f64;
        let var = (0..m).map(|r| (x[(r, c)] - mean) * (x[(r, c)] - mean)).sum::<f64>() / m as f64;
        if mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9 {
            continue;
        }
        if var < 1e-24 {
            for r in 0..m {
                x[(r, c)] = 0.0;
            }
            continue;
        }
        let inv_std = 1.0 / var.sqrt();
        for r in 0..m {
            x[(r, c)] = (x[(r, c)] - mean) * inv_std;
        }
    }
}

/// Scales `v` to unit length in place; a near-zero vector is zeroed instead.
fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    } else {
        v.fill(0.0);
    }
}

/// Cumulative weights `exp(score - max_score)` for one weighted draw pass.
fn cumulative_weights(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    scores
        .iter()
        .map(|&s| {
            total += (s - max).exp();
            total
        })
        .collect()
}

/// Draws an index from cumulative weights; `u` is uniform in [0, 1).
fn weighted_index(cum: &[f64], u: f64) -> usize {
    let target = u * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= target).min(cum.len() - 1)
}

/// Generates a labeled, timestamped, attributed hypergraph with the
/// configured planted signal. Deterministic per seed.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, tags::SYNTH));

    // Uncredible users occupy the index prefix. Node index carries no
    // information the model can see — only attributes and structure do.
    let m = config.m;
    let n_unc = ((m as f64 * config.fraction_fake).round() as usize).clamp(1, m - 1);
    let uncredible: Vec<bool> = (0..m).map(|v| v < n_unc).collect();

    let normal = Normal::new(0.0, config.cov_scale).expect("validated");
    let mut attrs = Tensor::zeros(m, config.attr_dim);
    for v in 0..m {
        let mean = if uncredible[v] { config.uncredible_mean } else { config.credible_mean };
        for c in 0..config.attr_dim {
            attrs[(v, c)] = mean + normal.sample(&mut rng);
        }
    }
    standardize_columns(&mut attrs);

    // Labels: fixed class counts, order shuffled independently of the
    // structural generator.
    let t = config.t;
    let n_fake = ((t as f64 * config.fraction_fake).round() as usize).clamp(1, t - 1);
    let mut labels: Vec<u8> = (0..t).map(|e| u8::from(e < n_fake)).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, tags::SHUFFLE));
    labels.shuffle(&mut shuffle_rng);

    // Class vocabularies: `shared` words in common, the rest disjoint.
    let shared = (config.vocab_size as f64 * config.vocab_overlap).round() as usize;
    let shared = shared.min(config.vocab_size);
    let vocab_for = |class: u8| -> Vec<String> {
        let own_prefix = if class == 0 { "r" } else { "f" };
        (0..config.vocab_size)
            .map(|i| {
                if i < shared {
                    format!("w{i}")
                } else {
                    format!("{own_prefix}{i}")
                }
            })
            .collect()
    };
    let vocabs = [vocab_for(0), vocab_for(1)];

    // Theme machinery: the pool-separation axis (so themes can avoid it) and
    // one latent direction per vocabulary slot. Shared slots keep one latent
    // across classes; class-specific slots never co-occur anyway.
    let axis = {
        let mut axis = vec![0.0; config.attr_dim];
        for (c, slot) in axis.iter_mut().enumerate() {
            let unc = (0..n_unc).map(|v| attrs[(v, c)]).sum::<f64>() / n_unc as f64;
            let cred = (n_unc..m).map(|v| attrs[(v, c)]).sum::<f64>() / (m - n_unc) as f64;
            *slot = unc - cred;
        }
        normalize(&mut axis);
        axis
    };
    // Word latents stay unnormalized: against a unit theme the score is then
    // standard normal regardless of attr_dim, so the wording tilt does not
    // wash out in higher-dimensional attribute spaces.
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let word_latents: Vec<Vec<f64>> = (0..config.vocab_size)
        .map(|_| (0..config.attr_dim).map(|_| std_normal.sample(&mut rng)).collect())
        .collect();

    let exp = Exp::new(1.0 / config.mean_interarrival_seconds).expect("validated");
    // Activity skew: fake edges recruit slightly more users; vanishes at
    // the null setting p_align = 0.5.
    let skew = 0.05 * (2.0 * config.p_align - 1.0);

    let mut edges: Vec<Vec<usize>> = Vec::with_capacity(t);
    let mut times: Vec<Vec<f64>> = Vec::with_capacity(t);
    let mut texts: Vec<String> = Vec::with_capacity(t);
    for e in 0..t {
        let label = labels[e];
        let lambda = config.mean_users_per_edge
            * if label == 1 { 1.0 + skew } else { 1.0 - skew };

        // The whole edge recruits from one pool: the label-aligned one
        // with probability p_align, the opposite one otherwise.
        let aligned = rng.random::<f64>() < config.p_align;
        let from_unc = (label == 1) == aligned;
        let (pool_start, pool_len) = if from_unc { (0, n_unc) } else { (n_unc, m - n_unc) };
        let size = (Poisson::new(lambda).expect("validated").sample(&mut rng) as usize)
            .clamp(2.min(pool_len), pool_len);

        // This item's theme: a unit direction orthogonal to the pool axis.
        let mut theme: Vec<f64> =
            (0..config.attr_dim).map(|_| std_normal.sample(&mut rng)).collect();
        let along: f64 = theme.iter().zip(&axis).map(|(t, a)| t * a).sum();
        for (t, a) in theme.iter_mut().zip(&axis) {
            *t -= along * a;
        }
        normalize(&mut theme);

        // Standardize the affinities within the pool so `coupling` is the
        // standard deviation of the log-weight tilt, independent of how
        // spread the pool's attributes happen to be.
        let mut member_scores: Vec<f64> = (0..pool_len)
            .map(|i| {
                let v = pool_start + i;
                (0..config.attr_dim).map(|c| attrs[(v, c)] * theme[c]).sum::<f64>()
            })
            .collect();
        let mean = member_scores.iter().sum::<f64>() / pool_len as f64;
        let var = member_scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
            / pool_len as f64;
        let scale = if var > 1e-24 { config.coupling / var.sqrt() } else { 0.0 };
        for s in &mut member_scores {
            *s = (*s - mean) * scale;
        }
        let member_cum = cumulative_weights(&member_scores);

        let mut members: Vec<usize> = Vec::with_capacity(size);
        let mut member_times: Vec<f64> = Vec::with_capacity(size);
        let mut clock = 0.0;
        let mut attempts = 0usize;
        while members.len() < size && attempts < 50 * size {
            attempts += 1;
            let v = pool_start + weighted_index(&member_cum, rng.random::<f64>());
            if members.contains(&v) {
                continue;
            }
            if !members.is_empty() {
                clock += exp.sample(&mut rng);
            }
            members.push(v);
            member_times.push(clock);
        }

        // Align times with the node-index order the incidence stores.
        let mut order: Vec<usize> = (0..members.len()).collect();
        order.sort_by_key(|&i| members[i]);
        edges.push(order.iter().map(|&i| members[i]).collect());
        times.push(order.iter().map(|&i| member_times[i]).collect());

        // The theme redistributes word mass only within the class-specific
        // block; shared words keep their base rate. An item's balance of
        // shared vs class-specific words — its class evidence — is therefore
        // theme-independent, the same guarantee orthogonality gives the
        // member draw.
        let vocab = &vocabs[usize::from(label)];
        let specific = config.vocab_size - shared;
        let mut word_weights = vec![1.0; config.vocab_size];
        if specific > 0 && config.coupling > 0.0 {
            let scores: Vec<f64> = word_latents[shared..]
                .iter()
                .map(|theta| {
                    config.coupling * theta.iter().zip(&theme).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tilts: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
            let total: f64 = tilts.iter().sum();
            for (w, tilt) in word_weights[shared..].iter_mut().zip(&tilts) {
                *w = tilt * specific as f64 / total;
            }
        }
        let mut total = 0.0;
        let word_cum: Vec<f64> = word_weights
            .iter()
            .map(|&w| {
                total += w;
                total
            })
            .collect();
        let len = rng.random_range(config.text_len.0..=config.text_len.1);
        let words: Vec<&str> = (0..len)
            .map(|_| vocab[weighted_index(&word_cum, rng.random::<f64>())].as_str())
            .collect();
        texts.push(words.join(" "));
    }

    let incidence = Incidence::new(edges, m).expect("members are in range and non-empty");
    let hypergraph = Hypergraph::new(
        incidence,
        attrs,
        texts,
        labels.into_iter().map(Some).collect(),
        Some(times),
    )
    .expect("generated components are consistent");

    Ok(SyntheticDataset {
        hypergraph,
        uncredible,
        user_ids: (0..m).map(|v| format!("u{v}")).collect(),
        edge_ids: (0..t).map(|e| format!("e{e}")).collect(),
    })
}
