//! Dataset ingestion, validation, serialization, and time-windowed views.
//!
//! Formats are line-oriented UTF-8 so fixtures stay human-auditable:
//!
//! * nodes file — `user_id<TAB>a1,a2,...,a_du`, one user per line;
//! * edges file — `edge_id<TAB>label<TAB>text<TAB>members` where label is
//!   `0`, `1`, or `?` (unlabeled) and members is a comma list of
//!   `user_id` or `user_id@timestamp_seconds` (timestamps all-or-none per
//!   file);
//! * manifest — `key=value` lines with keys `nodes`, `edges`,
//!   `embeddings` (optional), `d_u`, `m`, `t`; paths are resolved
//!   relative to the manifest's directory.
//!
//! Attribute columns are standardized to zero mean / unit variance at
//! load (constant columns go to zero), so writing a loaded dataset and
//! loading it again reproduces the exact same matrix.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::embed::{load_precomputed, precomputed_matrix, EmbedError};
use crate::hypergraph::{Hypergraph, HypergraphError, Incidence};
use crate::synth::standardize_columns;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    ParseError { path: String, line: usize, msg: String },
    #[error("count mismatch for {what}: manifest declares {declared}, parsed {parsed}")]
    CountMismatch { what: String, declared: usize, parsed: usize },
    #[error("edge '{edge}' references unknown user '{user}'")]
    IndexOutOfRange { edge: String, user: String },
    #[error("hypergraph has no incidence timestamps")]
    MissingTimestamps,
    #[error(transparent)]
    Hypergraph(#[from] HypergraphError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Declares where a dataset lives and what shape it must have.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub d_u: usize,
    pub m: usize,
    pub t: usize,
}

impl DatasetManifest {
    /// Parses a `key=value` manifest. Unknown keys are rejected so typos
    /// fail loudly; `#` starts a comment.
    pub fn read(path: &Path) -> Result<Self, DataError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let mut nodes = None;
        let mut edges = None;
        let mut embeddings = None;
        let mut d_u = None;
        let mut m = None;
        let mut t = None;
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| DataError::ParseError {
                path: display.clone(),
                line: lineno,
                msg: "expected key=value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let parse_count = |value: &str| {
                value.parse::<usize>().map_err(|e| DataError::ParseError {
                    path: display.clone(),
                    line: lineno,
                    msg: format!("bad count for {key}: {e}"),
                })
            };
            match key {
                "nodes" => nodes = Some(dir.join(value)),
                "edges" => edges = Some(dir.join(value)),
                "embeddings" => embeddings = Some(dir.join(value)),
                "d_u" => d_u = Some(parse_count(value)?),
                "m" => m = Some(parse_count(value)?),
                "t" => t = Some(parse_count(value)?),
                other => {
                    return Err(DataError::ParseError {
                        path: display,
                        line: lineno,
                        msg: format!("unknown manifest key '{other}'"),
                    })
                }
            }
        }
        let require = |name: &str, v: Option<PathBuf>| {
            v.ok_or_else(|| DataError::ParseError {
                path: display.clone(),
                line: 0,
                msg: format!("missing required key '{name}'"),
            })
        };
        let require_count = |name: &str, v: Option<usize>| {
            v.ok_or_else(|| DataError::ParseError {
                path: display.clone(),
                line: 0,
                msg: format!("missing required key '{name}'"),
            })
        };
        Ok(DatasetManifest {
            nodes: require("nodes", nodes)?,
            edges: require("edges", edges)?,
            embeddings,
            d_u: require_count("d_u", d_u)?,
            m: require_count("m", m)?,
            t: require_count("t", t)?,
        })
    }
}

/// A parsed-and-validated dataset plus everything needed to report on it.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub hypergraph: Hypergraph,
    pub user_ids: Vec<String>,
    pub edge_ids: Vec<String>,
    /// Precomputed news embeddings, if the manifest points at some.
    pub embeddings: Option<Tensor>,
    /// Human-readable data-quality notes (e.g. isolated users).
    pub warnings: Vec<String>,
}

/// Loads, validates, and standardizes the dataset a manifest describes.
pub fn load_dataset(manifest_path: &Path) -> Result<LoadedDataset, DataError> {
    let manifest = DatasetManifest::read(manifest_path)?;

    let (user_ids, mut attrs) = parse_nodes(&manifest.nodes, manifest.d_u)?;
    if user_ids.len() != manifest.m {
        return Err(DataError::CountMismatch {
            what: "nodes (m)".into(),
            declared: manifest.m,
            parsed: user_ids.len(),
        });
    }
    let index: HashMap<&str, usize> =
        user_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

    let parsed = parse_edges(&manifest.edges, &index)?;
    if parsed.edge_ids.len() != manifest.t {
        return Err(DataError::CountMismatch {
            what: "hyperedges (t)".into(),
            declared: manifest.t,
            parsed: parsed.edge_ids.len(),
        });
    }

    standardize_columns(&mut attrs);
    let incidence = Incidence::new(parsed.members, user_ids.len())?;
    let mut warnings = Vec::new();
    for (v, &deg) in incidence.node_degrees().iter().enumerate() {
        if deg == 0 {
            warnings.push(format!("user '{}' participates in no edges", user_ids[v]));
        }
    }
    let hypergraph =
        Hypergraph::new(incidence, attrs, parsed.texts, parsed.labels, parsed.times)?;

    let embeddings = match &manifest.embeddings {
        Some(path) => {
            let map = load_precomputed(path, &parsed.edge_ids)?;
            Some(precomputed_matrix(&map, &parsed.edge_ids)?)
        }
        None => None,
    };

    Ok(LoadedDataset { hypergraph, user_ids, edge_ids: parsed.edge_ids, embeddings, warnings })
}

fn parse_nodes(path: &Path, d_u: usize) -> Result<(Vec<String>, Tensor), DataError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| DataError::ParseError { path: display.clone(), line: lineno, msg };
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| err("expected user_id<TAB>a1,a2,...".into()))?;
        if let Some(first) = seen.insert(id.to_owned(), lineno) {
            return Err(err(format!("duplicate user id '{id}' (first seen on line {first})")));
        }
        let values: Vec<f64> = rest
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| err(format!("bad attribute: {e}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite attribute value".into()));
        }
        if values.len() != d_u {
            return Err(DataError::CountMismatch {
                what: format!("attribute columns for user '{id}' ({display}:{lineno})"),
                declared: d_u,
                parsed: values.len(),
            });
        }
        ids.push(id.to_owned());
        rows.push(values);
    }
    let mut attrs = Tensor::zeros(ids.len(), d_u);
    for (r, row) in rows.iter().enumerate() {
        attrs.row_mut(r).copy_from_slice(row);
    }
    Ok((ids, attrs))
}

struct ParsedEdges {
    edge_ids: Vec<String>,
    labels: Vec<Option<u8>>,
    texts: Vec<String>,
    members: Vec<Vec<usize>>,
    times: Option<Vec<Vec<f64>>>,
}

fn parse_edges(path: &Path, user_index: &HashMap<&str, usize>) -> Result<ParsedEdges, DataError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut edge_ids = Vec::new();
    let mut labels = Vec::new();
    let mut texts = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut times: Vec<Vec<f64>> = Vec::new();
    // None until the first member token decides; then enforced file-wide.
    let mut timestamped: Option<bool> = None;
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| DataError::ParseError { path: display.clone(), line: lineno, msg };
        let mut fields = line.splitn(4, '\t');
        let (Some(id), Some(label), Some(text), Some(member_field)) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(err("expected edge_id<TAB>label<TAB>text<TAB>members".into()));
        };
        if let Some(first) = seen.insert(id.to_owned(), lineno) {
            return Err(err(format!("duplicate edge id '{id}' (first seen on line {first})")));
        }
        let label = match label {
            "0" => Some(0),
            "1" => Some(1),
            "?" => None,
            other => return Err(err(format!("label must be 0, 1, or ?, got '{other}'"))),
        };

        let mut edge_members: Vec<usize> = Vec::new();
        let mut edge_times: Vec<f64> = Vec::new();
        if !member_field.is_empty() {
            for token in member_field.split(',') {
                if token.is_empty() {
                    return Err(err("empty member token".into()));
                }
                // A token carries a timestamp iff the text after its last
                // '@' parses as a float; otherwise the whole token is the
                // user id.
                let (user, time) = match token.rsplit_once('@') {
                    Some((u, ts)) => match ts.parse::<f64>() {
                        Ok(v) if v.is_finite() => (u, Some(v)),
                        Ok(_) => return Err(err(format!("non-finite timestamp in '{token}'"))),
                        Err(_) => (token, None),
                    },
                    None => (token, None),
                };
                let has_time = time.is_some();
                match timestamped {
                    None => timestamped = Some(has_time),
                    Some(mode) if mode != has_time => {
                        return Err(err(format!(
                            "timestamps must be all-or-none per file; '{token}' disagrees"
                        )))
                    }
                    Some(_) => {}
                }
                let &v = user_index.get(user).ok_or_else(|| DataError::IndexOutOfRange {
                    edge: id.to_owned(),
                    user: user.to_owned(),
                })?;
                if edge_members.contains(&v) {
                    return Err(err(format!("duplicate member '{user}'")));
                }
                edge_members.push(v);
                if let Some(ts) = time {
                    edge_times.push(ts);
                }
            }
        }
        // Keep timestamps aligned with the sorted order Incidence stores.
        let mut order: Vec<usize> = (0..edge_members.len()).collect();
        order.sort_by_key(|&i| edge_members[i]);
        edge_ids.push(id.to_owned());
        labels.push(label);
        texts.push(text.to_owned());
        members.push(order.iter().map(|&i| edge_members[i]).collect());
        if timestamped == Some(true) {
            times.push(order.iter().map(|&i| edge_times[i]).collect());
        }
    }
    let times = if timestamped == Some(true) { Some(times) } else { None };
    Ok(ParsedEdges { edge_ids, labels, texts, members, times })
}

/// Writes `{stem}.nodes.tsv`, `{stem}.edges.tsv`, and `{stem}.manifest`
/// into `dir` and returns the manifest path. Floats use the shortest
/// round-trip representation, so `load_dataset` reproduces the exact
/// matrix (attributes must already be standardized, as every loaded or
/// generated hypergraph's are).
pub fn write_dataset(
    hypergraph: &Hypergraph,
    user_ids: &[String],
    edge_ids: &[String],
    dir: &Path,
    stem: &str,
) -> Result<PathBuf, DataError> {
    assert_eq!(user_ids.len(), hypergraph.node_count(), "one id per user");
    assert_eq!(edge_ids.len(), hypergraph.edge_count(), "one id per edge");

    let mut nodes = String::new();
    for (v, id) in user_ids.iter().enumerate() {
        let row: Vec<String> =
            (0..hypergraph.attr_dim()).map(|c| hypergraph.node_attrs[(v, c)].to_string()).collect();
        writeln!(nodes, "{id}\t{}", row.join(",")).expect("string write");
    }

    let mut edges = String::new();
    for (e, id) in edge_ids.iter().enumerate() {
        let label = match hypergraph.edge_labels[e] {
            Some(l) => l.to_string(),
            None => "?".to_string(),
        };
        let edge = hypergraph.incidence.edge(e);
        let member_field: Vec<String> = match &hypergraph.incidence_times {
            Some(times) => edge
                .iter()
                .zip(&times[e])
                .map(|(&v, ts)| format!("{}@{}", user_ids[v], ts))
                .collect(),
            None => edge.iter().map(|&v| user_ids[v].clone()).collect(),
        };
        writeln!(
            edges,
            "{id}\t{label}\t{}\t{}",
            hypergraph.edge_texts[e],
            member_field.join(",")
        )
        .expect("string write");
    }

    let manifest = format!(
        "nodes={stem}.nodes.tsv\nedges={stem}.edges.tsv\nd_u={}\nm={}\nt={}\n",
        hypergraph.attr_dim(),
        hypergraph.node_count(),
        hypergraph.edge_count()
    );

    let nodes_path = dir.join(format!("{stem}.nodes.tsv"));
    let edges_path = dir.join(format!("{stem}.edges.tsv"));
    let manifest_path = dir.join(format!("{stem}.manifest"));
    std::fs::write(&nodes_path, nodes).map_err(io_err(&nodes_path))?;
    std::fs::write(&edges_path, edges).map_err(io_err(&edges_path))?;
    std::fs::write(&manifest_path, manifest).map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}

/// Restricts every edge to the incidences with timestamp ≤ `cutoff`.
///
/// An edge whose every incidence is later than the cutoff keeps its single
/// earliest participant (ties broken toward the smaller node index): a news
/// item enters the data only once someone has shared it, so it is never
/// memberless. Texts, labels, and attributes pass through unchanged.
pub fn time_window(hypergraph: &Hypergraph, cutoff: f64) -> Result<Hypergraph, DataError> {
    let times = hypergraph.incidence_times.as_ref().ok_or(DataError::MissingTimestamps)?;
    let mut members: Vec<Vec<usize>> = Vec::with_capacity(hypergraph.edge_count());
    let mut windowed_times: Vec<Vec<f64>> = Vec::with_capacity(hypergraph.edge_count());
    for (e, edge) in hypergraph.incidence.edges().iter().enumerate() {
        let kept: Vec<usize> = (0..edge.len()).filter(|&i| times[e][i] <= cutoff).collect();
        if kept.is_empty() {
            let earliest = (0..edge.len())
                .min_by(|&a, &b| times[e][a].total_cmp(&times[e][b]))
                .expect("edges are never empty");
            members.push(vec![edge[earliest]]);
            windowed_times.push(vec![times[e][earliest]]);
        } else {
            members.push(kept.iter().map(|&i| edge[i]).collect());
            windowed_times.push(kept.iter().map(|&i| times[e][i]).collect());
        }
    }
    let incidence = Incidence::new(members, hypergraph.node_count())?;
    Ok(Hypergraph::new(
        incidence,
        hypergraph.node_attrs.clone(),
        hypergraph.edge_texts.clone(),
        hypergraph.edge_labels.clone(),
        Some(windowed_times),
    )?)
}
