//! Attributed graphs, dataset persistence, and disjoint-union batching.
//!
//! Graphs are stored undirected (one record per edge, `u < v`) and expanded
//! to both directions only at batch time, so the two directions of an edge
//! can never disagree about weights or masks. Datasets persist as JSONL with
//! a fixed key order; serialization is canonical, meaning equal datasets
//! produce byte-identical files.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSONL record: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("graph {id}: {reason}")]
    Validation { id: u64, reason: String },
    #[error("batch: {0}")]
    Batch(String),
}

/// Which split a graph belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Undirected attributed graph with a class label and, for synthetic data,
/// the oracle rationale edge flags and motif/base provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub id: u64,
    pub num_nodes: usize,
    /// Undirected edges with `u < v`, no duplicates.
    pub edges: Vec<(u32, u32)>,
    /// True exactly for edges of the oracle rationale.
    pub edge_truth: Vec<bool>,
    /// Row-major node features, `num_nodes` rows of dimension `d`.
    pub features: Vec<Vec<f64>>,
    pub label: usize,
    pub base_kind: Option<u8>,
    pub motif_kind: Option<u8>,
    pub split: Split,
}

impl Graph {
    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let fail = |reason: String| GraphError::Validation {
            id: self.id,
            reason,
        };
        if self.num_nodes == 0 {
            return Err(fail("graph has no nodes".into()));
        }
        if self.features.len() != self.num_nodes {
            return Err(fail(format!(
                "{} feature rows for {} nodes",
                self.features.len(),
                self.num_nodes
            )));
        }
        let d = self.feature_dim();
        if self.features.iter().any(|row| row.len() != d) {
            return Err(fail("ragged feature rows".into()));
        }
        if self.edge_truth.len() != self.edges.len() {
            return Err(fail(format!(
                "{} truth flags for {} edges",
                self.edge_truth.len(),
                self.edges.len()
            )));
        }
        let mut seen = HashSet::with_capacity(self.edges.len());
        for &(u, v) in &self.edges {
            if u >= v {
                return Err(fail(format!("edge ({u},{v}) must satisfy u < v")));
            }
            if (v as usize) >= self.num_nodes {
                return Err(fail(format!(
                    "edge ({u},{v}) exceeds node count {}",
                    self.num_nodes
                )));
            }
            if !seen.insert((u, v)) {
                return Err(fail(format!("duplicate edge ({u},{v})")));
            }
        }
        Ok(())
    }

    /// Degree of every node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u as usize] += 1;
            deg[v as usize] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        if self.num_nodes == 0 {
            return false;
        }
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u as usize].push(v as usize);
            adj[v as usize].push(u as usize);
        }
        let mut seen = vec![false; self.num_nodes];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(n) = stack.pop() {
            for &m in &adj[n] {
                if !seen[m] {
                    seen[m] = true;
                    count += 1;
                    stack.push(m);
                }
            }
        }
        count == self.num_nodes
    }
}

/// On-disk record; field order here is the emitted key order.
#[derive(Serialize, Deserialize)]
struct GraphRecord {
    id: u64,
    n: usize,
    edges: Vec<[u32; 2]>,
    edge_truth: Vec<u8>,
    x: Vec<Vec<f64>>,
    y: usize,
    base: Option<u8>,
    motif: Option<u8>,
    split: Split,
}

impl From<&Graph> for GraphRecord {
    fn from(g: &Graph) -> Self {
        GraphRecord {
            id: g.id,
            n: g.num_nodes,
            edges: g.edges.iter().map(|&(u, v)| [u, v]).collect(),
            edge_truth: g.edge_truth.iter().map(|&b| b as u8).collect(),
            x: g.features.clone(),
            y: g.label,
            base: g.base_kind,
            motif: g.motif_kind,
            split: g.split,
        }
    }
}

impl GraphRecord {
    fn into_graph(self) -> Result<Graph, GraphError> {
        for &t in &self.edge_truth {
            if t > 1 {
                return Err(GraphError::Validation {
                    id: self.id,
                    reason: format!("edge_truth value {t} is not 0 or 1"),
                });
            }
        }
        let g = Graph {
            id: self.id,
            num_nodes: self.n,
            edges: self.edges.iter().map(|e| (e[0], e[1])).collect(),
            edge_truth: self.edge_truth.iter().map(|&t| t == 1).collect(),
            features: self.x,
            label: self.y,
            base_kind: self.base,
            motif_kind: self.motif,
            split: self.split,
        };
        g.validate()?;
        Ok(g)
    }
}

/// Writes one JSON object per graph. Key order and float formatting are
/// fixed, so equal datasets serialize to identical bytes.
pub fn save_jsonl<P: AsRef<Path>>(graphs: &[Graph], path: P) -> Result<(), GraphError> {
    for g in graphs {
        g.validate()?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for g in graphs {
        let rec = GraphRecord::from(g);
        serde_json::to_writer(&mut w, &rec).map_err(|e| GraphError::Parse { line: 0, source: e })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<Graph>, GraphError> {
    let reader = BufReader::new(File::open(path)?);
    let mut graphs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraphRecord = serde_json::from_str(&line).map_err(|e| GraphError::Parse {
            line: lineno + 1,
            source: e,
        })?;
        graphs.push(rec.into_graph()?);
    }
    Ok(graphs)
}

/// A dataset in memory; immutable once loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
}

impl Dataset {
    pub fn new(graphs: Vec<Graph>) -> Self {
        Dataset { graphs }
    }

    pub fn split(&self, s: Split) -> Vec<&Graph> {
        self.graphs.iter().filter(|g| g.split == s).collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn n_classes(&self) -> usize {
        self.graphs.iter().map(|g| g.label + 1).max().unwrap_or(0)
    }
}

/// Disjoint union of several graphs with directed edge expansion.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Flat row-major merged feature matrix, `num_nodes x feature_dim`.
    pub features: Vec<f64>,
    pub num_nodes: usize,
    pub feature_dim: usize,
    /// Directed edges (both directions of every undirected edge), with node
    /// offsets applied.
    pub dir_src: Vec<usize>,
    pub dir_dst: Vec<usize>,
    /// Undirected edge index behind each directed edge.
    pub dir_to_und: Vec<usize>,
    /// Undirected edge endpoints as global node ids.
    pub und_u: Vec<usize>,
    pub und_v: Vec<usize>,
    /// Owning graph of each undirected edge.
    pub und_graph: Vec<usize>,
    /// Per-graph range into the undirected edge arrays.
    pub und_range: Vec<(usize, usize)>,
    /// Owning graph of each node; non-decreasing.
    pub graph_index: Vec<usize>,
    /// First global node id of each graph.
    pub node_offset: Vec<usize>,
    pub labels: Vec<usize>,
    pub num_graphs: usize,
}

/// Merges graphs into one disjoint-union batch.
pub fn make_batch(graphs: &[&Graph]) -> Result<Batch, GraphError> {
    if graphs.is_empty() {
        return Err(GraphError::Batch("empty graph list".into()));
    }
    let d = graphs[0].feature_dim();
    if graphs.iter().any(|g| g.feature_dim() != d) {
        return Err(GraphError::Batch("mixed feature dimensions".into()));
    }
    let num_nodes: usize = graphs.iter().map(|g| g.num_nodes).sum();
    let num_und: usize = graphs.iter().map(|g| g.edges.len()).sum();
    let mut b = Batch {
        features: Vec::with_capacity(num_nodes * d),
        num_nodes,
        feature_dim: d,
        dir_src: Vec::with_capacity(2 * num_und),
        dir_dst: Vec::with_capacity(2 * num_und),
        dir_to_und: Vec::with_capacity(2 * num_und),
        und_u: Vec::with_capacity(num_und),
        und_v: Vec::with_capacity(num_und),
        und_graph: Vec::with_capacity(num_und),
        und_range: Vec::with_capacity(graphs.len()),
        graph_index: Vec::with_capacity(num_nodes),
        node_offset: Vec::with_capacity(graphs.len()),
        labels: Vec::with_capacity(graphs.len()),
        num_graphs: graphs.len(),
    };
    let mut offset = 0usize;
    for (gi, g) in graphs.iter().enumerate() {
        b.node_offset.push(offset);
        b.labels.push(g.label);
        for row in &g.features {
            b.features.extend_from_slice(row);
        }
        b.graph_index.extend(std::iter::repeat_n(gi, g.num_nodes));
        let und_start = b.und_u.len();
        for &(u, v) in &g.edges {
            let (gu, gv) = (offset + u as usize, offset + v as usize);
            let und_idx = b.und_u.len();
            b.und_u.push(gu);
            b.und_v.push(gv);
            b.und_graph.push(gi);
            b.dir_src.push(gu);
            b.dir_dst.push(gv);
            b.dir_to_und.push(und_idx);
            b.dir_src.push(gv);
            b.dir_dst.push(gu);
            b.dir_to_und.push(und_idx);
        }
        b.und_range.push((und_start, b.und_u.len()));
        offset += g.num_nodes;
    }
    Ok(b)
}
