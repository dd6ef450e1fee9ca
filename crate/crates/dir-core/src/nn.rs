//! Differentiable graph layers and parameter management.
//!
//! One convolution serves every model in the crate:
//!
//! ```text
//! x'_i = ReLU(W_self x_i + W_neigh (sum over edges j->i of w_ji x_j) + bias)
//! ```
//!
//! Edge weights enter the neighbor sum linearly, which is the gradient path
//! the rationale generator trains through. Parameters live in four groups
//! (generator, encoder, causal head, spurious head) so the two losses can be
//! routed to disjoint parameter sets.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Gradients, Tape, Tensor, TensorId};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint format error: {0}")]
    Format(String),
}

/// The four parameter groups of the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupId {
    Generator,
    Encoder,
    CausalHead,
    SpuriousHead,
}

impl GroupId {
    pub const ALL: [GroupId; 4] = [
        GroupId::Generator,
        GroupId::Encoder,
        GroupId::CausalHead,
        GroupId::SpuriousHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GroupId::Generator => "generator",
            GroupId::Encoder => "encoder",
            GroupId::CausalHead => "causal-head",
            GroupId::SpuriousHead => "spurious-head",
        }
    }
}

/// One named parameter tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        let grad = vec![0.0; values.len()];
        ParamTensor {
            name: name.into(),
            shape,
            values,
            grad,
        }
    }
}

/// A group of named tensors updated together by one loss.
#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub id: GroupId,
    pub tensors: Vec<ParamTensor>,
}

impl ParamGroup {
    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.fill(0.0);
        }
    }

    pub fn grads_are_exactly_zero(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.grad.iter().all(|&g| g == 0.0))
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }
}

/// Layer widths of the backbone and heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub feature_dim: usize,
    /// Output width of each encoder convolution layer, e.g. [32, 32, 32].
    pub hidden: Vec<usize>,
    /// Output widths of the rationale generator's convolution layers. Deeper
    /// than the encoder: the edge scores come from embedding dot products,
    /// and a receptive field that spans whole motifs (and lets cycle
    /// messages wrap around) ranks motif edges far better from the start.
    pub gen_hidden: Vec<usize>,
    pub head_hidden: usize,
    pub n_classes: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            feature_dim: 4,
            hidden: vec![32, 32, 32],
            gen_hidden: vec![32; 8],
            head_hidden: 32,
            n_classes: 3,
        }
    }
}

impl Arch {
    pub fn embed_dim(&self) -> usize {
        *self.hidden.last().expect("at least one conv layer")
    }
}

/// All trainable state of one model.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub arch: Arch,
    pub seed: u64,
    pub generator: ParamGroup,
    pub encoder: ParamGroup,
    pub causal_head: ParamGroup,
    pub spurious_head: ParamGroup,
}

fn uniform_init(rng: &mut Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.range_f64(-bound, bound)).collect()
}

/// Shrink factor on the generator's last layer. Edge scores are sigmoids of
/// embedding dot products; at fan-in-scale init those dots land far in the
/// saturated tail (neighboring nodes share most of their receptive field),
/// which pins every score near one, starves the complement branch of edge
/// weight, and leaves the score network without usable slope. Scaling the
/// final embeddings down starts the scores near one half instead.
const GENERATOR_LAST_LAYER_SCALE: f64 = 0.1;

fn init_gnn(id: GroupId, arch: &Arch, rng: &mut Rng) -> ParamGroup {
    let widths = match id {
        GroupId::Generator => &arch.gen_hidden,
        _ => &arch.hidden,
    };
    let mut tensors = Vec::new();
    let mut d_in = arch.feature_dim;
    let n_layers = widths.len();
    for (i, &d_out) in widths.iter().enumerate() {
        let scale = if id == GroupId::Generator && i + 1 == n_layers {
            GENERATOR_LAST_LAYER_SCALE
        } else {
            1.0
        };
        tensors.push(ParamTensor::new(
            format!("conv{i}.w_self"),
            vec![d_in, d_out],
            scaled_init(rng, d_in, d_in * d_out, scale),
        ));
        tensors.push(ParamTensor::new(
            format!("conv{i}.w_neigh"),
            vec![d_in, d_out],
            scaled_init(rng, d_in, d_in * d_out, scale),
        ));
        tensors.push(ParamTensor::new(
            format!("conv{i}.bias"),
            vec![d_out],
            scaled_init(rng, d_in, d_out, scale),
        ));
        d_in = d_out;
    }
    ParamGroup { id, tensors }
}

fn scaled_init(rng: &mut Rng, fan_in: usize, len: usize, scale: f64) -> Vec<f64> {
    let bound = scale / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.range_f64(-bound, bound)).collect()
}

fn init_head(id: GroupId, arch: &Arch, rng: &mut Rng) -> ParamGroup {
    let d = arch.embed_dim();
    let h = arch.head_hidden;
    let q = arch.n_classes;
    let tensors = vec![
        ParamTensor::new("lin1.w", vec![d, h], uniform_init(rng, d, d * h)),
        ParamTensor::new("lin1.b", vec![h], uniform_init(rng, d, h)),
        ParamTensor::new("lin2.w", vec![h, q], uniform_init(rng, h, h * q)),
        ParamTensor::new("lin2.b", vec![q], uniform_init(rng, h, q)),
    ];
    ParamGroup { id, tensors }
}

impl ModelParams {
    /// Fan-in uniform initialization, deterministic from the seed.
    pub fn new(arch: Arch, seed: u64) -> Self {
        let mut rng = Rng::seed_from_u64(crate::rng::mix_seed(seed, 0x9a7a));
        ModelParams {
            generator: init_gnn(GroupId::Generator, &arch, &mut rng),
            encoder: init_gnn(GroupId::Encoder, &arch, &mut rng),
            causal_head: init_head(GroupId::CausalHead, &arch, &mut rng),
            spurious_head: init_head(GroupId::SpuriousHead, &arch, &mut rng),
            arch,
            seed,
        }
    }

    pub fn group(&self, id: GroupId) -> &ParamGroup {
        match id {
            GroupId::Generator => &self.generator,
            GroupId::Encoder => &self.encoder,
            GroupId::CausalHead => &self.causal_head,
            GroupId::SpuriousHead => &self.spurious_head,
        }
    }

    pub fn group_mut(&mut self, id: GroupId) -> &mut ParamGroup {
        match id {
            GroupId::Generator => &mut self.generator,
            GroupId::Encoder => &mut self.encoder,
            GroupId::CausalHead => &mut self.causal_head,
            GroupId::SpuriousHead => &mut self.spurious_head,
        }
    }

    /// Zeroes every gradient accumulator; call exactly once per step.
    pub fn zero_all_grads(&mut self) {
        for id in GroupId::ALL {
            self.group_mut(id).zero_grads();
        }
    }
}

// ── tape binding ─────────────────────────────────────────────────────

/// Tape ids of one convolution layer's tensors.
#[derive(Debug, Clone, Copy)]
pub struct BoundConv {
    pub w_self: TensorId,
    pub w_neigh: TensorId,
    pub bias: TensorId,
}

/// A GNN parameter group staged on a tape.
#[derive(Debug, Clone)]
pub struct BoundGnn {
    pub layers: Vec<BoundConv>,
    /// Tape id per group tensor, in group order.
    pub ids: Vec<TensorId>,
}

/// A classifier head staged on a tape.
#[derive(Debug, Clone)]
pub struct BoundHead {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
    pub ids: Vec<TensorId>,
}

pub fn bind_gnn(tape: &mut Tape, group: &ParamGroup) -> BoundGnn {
    let ids: Vec<TensorId> = group
        .tensors
        .iter()
        .map(|t| tape.leaf(Tensor::new(t.shape.clone(), t.values.clone()).expect("param shape")))
        .collect();
    let layers = ids
        .chunks_exact(3)
        .map(|c| BoundConv {
            w_self: c[0],
            w_neigh: c[1],
            bias: c[2],
        })
        .collect();
    BoundGnn { layers, ids }
}

pub fn bind_head(tape: &mut Tape, group: &ParamGroup) -> BoundHead {
    let ids: Vec<TensorId> = group
        .tensors
        .iter()
        .map(|t| tape.leaf(Tensor::new(t.shape.clone(), t.values.clone()).expect("param shape")))
        .collect();
    BoundHead {
        w1: ids[0],
        b1: ids[1],
        w2: ids[2],
        b2: ids[3],
        ids,
    }
}

/// Adds the adjoints of a bound group's tensors into its gradient
/// accumulators. Calling twice without zeroing doubles the gradients.
pub fn accumulate_grads(group: &mut ParamGroup, ids: &[TensorId], grads: &Gradients) {
    debug_assert_eq!(group.tensors.len(), ids.len());
    for (t, &id) in group.tensors.iter_mut().zip(ids) {
        if let Some(g) = grads.get(id) {
            for (acc, &gv) in t.grad.iter_mut().zip(g) {
                *acc += gv;
            }
        }
    }
}

// ── forward building blocks ──────────────────────────────────────────

/// Pre-activation convolution: `W_self x_i + W_neigh (sum w_ji x_j) + bias`.
#[allow(clippy::too_many_arguments)]
pub fn graph_conv_preact(
    tape: &mut Tape,
    x: TensorId,
    src: &[usize],
    dst: &[usize],
    weights: TensorId,
    layer: &BoundConv,
    num_nodes: usize,
) -> Result<TensorId, AdError> {
    let self_term = tape.matmul(x, layer.w_self)?;
    let msgs = tape.row_gather(x, src)?;
    let scaled = tape.mul(msgs, weights)?;
    let agg = tape.scatter_add(scaled, dst, num_nodes)?;
    let neigh = tape.matmul(agg, layer.w_neigh)?;
    let summed = tape.add(self_term, neigh)?;
    tape.add(summed, layer.bias)
}

/// One edge-weighted convolution over a directed edge list. `weights` is an
/// [E, 1] tensor aligned with `src`/`dst`; isolated nodes still update
/// through the self term.
pub fn graph_conv(
    tape: &mut Tape,
    x: TensorId,
    src: &[usize],
    dst: &[usize],
    weights: TensorId,
    layer: &BoundConv,
    num_nodes: usize,
) -> Result<TensorId, AdError> {
    let pre = graph_conv_preact(tape, x, src, dst, weights, layer, num_nodes)?;
    tape.relu(pre)
}

/// Activation of the last convolution layer. Encoders stay rectified; the
/// rationale generator ends linear so its edge scores `sigmoid(z_u . z_v)`
/// are not forced above one half (all-nonnegative embeddings would saturate
/// every score and starve the generator of gradient).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    Relu,
    Linear,
}

/// Runs all convolution layers with one shared edge-weight vector.
#[allow(clippy::too_many_arguments)]
pub fn gnn_forward(
    tape: &mut Tape,
    gnn: &BoundGnn,
    x: TensorId,
    src: &[usize],
    dst: &[usize],
    weights: TensorId,
    num_nodes: usize,
    tail: Tail,
) -> Result<TensorId, AdError> {
    let mut h = x;
    for (i, layer) in gnn.layers.iter().enumerate() {
        let last = i + 1 == gnn.layers.len();
        h = if last && tail == Tail::Linear {
            graph_conv_preact(tape, h, src, dst, weights, layer, num_nodes)?
        } else {
            graph_conv(tape, h, src, dst, weights, layer, num_nodes)?
        };
    }
    Ok(h)
}

/// Mean of each graph's node rows.
pub fn global_mean_pool(
    tape: &mut Tape,
    x: TensorId,
    graph_index: &[usize],
    n_graphs: usize,
) -> Result<TensorId, AdError> {
    tape.mean_rows_by_group(x, graph_index, n_graphs)
}

/// Two affine maps with a ReLU between; returns raw logits.
pub fn classify(tape: &mut Tape, h: TensorId, head: &BoundHead) -> Result<TensorId, AdError> {
    let a = tape.matmul(h, head.w1)?;
    let a = tape.add(a, head.b1)?;
    let a = tape.relu(a)?;
    let b = tape.matmul(a, head.w2)?;
    tape.add(b, head.b2)
}

// ── checkpoints ──────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: GroupId,
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    format: String,
    seed: u64,
    arch: Arch,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

const CHECKPOINT_FORMAT: &str = "dir-checkpoint-v1";

/// Writes `manifest.json` plus `params.bin` (little-endian f64 blobs, in
/// manifest order) into `dir`.
pub fn save_checkpoint(
    dir: &Path,
    params: &ModelParams,
    meta: &serde_json::Value,
) -> Result<(), CheckpointError> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    for id in GroupId::ALL {
        for t in &params.group(id).tensors {
            entries.push(TensorEntry {
                group: id,
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset: blob.len(),
            });
            for v in &t.values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        seed: params.seed,
        arch: params.arch.clone(),
        meta: meta.clone(),
        tensors: entries,
    };
    let mut mf = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut mf, &manifest)?;
    mf.write_all(b"\n")?;
    std::fs::File::create(dir.join("params.bin"))?.write_all(&blob)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, serde_json::Value), CheckpointError> {
    let mf = std::fs::File::open(dir.join("manifest.json"))?;
    let manifest: CheckpointManifest = serde_json::from_reader(mf)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Format(format!(
            "unsupported format {}",
            manifest.format
        )));
    }
    let mut blob = Vec::new();
    std::fs::File::open(dir.join("params.bin"))?.read_to_end(&mut blob)?;
    let mut params = ModelParams::new(manifest.arch.clone(), manifest.seed);
    for entry in &manifest.tensors {
        let group = params.group_mut(entry.group);
        let tensor = group
            .tensors
            .iter_mut()
            .find(|t| t.name == entry.name)
            .ok_or_else(|| {
                CheckpointError::Format(format!(
                    "unknown tensor {} in group {}",
                    entry.name,
                    entry.group.name()
                ))
            })?;
        if tensor.shape != entry.shape {
            return Err(CheckpointError::Format(format!(
                "tensor {} shape {:?} does not match expected {:?}",
                entry.name, entry.shape, tensor.shape
            )));
        }
        let len = tensor.values.len();
        let bytes = blob
            .get(entry.offset..entry.offset + len * 8)
            .ok_or_else(|| CheckpointError::Format("params.bin too short".into()))?;
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            tensor.values[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok((params, manifest.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdiff::{central_diff_grad, max_rel_err};

    fn ones_weights(tape: &mut Tape, e: usize) -> TensorId {
        tape.leaf(Tensor::new(vec![e, 1], vec![1.0; e]).unwrap())
    }

    fn test_layer(tape: &mut Tape, d_in: usize, d_out: usize, seed: u64) -> BoundConv {
        let mut rng = Rng::seed_from_u64(seed);
        let w_self = tape.leaf(
            Tensor::new(
                vec![d_in, d_out],
                (0..d_in * d_out).map(|_| rng.range_f64(-0.5, 0.5)).collect(),
            )
            .unwrap(),
        );
        let w_neigh = tape.leaf(
            Tensor::new(
                vec![d_in, d_out],
                (0..d_in * d_out).map(|_| rng.range_f64(-0.5, 0.5)).collect(),
            )
            .unwrap(),
        );
        let bias = tape.leaf(
            Tensor::new(vec![d_out], (0..d_out).map(|_| rng.range_f64(-0.5, 0.5)).collect())
                .unwrap(),
        );
        BoundConv {
            w_self,
            w_neigh,
            bias,
        }
    }

    #[test]
    fn isolated_node_uses_self_term_only() {
        let mut tape = Tape::new();
        let x = tape.leaf_matrix(1, 2, vec![0.3, -0.8]);
        let layer = test_layer(&mut tape, 2, 3, 1);
        let w = ones_weights(&mut tape, 0);
        let out = graph_conv(&mut tape, x, &[], &[], w, &layer, 1).unwrap();
        // reference: relu(x @ w_self + bias)
        let ws = tape.values(layer.w_self).to_vec();
        let b = tape.values(layer.bias).to_vec();
        for j in 0..3 {
            let v = 0.3 * ws[j] - 0.8 * ws[3 + j] + b[j];
            assert!((tape.values(out)[j] - v.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_edge_weights_match_no_edges() {
        let mut tape = Tape::new();
        let x = tape.leaf_matrix(3, 2, vec![0.1, 0.2, -0.4, 0.9, 1.5, -1.0]);
        let layer = test_layer(&mut tape, 2, 3, 2);
        let src = [0usize, 1, 1, 2];
        let dst = [1usize, 0, 2, 1];
        let zero_w = tape.leaf(Tensor::new(vec![4, 1], vec![0.0; 4]).unwrap());
        let with_zero = graph_conv(&mut tape, x, &src, &dst, zero_w, &layer, 3).unwrap();
        let unit_w = ones_weights(&mut tape, 0);
        let no_edges = graph_conv(&mut tape, x, &[], &[], unit_w, &layer, 3).unwrap();
        assert_eq!(tape.values(with_zero), tape.values(no_edges));
    }

    #[test]
    fn conv_gradient_matches_finite_differences() {
        // random 10-node graph, gradient w.r.t. w_neigh
        let mut rng = Rng::seed_from_u64(77);
        let n = 10;
        let d = 3;
        let x0: Vec<f64> = (0..n * d).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u != v && rng.coin(0.2) {
                    src.push(u);
                    dst.push(v);
                }
            }
        }
        let wvals: Vec<f64> = (0..src.len()).map(|_| rng.next_f64()).collect();
        let wn0: Vec<f64> = (0..d * d).map(|_| rng.range_f64(-0.7, 0.7)).collect();
        let forward = |wn: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let x = tape.leaf_matrix(n, d, x0.clone());
            let w_self = tape.leaf_matrix(d, d, vec![0.2; d * d]);
            let w_neigh = tape.leaf_matrix(d, d, wn.to_vec());
            let bias = tape.leaf(Tensor::new(vec![d], vec![0.05; d]).unwrap());
            let w = tape.leaf(Tensor::new(vec![src.len(), 1], wvals.clone()).unwrap());
            let layer = BoundConv {
                w_self,
                w_neigh,
                bias,
            };
            let out = graph_conv(&mut tape, x, &src, &dst, w, &layer, n).unwrap();
            let loss = tape.mean_all(out).unwrap();
            tape.scalar_value(loss)
        };
        // analytic
        let mut tape = Tape::new();
        let x = tape.leaf_matrix(n, d, x0.clone());
        let w_self = tape.leaf_matrix(d, d, vec![0.2; d * d]);
        let w_neigh = tape.leaf_matrix(d, d, wn0.clone());
        let bias = tape.leaf(Tensor::new(vec![d], vec![0.05; d]).unwrap());
        let w = tape.leaf(Tensor::new(vec![src.len(), 1], wvals.clone()).unwrap());
        let layer = BoundConv {
            w_self,
            w_neigh,
            bias,
        };
        let out = graph_conv(&mut tape, x, &src, &dst, w, &layer, n).unwrap();
        let loss = tape.mean_all(out).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get(w_neigh).unwrap();
        let numeric = central_diff_grad(forward, &wn0, 1e-5);
        assert!(max_rel_err(analytic, &numeric) < 1e-4);
    }

    #[test]
    fn pooling_of_identical_rows_returns_the_row() {
        let mut tape = Tape::new();
        let x = tape.leaf_matrix(3, 2, vec![0.7, -0.2, 0.7, -0.2, 0.7, -0.2]);
        let p = global_mean_pool(&mut tape, x, &[0, 0, 0], 1).unwrap();
        for (got, want) in tape.values(p).iter().zip([0.7, -0.2]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn pooling_two_nodes_averages() {
        let mut tape = Tape::new();
        let x = tape.leaf_matrix(2, 2, vec![0.0, 2.0, 2.0, 0.0]);
        let p = global_mean_pool(&mut tape, x, &[0, 0], 1).unwrap();
        assert_eq!(tape.values(p), &[1.0, 1.0]);
    }

    #[test]
    fn pooling_commutes_with_node_permutation() {
        let rows = [0.31, 2.2, -5.0, 0.125, 9.9, -0.7];
        let mut tape = Tape::new();
        let x = tape.leaf_matrix(3, 2, rows.to_vec());
        let p1 = global_mean_pool(&mut tape, x, &[0, 0, 0], 1).unwrap();
        let permuted = [9.9, -0.7, 0.31, 2.2, -5.0, 0.125];
        let y = tape.leaf_matrix(3, 2, permuted.to_vec());
        let p2 = global_mean_pool(&mut tape, y, &[0, 0, 0], 1).unwrap();
        let b1: Vec<u64> = tape.values(p1).iter().map(|v| v.to_bits()).collect();
        let b2: Vec<u64> = tape.values(p2).iter().map(|v| v.to_bits()).collect();
        assert_eq!(b1, b2);
    }

    #[test]
    fn conv_is_bitwise_permutation_equivariant() {
        // path graph 0-1-2-3 with asymmetric weights, relabeled by pi
        let n = 4;
        let d = 2;
        let x0 = vec![1.5, -0.3, 0.2, 0.9, -1.1, 0.0, 0.4, 2.2];
        let und = [(0usize, 1usize), (1, 2), (2, 3)];
        let wv = [0.9, 0.4, 0.7];
        let pi = [2usize, 0, 3, 1];
        let run = |x: Vec<f64>, und: &[(usize, usize)], wv: &[f64]| {
            let mut tape = Tape::new();
            let xid = tape.leaf_matrix(n, d, x);
            let layer = test_layer(&mut tape, d, d, 9);
            let mut src = Vec::new();
            let mut dst = Vec::new();
            let mut w = Vec::new();
            for (&(u, v), &wt) in und.iter().zip(wv) {
                src.extend([u, v]);
                dst.extend([v, u]);
                w.extend([wt, wt]);
            }
            let wid = tape.leaf(Tensor::new(vec![w.len(), 1], w).unwrap());
            let out = graph_conv(&mut tape, xid, &src, &dst, wid, &layer, n).unwrap();
            let pooled = global_mean_pool(&mut tape, out, &[0; 4], 1).unwrap();
            (tape.values(out).to_vec(), tape.values(pooled).to_vec())
        };
        let (out_a, pool_a) = run(x0.clone(), &und, &wv);
        let mut x_perm = vec![0.0; n * d];
        for i in 0..n {
            x_perm[pi[i] * d..(pi[i] + 1) * d].copy_from_slice(&x0[i * d..(i + 1) * d]);
        }
        let und_perm: Vec<(usize, usize)> = und.iter().map(|&(u, v)| (pi[u], pi[v])).collect();
        let (out_b, pool_b) = run(x_perm, &und_perm, &wv);
        for i in 0..n {
            for c in 0..d {
                assert_eq!(
                    out_a[i * d + c].to_bits(),
                    out_b[pi[i] * d + c].to_bits(),
                    "node {i} col {c}"
                );
            }
        }
        let pa: Vec<u64> = pool_a.iter().map(|v| v.to_bits()).collect();
        let pb: Vec<u64> = pool_b.iter().map(|v| v.to_bits()).collect();
        assert_eq!(pa, pb);
    }

    #[test]
    fn zeroed_head_yields_zero_logits() {
        let mut tape = Tape::new();
        let h = tape.leaf_matrix(2, 3, vec![0.5; 6]);
        let head = BoundHead {
            w1: tape.leaf_matrix(3, 4, vec![0.0; 12]),
            b1: tape.leaf(Tensor::new(vec![4], vec![0.0; 4]).unwrap()),
            w2: tape.leaf_matrix(4, 2, vec![0.0; 8]),
            b2: tape.leaf(Tensor::new(vec![2], vec![0.0; 2]).unwrap()),
            ids: vec![],
        };
        let logits = classify(&mut tape, h, &head).unwrap();
        assert_eq!(tape.values(logits), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_input_passes_bias_path() {
        let mut tape = Tape::new();
        let h = tape.leaf_matrix(1, 2, vec![0.0, 0.0]);
        let head = BoundHead {
            w1: tape.leaf_matrix(2, 2, vec![5.0; 4]),
            b1: tape.leaf(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()),
            w2: tape.leaf_matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]),
            b2: tape.leaf(Tensor::new(vec![2], vec![0.25, 0.75]).unwrap()),
            ids: vec![],
        };
        let logits = classify(&mut tape, h, &head).unwrap();
        // hidden = relu([1, -1]) = [1, 0]; logits = [1, 0] @ I + [0.25, 0.75]
        assert_eq!(tape.values(logits), &[1.25, 0.75]);
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from_u64(55);
        let h0: Vec<f64> = (0..6).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let w1_0: Vec<f64> = (0..12).map(|_| rng.range_f64(-0.6, 0.6)).collect();
        let w2_0: Vec<f64> = (0..8).map(|_| rng.range_f64(-0.6, 0.6)).collect();
        let forward = |w1: &[f64], w2: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let h = tape.leaf_matrix(2, 3, h0.clone());
            let head = BoundHead {
                w1: tape.leaf_matrix(3, 4, w1.to_vec()),
                b1: tape.leaf(Tensor::new(vec![4], vec![0.1; 4]).unwrap()),
                w2: tape.leaf_matrix(4, 2, w2.to_vec()),
                b2: tape.leaf(Tensor::new(vec![2], vec![-0.2, 0.3]).unwrap()),
                ids: vec![],
            };
            let logits = classify(&mut tape, h, &head).unwrap();
            let ce = tape.softmax_cross_entropy(logits, &[0, 1]).unwrap();
            let loss = tape.mean_all(ce).unwrap();
            tape.scalar_value(loss)
        };
        let mut tape = Tape::new();
        let h = tape.leaf_matrix(2, 3, h0.clone());
        let head = BoundHead {
            w1: tape.leaf_matrix(3, 4, w1_0.clone()),
            b1: tape.leaf(Tensor::new(vec![4], vec![0.1; 4]).unwrap()),
            w2: tape.leaf_matrix(4, 2, w2_0.clone()),
            b2: tape.leaf(Tensor::new(vec![2], vec![-0.2, 0.3]).unwrap()),
            ids: vec![],
        };
        let logits = classify(&mut tape, h, &head).unwrap();
        let ce = tape.softmax_cross_entropy(logits, &[0, 1]).unwrap();
        let loss = tape.mean_all(ce).unwrap();
        let grads = tape.backward(loss).unwrap();
        let num1 = central_diff_grad(|w| forward(w, &w2_0), &w1_0, 1e-5);
        let num2 = central_diff_grad(|w| forward(&w1_0, w), &w2_0, 1e-5);
        assert!(max_rel_err(grads.get(head.w1).unwrap(), &num1) < 1e-4);
        assert!(max_rel_err(grads.get(head.w2).unwrap(), &num2) < 1e-4);
    }

    #[test]
    fn grads_accumulate_across_backward_calls() {
        let mut params = ModelParams::new(Arch::default(), 3);
        let mut tape = Tape::new();
        let head = bind_head(&mut tape, &params.causal_head);
        let h = tape.leaf_matrix(1, 32, vec![0.3; 32]);
        let logits = classify(&mut tape, h, &head).unwrap();
        let ce = tape.softmax_cross_entropy(logits, &[2]).unwrap();
        let loss = tape.mean_all(ce).unwrap();
        let grads = tape.backward(loss).unwrap();
        accumulate_grads(&mut params.causal_head, &head.ids, &grads);
        let once: Vec<f64> = params.causal_head.tensors[0].grad.clone();
        let grads2 = tape.backward(loss).unwrap();
        accumulate_grads(&mut params.causal_head, &head.ids, &grads2);
        for (twice, one) in params.causal_head.tensors[0].grad.iter().zip(&once) {
            assert_eq!(*twice, 2.0 * one);
        }
    }

    #[test]
    fn untouched_group_keeps_zero_grads() {
        let mut params = ModelParams::new(Arch::default(), 4);
        params.zero_all_grads();
        let mut tape = Tape::new();
        let head = bind_head(&mut tape, &params.causal_head);
        let spurious = bind_head(&mut tape, &params.spurious_head);
        let h = tape.leaf_matrix(1, 32, vec![0.1; 32]);
        let logits = classify(&mut tape, h, &head).unwrap();
        let ce = tape.softmax_cross_entropy(logits, &[0]).unwrap();
        let loss = tape.mean_all(ce).unwrap();
        let grads = tape.backward(loss).unwrap();
        accumulate_grads(&mut params.causal_head, &head.ids, &grads);
        accumulate_grads(&mut params.spurious_head, &spurious.ids, &grads);
        assert!(params.spurious_head.grads_are_exactly_zero());
        assert!(!params.causal_head.grads_are_exactly_zero());
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let params = ModelParams::new(Arch::default(), 99);
        let dir = std::env::temp_dir().join("dir_core_ckpt_test");
        let meta = serde_json::json!({"mode": "dir", "r": 0.25});
        save_checkpoint(&dir, &params, &meta).unwrap();
        let (loaded, meta2) = load_checkpoint(&dir).unwrap();
        assert_eq!(meta, meta2);
        for id in GroupId::ALL {
            let a = params.group(id);
            let b = loaded.group(id);
            for (ta, tb) in a.tensors.iter().zip(&b.tensors) {
                assert_eq!(ta.name, tb.name);
                let ba: Vec<u64> = ta.values.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = tb.values.iter().map(|v| v.to_bits()).collect();
                assert_eq!(ba, bb);
            }
        }
    }

    #[test]
    fn three_layer_encoder_finite_on_generated_graphs() {
        let cfg = crate::synth::GenConfig {
            n_train: 20,
            n_val: 5,
            n_test: 5,
            seed: 1,
            ..Default::default()
        };
        let ds = crate::synth::generate_dataset(&cfg);
        let refs: Vec<&crate::graph::Graph> = ds.graphs.iter().collect();
        let batch = crate::graph::make_batch(&refs).unwrap();
        let params = ModelParams::new(Arch::default(), 0);
        let mut tape = Tape::new();
        let gnn = bind_gnn(&mut tape, &params.encoder);
        let x = tape.leaf_matrix(batch.num_nodes, batch.feature_dim, batch.features.clone());
        let w = ones_weights(&mut tape, batch.dir_src.len());
        let h = gnn_forward(
            &mut tape,
            &gnn,
            x,
            &batch.dir_src,
            &batch.dir_dst,
            w,
            batch.num_nodes,
            Tail::Relu,
        )
        .unwrap();
        assert!(tape.values(h).iter().all(|v| v.is_finite()));
        assert_eq!(tape.shape(h), &[batch.num_nodes, 32]);
    }
}
