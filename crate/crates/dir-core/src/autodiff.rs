//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records one forward pass as a topologically ordered list of
//! nodes (define-by-run); [`Tape::backward`] replays it in reverse and returns
//! the adjoint of every reachable node. The op set is exactly what the
//! training pipeline needs, including [`Tape::detach`], which passes values
//! through unchanged while blocking all gradient flow — the primitive that
//! implements the loss routing between the two classifier branches.
//!
//! Single-threaded by construction: one tape per training step, rebuilt every
//! step. Independent tapes may run on separate threads without shared state.

use thiserror::Error;

use crate::kernels;

/// Index of a node on its tape.
pub type TensorId = usize;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {shape:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for {len} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("mean-rows-by-group: group {group} is empty or ids not non-decreasing")]
    BadGrouping { group: usize },
    #[error("backward: loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("tensor: shape {shape:?} does not match {len} values")]
    ShapeLenMismatch { shape: Vec<usize>, len: usize },
}

/// A dense row-major tensor value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, AdError> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(AdError::ShapeLenMismatch {
                shape,
                len: values.len(),
            });
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; len],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
        }
    }

    /// Rows/cols of a rank-2 tensor; a rank-1 tensor counts as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("dims2 on rank-{} tensor", self.shape.len()),
        }
    }
}

/// How the right operand broadcasts against the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// rhs is one row, repeated down the rows of lhs
    Row,
    /// rhs is one column, repeated across the columns of lhs
    Col,
}

/// Recorded operation: primitive tag plus parent ids and static attributes.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Detach(TensorId),
    Matmul(TensorId, TensorId),
    Add(TensorId, TensorId, Broadcast),
    Mul(TensorId, TensorId, Broadcast),
    ScalarMul(TensorId, f64),
    Sigmoid(TensorId),
    Relu(TensorId),
    RowGather(TensorId, Vec<usize>),
    ScatterAdd(TensorId, Vec<usize>),
    MeanAll(TensorId),
    MeanRowsByGroup(TensorId, Vec<usize>, Vec<usize>),
    VarianceOfVector(TensorId),
    ConcatRows(Vec<TensorId>),
    SoftmaxCrossEntropy(TensorId, Vec<usize>),
}

/// Primitive tags, used for auditing and randomized gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Detach,
    Matmul,
    Add,
    ElementwiseMul,
    ScalarMul,
    Sigmoid,
    Relu,
    RowGather,
    ScatterAddByIndex,
    MeanAll,
    MeanRowsByGroup,
    VarianceOfVector,
    ConcatRows,
    SoftmaxCrossEntropy,
}

impl OpKind {
    /// Every differentiable primitive (leaf excluded).
    pub const PRIMITIVES: [OpKind; 14] = [
        OpKind::Matmul,
        OpKind::Add,
        OpKind::ElementwiseMul,
        OpKind::ScalarMul,
        OpKind::Sigmoid,
        OpKind::Relu,
        OpKind::RowGather,
        OpKind::ScatterAddByIndex,
        OpKind::MeanAll,
        OpKind::MeanRowsByGroup,
        OpKind::VarianceOfVector,
        OpKind::ConcatRows,
        OpKind::SoftmaxCrossEntropy,
        OpKind::Detach,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Detach => "detach",
            OpKind::Matmul => "matmul",
            OpKind::Add => "add",
            OpKind::ElementwiseMul => "elementwise-mul",
            OpKind::ScalarMul => "scalar-mul",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Relu => "relu",
            OpKind::RowGather => "row-gather",
            OpKind::ScatterAddByIndex => "scatter-add-by-index",
            OpKind::MeanAll => "mean-all",
            OpKind::MeanRowsByGroup => "mean-rows-by-group",
            OpKind::VarianceOfVector => "variance-of-vector",
            OpKind::ConcatRows => "concat-rows",
            OpKind::SoftmaxCrossEntropy => "softmax-cross-entropy",
        }
    }
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    values: Vec<f64>,
    /// Per-op cache needed by the backward rule (softmax probabilities).
    saved: Vec<f64>,
}

impl Node {
    fn kind(&self) -> OpKind {
        match self.op {
            Op::Leaf => OpKind::Leaf,
            Op::Detach(_) => OpKind::Detach,
            Op::Matmul(..) => OpKind::Matmul,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::ElementwiseMul,
            Op::ScalarMul(..) => OpKind::ScalarMul,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Relu(_) => OpKind::Relu,
            Op::RowGather(..) => OpKind::RowGather,
            Op::ScatterAdd(..) => OpKind::ScatterAddByIndex,
            Op::MeanAll(_) => OpKind::MeanAll,
            Op::MeanRowsByGroup(..) => OpKind::MeanRowsByGroup,
            Op::VarianceOfVector(_) => OpKind::VarianceOfVector,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::SoftmaxCrossEntropy(..) => OpKind::SoftmaxCrossEntropy,
        }
    }
}

/// Adjoints produced by one backward pass. Nodes the loss never reached have
/// no entry and read back as zero.
pub struct Gradients {
    adj: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: TensorId) -> Option<&[f64]> {
        self.adj.get(id).and_then(|a| a.as_deref())
    }

    /// True when the node received no gradient, or only exact zeros.
    pub fn is_exactly_zero(&self, id: TensorId) -> bool {
        match self.get(id) {
            None => true,
            Some(g) => g.iter().all(|&v| v == 0.0),
        }
    }
}

/// Recorded forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id].values
    }

    pub fn kind(&self, id: TensorId) -> OpKind {
        self.nodes[id].kind()
    }

    /// Parent node ids; always strictly smaller than `id`.
    pub fn parents(&self, id: TensorId) -> Vec<TensorId> {
        match &self.nodes[id].op {
            Op::Leaf => vec![],
            Op::Detach(a)
            | Op::ScalarMul(a, _)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::RowGather(a, _)
            | Op::ScatterAdd(a, _)
            | Op::MeanAll(a)
            | Op::MeanRowsByGroup(a, _, _)
            | Op::VarianceOfVector(a)
            | Op::SoftmaxCrossEntropy(a, _) => vec![*a],
            Op::Matmul(a, b) | Op::Add(a, b, _) | Op::Mul(a, b, _) => vec![*a, *b],
            Op::ConcatRows(parts) => parts.clone(),
        }
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id].values.len(), 1);
        self.nodes[id].values[0]
    }

    pub fn tensor(&self, id: TensorId) -> Tensor {
        Tensor {
            shape: self.nodes[id].shape.clone(),
            values: self.nodes[id].values.clone(),
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<f64>, saved: Vec<f64>) -> TensorId {
        self.nodes.push(Node {
            op,
            shape,
            values,
            saved,
        });
        self.nodes.len() - 1
    }

    fn check_finite(&self, id: TensorId, op: &'static str) -> Result<TensorId, AdError> {
        if self.nodes[id].values.iter().all(|v| v.is_finite()) {
            Ok(id)
        } else {
            Err(AdError::NonFinite { op })
        }
    }

    fn dims2(&self, id: TensorId) -> (usize, usize) {
        match self.nodes[id].shape.as_slice() {
            [n] => (1, *n),
            [m, n] => (*m, *n),
            s => panic!("rank-{} tensor where matrix expected", s.len()),
        }
    }

    // ── node constructors ────────────────────────────────────────────

    /// Source node holding externally supplied values (inputs, parameters,
    /// constants). Leaves never fail the finiteness check so callers can
    /// stage arbitrary data; downstream ops enforce it.
    pub fn leaf(&mut self, t: Tensor) -> TensorId {
        self.push(Op::Leaf, t.shape, t.values, Vec::new())
    }

    pub fn leaf_matrix(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> TensorId {
        debug_assert_eq!(values.len(), rows * cols);
        self.push(Op::Leaf, vec![rows, cols], values, Vec::new())
    }

    /// Identity on values; blocks gradient flow to everything upstream.
    pub fn detach(&mut self, x: TensorId) -> TensorId {
        let shape = self.nodes[x].shape.clone();
        let values = self.nodes[x].values.clone();
        self.push(Op::Detach(x), shape, values, Vec::new())
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AdError> {
        let (m, ka) = self.dims2(a);
        let (kb, n) = self.dims2(b);
        if ka != kb {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lhs: self.nodes[a].shape.clone(),
                rhs: self.nodes[b].shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(&self.nodes[a].values, &self.nodes[b].values, m, ka, n, &mut out);
        let id = self.push(Op::Matmul(a, b), vec![m, n], out, Vec::new());
        self.check_finite(id, "matmul")
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AdError> {
        let bc = self.broadcast_kind(a, b, "add", false)?;
        let (m, n) = self.dims2(a);
        let la = &self.nodes[a].values;
        let lb = &self.nodes[b].values;
        let values = match bc {
            Broadcast::Same => la.iter().zip(lb).map(|(x, y)| x + y).collect(),
            Broadcast::Row => {
                let mut out = Vec::with_capacity(m * n);
                for i in 0..m {
                    for j in 0..n {
                        out.push(la[i * n + j] + lb[j]);
                    }
                }
                out
            }
            Broadcast::Col => {
                let mut out = Vec::with_capacity(m * n);
                for i in 0..m {
                    for j in 0..n {
                        out.push(la[i * n + j] + lb[i]);
                    }
                }
                out
            }
        };
        let shape = self.nodes[a].shape.clone();
        let id = self.push(Op::Add(a, b, bc), shape, values, Vec::new());
        self.check_finite(id, "add")
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AdError> {
        let bc = self.broadcast_kind(a, b, "elementwise-mul", true)?;
        let (m, n) = self.dims2(a);
        let la = &self.nodes[a].values;
        let lb = &self.nodes[b].values;
        let values = match bc {
            Broadcast::Same => la.iter().zip(lb).map(|(x, y)| x * y).collect(),
            Broadcast::Row => {
                let mut out = Vec::with_capacity(m * n);
                for i in 0..m {
                    for j in 0..n {
                        out.push(la[i * n + j] * lb[j]);
                    }
                }
                out
            }
            Broadcast::Col => {
                let mut out = Vec::with_capacity(m * n);
                for i in 0..m {
                    for j in 0..n {
                        out.push(la[i * n + j] * lb[i]);
                    }
                }
                out
            }
        };
        let shape = self.nodes[a].shape.clone();
        let id = self.push(Op::Mul(a, b, bc), shape, values, Vec::new());
        self.check_finite(id, "elementwise-mul")
    }

    fn broadcast_kind(
        &self,
        a: TensorId,
        b: TensorId,
        op: &'static str,
        allow_col: bool,
    ) -> Result<Broadcast, AdError> {
        let sa = &self.nodes[a].shape;
        let sb = &self.nodes[b].shape;
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        let (m, n) = self.dims2(a);
        match sb.as_slice() {
            [w] if *w == n => Ok(Broadcast::Row),
            [1, w] if *w == n => Ok(Broadcast::Row),
            [h, 1] if allow_col && *h == m => Ok(Broadcast::Col),
            _ => Err(AdError::ShapeMismatch {
                op,
                lhs: sa.clone(),
                rhs: sb.clone(),
            }),
        }
    }

    pub fn scalar_mul(&mut self, a: TensorId, c: f64) -> Result<TensorId, AdError> {
        let values = self.nodes[a].values.iter().map(|v| v * c).collect();
        let shape = self.nodes[a].shape.clone();
        let id = self.push(Op::ScalarMul(a, c), shape, values, Vec::new());
        self.check_finite(id, "scalar-mul")
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId, AdError> {
        let values = self.nodes[a]
            .values
            .iter()
            .map(|&v| kernels::sigmoid(v))
            .collect();
        let shape = self.nodes[a].shape.clone();
        let id = self.push(Op::Sigmoid(a), shape, values, Vec::new());
        self.check_finite(id, "sigmoid")
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId, AdError> {
        let values = self.nodes[a].values.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.nodes[a].shape.clone();
        let id = self.push(Op::Relu(a), shape, values, Vec::new());
        self.check_finite(id, "relu")
    }

    /// out[k, :] = a[idx[k], :]
    pub fn row_gather(&mut self, a: TensorId, idx: &[usize]) -> Result<TensorId, AdError> {
        let (m, n) = self.dims2(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(AdError::IndexOutOfRange {
                op: "row-gather",
                index: bad,
                len: m,
            });
        }
        let src = &self.nodes[a].values;
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let id = self.push(
            Op::RowGather(a, idx.to_vec()),
            vec![idx.len(), n],
            out,
            Vec::new(),
        );
        self.check_finite(id, "row-gather")
    }

    /// out[idx[k], :] += a[k, :] into a fresh [out_rows, n] tensor.
    pub fn scatter_add(
        &mut self,
        a: TensorId,
        idx: &[usize],
        out_rows: usize,
    ) -> Result<TensorId, AdError> {
        let (m, n) = self.dims2(a);
        if idx.len() != m {
            return Err(AdError::BadShape {
                op: "scatter-add-by-index",
                expected: "one index per input row",
                shape: self.nodes[a].shape.clone(),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(AdError::IndexOutOfRange {
                op: "scatter-add-by-index",
                index: bad,
                len: out_rows,
            });
        }
        let mut out = vec![0.0; out_rows * n];
        kernels::scatter_add_rows(&self.nodes[a].values, idx, n, &mut out);
        let id = self.push(
            Op::ScatterAdd(a, idx.to_vec()),
            vec![out_rows, n],
            out,
            Vec::new(),
        );
        self.check_finite(id, "scatter-add-by-index")
    }

    /// Scalar mean of all entries.
    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId, AdError> {
        let vals = &self.nodes[a].values;
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let id = self.push(Op::MeanAll(a), vec![1], vec![mean], Vec::new());
        self.check_finite(id, "mean-all")
    }

    /// Per-group mean of rows; `groups` must be non-decreasing and every
    /// group in `0..n_groups` non-empty.
    pub fn mean_rows_by_group(
        &mut self,
        a: TensorId,
        groups: &[usize],
        n_groups: usize,
    ) -> Result<TensorId, AdError> {
        let (m, n) = self.dims2(a);
        if groups.len() != m {
            return Err(AdError::BadShape {
                op: "mean-rows-by-group",
                expected: "one group id per row",
                shape: self.nodes[a].shape.clone(),
            });
        }
        let mut counts = vec![0usize; n_groups];
        let mut prev = 0usize;
        for &g in groups {
            if g >= n_groups || g < prev {
                return Err(AdError::BadGrouping { group: g });
            }
            counts[g] += 1;
            prev = g;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(AdError::BadGrouping { group: empty });
        }
        let mut out = vec![0.0; n_groups * n];
        kernels::mean_rows_by_group(&self.nodes[a].values, groups, n, n_groups, &mut out);
        let counts_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let id = self.push(
            Op::MeanRowsByGroup(a, groups.to_vec(), counts),
            vec![n_groups, n],
            out,
            counts_f,
        );
        self.check_finite(id, "mean-rows-by-group")
    }

    /// Population variance (divide by n) of a vector, as a scalar.
    pub fn variance_of_vector(&mut self, a: TensorId) -> Result<TensorId, AdError> {
        if self.nodes[a].shape.len() != 1 {
            return Err(AdError::BadShape {
                op: "variance-of-vector",
                expected: "rank-1 vector",
                shape: self.nodes[a].shape.clone(),
            });
        }
        let v = kernels::variance_pop(&self.nodes[a].values);
        let id = self.push(Op::VarianceOfVector(a), vec![1], vec![v], Vec::new());
        self.check_finite(id, "variance-of-vector")
    }

    /// Stack parts vertically. Rank-1 parts concatenate into a longer vector;
    /// rank-2 parts must share a width.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId, AdError> {
        assert!(!parts.is_empty(), "concat-rows of nothing");
        let rank1 = self.nodes[parts[0]].shape.len() == 1;
        let width = if rank1 { 1 } else { self.nodes[parts[0]].shape[1] };
        let mut values = Vec::new();
        let mut rows = 0usize;
        for &p in parts {
            let s = &self.nodes[p].shape;
            let ok = if rank1 {
                s.len() == 1
            } else {
                s.len() == 2 && s[1] == width
            };
            if !ok {
                return Err(AdError::ShapeMismatch {
                    op: "concat-rows",
                    lhs: self.nodes[parts[0]].shape.clone(),
                    rhs: s.clone(),
                });
            }
            rows += s[0];
            values.extend_from_slice(&self.nodes[p].values);
        }
        let shape = if rank1 { vec![rows] } else { vec![rows, width] };
        let id = self.push(Op::ConcatRows(parts.to_vec()), shape, values, Vec::new());
        self.check_finite(id, "concat-rows")
    }

    /// Fused log-sum-exp-stabilized softmax cross-entropy; one loss per row.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: TensorId,
        labels: &[usize],
    ) -> Result<TensorId, AdError> {
        let (m, q) = self.dims2(logits);
        if labels.len() != m {
            return Err(AdError::BadShape {
                op: "softmax-cross-entropy",
                expected: "one label per logit row",
                shape: self.nodes[logits].shape.clone(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= q) {
            return Err(AdError::IndexOutOfRange {
                op: "softmax-cross-entropy",
                index: bad,
                len: q,
            });
        }
        let mut probs = vec![0.0; m * q];
        let losses =
            kernels::softmax_cross_entropy(&self.nodes[logits].values, labels, q, &mut probs);
        let id = self.push(
            Op::SoftmaxCrossEntropy(logits, labels.to_vec()),
            vec![m],
            losses,
            probs,
        );
        self.check_finite(id, "softmax-cross-entropy")
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns the adjoint of every node
    /// the loss reaches; detached nodes stop propagation exactly.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients, AdError> {
        let lnode = &self.nodes[loss];
        if lnode.values.len() != 1 {
            return Err(AdError::NonScalarLoss {
                shape: lnode.shape.clone(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            let Some(grad) = adj[id].take() else { continue };
            self.propagate(id, &grad, &mut adj);
            adj[id] = Some(grad);
        }
        Ok(Gradients { adj })
    }

    fn propagate(&self, id: TensorId, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf | Op::Detach(_) => {}
            Op::Matmul(a, b) => {
                let (m, k) = self.dims2(*a);
                let (_, n) = self.dims2(*b);
                {
                    let da = ensure(adj, *a, m * k);
                    let mut tmp = vec![0.0; m * k];
                    kernels::matmul_nt(g, &self.nodes[*b].values, m, n, k, &mut tmp);
                    for (o, t) in da.iter_mut().zip(&tmp) {
                        *o += t;
                    }
                }
                let db = ensure(adj, *b, k * n);
                kernels::matmul_tn_acc(&self.nodes[*a].values, g, m, k, n, db);
            }
            Op::Add(a, b, bc) => {
                let (m, n) = self.dims2(*a);
                {
                    let da = ensure(adj, *a, m * n);
                    for (o, &gv) in da.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
                let db = ensure(adj, *b, self.nodes[*b].values.len());
                match bc {
                    Broadcast::Same => {
                        for (o, &gv) in db.iter_mut().zip(g) {
                            *o += gv;
                        }
                    }
                    Broadcast::Row => {
                        for i in 0..m {
                            for j in 0..n {
                                db[j] += g[i * n + j];
                            }
                        }
                    }
                    Broadcast::Col => {
                        for i in 0..m {
                            for j in 0..n {
                                db[i] += g[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::Mul(a, b, bc) => {
                let (m, n) = self.dims2(*a);
                let va = &self.nodes[*a].values;
                let vb = &self.nodes[*b].values;
                {
                    let da = ensure(adj, *a, m * n);
                    match bc {
                        Broadcast::Same => {
                            for ((o, &gv), &bv) in da.iter_mut().zip(g).zip(vb) {
                                *o += gv * bv;
                            }
                        }
                        Broadcast::Row => {
                            for i in 0..m {
                                for j in 0..n {
                                    da[i * n + j] += g[i * n + j] * vb[j];
                                }
                            }
                        }
                        Broadcast::Col => {
                            for i in 0..m {
                                for j in 0..n {
                                    da[i * n + j] += g[i * n + j] * vb[i];
                                }
                            }
                        }
                    }
                }
                let db = ensure(adj, *b, vb.len());
                match bc {
                    Broadcast::Same => {
                        for ((o, &gv), &av) in db.iter_mut().zip(g).zip(va) {
                            *o += gv * av;
                        }
                    }
                    Broadcast::Row => {
                        for i in 0..m {
                            for j in 0..n {
                                db[j] += g[i * n + j] * va[i * n + j];
                            }
                        }
                    }
                    Broadcast::Col => {
                        for i in 0..m {
                            for j in 0..n {
                                db[i] += g[i * n + j] * va[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::ScalarMul(a, c) => {
                let da = ensure(adj, *a, self.nodes[*a].values.len());
                for (o, &gv) in da.iter_mut().zip(g) {
                    *o += c * gv;
                }
            }
            Op::Sigmoid(a) => {
                let da = ensure(adj, *a, node.values.len());
                for ((o, &gv), &s) in da.iter_mut().zip(g).zip(&node.values) {
                    *o += gv * s * (1.0 - s);
                }
            }
            Op::Relu(a) => {
                let da = ensure(adj, *a, node.values.len());
                for ((o, &gv), &s) in da.iter_mut().zip(g).zip(&node.values) {
                    if s > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::RowGather(a, idx) => {
                let (_, n) = self.dims2(*a);
                let da = ensure(adj, *a, self.nodes[*a].values.len());
                for (k, &i) in idx.iter().enumerate() {
                    let grow = &g[k * n..(k + 1) * n];
                    let drow = &mut da[i * n..(i + 1) * n];
                    for (o, &gv) in drow.iter_mut().zip(grow) {
                        *o += gv;
                    }
                }
            }
            Op::ScatterAdd(a, idx) => {
                let (_, n) = self.dims2(*a);
                let da = ensure(adj, *a, self.nodes[*a].values.len());
                for (k, &i) in idx.iter().enumerate() {
                    let grow = &g[i * n..(i + 1) * n];
                    let drow = &mut da[k * n..(k + 1) * n];
                    for (o, &gv) in drow.iter_mut().zip(grow) {
                        *o += gv;
                    }
                }
            }
            Op::MeanAll(a) => {
                let len = self.nodes[*a].values.len();
                let da = ensure(adj, *a, len);
                let gv = g[0] / len as f64;
                for o in da.iter_mut() {
                    *o += gv;
                }
            }
            Op::MeanRowsByGroup(a, groups, counts) => {
                let (_, n) = self.dims2(*a);
                let da = ensure(adj, *a, self.nodes[*a].values.len());
                for (r, &grp) in groups.iter().enumerate() {
                    let scale = 1.0 / counts[grp] as f64;
                    let grow = &g[grp * n..(grp + 1) * n];
                    let drow = &mut da[r * n..(r + 1) * n];
                    for (o, &gv) in drow.iter_mut().zip(grow) {
                        *o += gv * scale;
                    }
                }
            }
            Op::VarianceOfVector(a) => {
                let xs = &self.nodes[*a].values;
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let da = ensure(adj, *a, xs.len());
                for (o, &x) in da.iter_mut().zip(xs) {
                    *o += g[0] * 2.0 * (x - mean) / n;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].values.len();
                    let dp = ensure(adj, p, len);
                    for (o, &gv) in dp.iter_mut().zip(&g[offset..offset + len]) {
                        *o += gv;
                    }
                    offset += len;
                }
            }
            Op::SoftmaxCrossEntropy(a, labels) => {
                let (m, q) = self.dims2(*a);
                let probs = &node.saved;
                let da = ensure(adj, *a, m * q);
                for r in 0..m {
                    let gr = g[r];
                    for c in 0..q {
                        let indicator = if c == labels[r] { 1.0 } else { 0.0 };
                        da[r * q + c] += gr * (probs[r * q + c] - indicator);
                    }
                }
            }
        }
    }
}

fn ensure(adj: &mut [Option<Vec<f64>>], id: TensorId, len: usize) -> &mut Vec<f64> {
    adj[id].get_or_insert_with(|| vec![0.0; len])
}
