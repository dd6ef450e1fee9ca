//! Dense f64 kernels shared by the tape operations.
//!
//! All reductions run in a fixed order so a forward pass is bit-identical
//! across runs. Reductions over sets that a node relabeling can reorder
//! (neighbor sums, per-graph pooling) additionally sort their summands by
//! value (`f64::total_cmp`) before folding, which makes convolution and
//! pooling outputs exactly permutation-equivariant at the bit level.

/// out[m,n] = a[m,k] @ b[k,n]
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// out[m,k] = a[m,n] @ b[k,n]^T  (used for dA = dOut @ B^T)
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + j] = acc;
        }
    }
}

/// out[k,n] = a[m,k]^T @ b[m,n]  (used for dB = A^T @ dOut); accumulates into out.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable per-row softmax cross-entropy. Returns per-row losses and writes the
/// softmax probabilities into `probs` (same layout as `logits`).
pub fn softmax_cross_entropy(
    logits: &[f64],
    labels: &[usize],
    classes: usize,
    probs: &mut [f64],
) -> Vec<f64> {
    debug_assert_eq!(logits.len(), labels.len() * classes);
    let mut losses = Vec::with_capacity(labels.len());
    for (r, &y) in labels.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - mx).exp();
        }
        let lse = mx + denom.ln();
        losses.push(lse - row[y]);
        let prow = &mut probs[r * classes..(r + 1) * classes];
        for (p, &v) in prow.iter_mut().zip(row) {
            *p = (v - mx).exp() / denom;
        }
    }
    losses
}

/// Entropy in nats of one probability row.
pub fn entropy(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// Population variance (divide by n).
pub fn variance_pop(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Scatter rows of `src[k,d]` into `out[n,d]` summing rows that share a
/// destination. Per destination the summands are folded in ascending
/// lexicographic value order, independent of the order indices arrive in.
/// The first summand is placed (not added to zero) so a lone row survives
/// bit-exactly.
pub fn scatter_add_rows(src: &[f64], idx: &[usize], d: usize, out: &mut [f64]) {
    debug_assert_eq!(src.len(), idx.len() * d);
    out.fill(0.0);
    // group source rows by destination
    let mut order: Vec<u32> = (0..idx.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        idx[a as usize].cmp(&idx[b as usize]).then_with(|| {
            let ra = &src[a as usize * d..(a as usize + 1) * d];
            let rb = &src[b as usize * d..(b as usize + 1) * d];
            lex_total_cmp(ra, rb)
        })
    });
    let mut i = 0;
    while i < order.len() {
        let dst = idx[order[i] as usize];
        let orow = &mut out[dst * d..(dst + 1) * d];
        orow.copy_from_slice(&src[order[i] as usize * d..(order[i] as usize + 1) * d]);
        i += 1;
        while i < order.len() && idx[order[i] as usize] == dst {
            let srow = &src[order[i] as usize * d..(order[i] as usize + 1) * d];
            for (o, &s) in orow.iter_mut().zip(srow) {
                *o += s;
            }
            i += 1;
        }
    }
}

fn lex_total_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let c = x.total_cmp(y);
        if c != std::cmp::Ordering::Equal {
            return c;
        }
    }
    std::cmp::Ordering::Equal
}

/// Mean of the rows in each contiguous group. `groups` maps each row to its
/// group id and must be non-decreasing; every group in 0..n_groups must be
/// non-empty (checked by the caller). Column sums fold in ascending value
/// order so the result is invariant to row order within a group.
pub fn mean_rows_by_group(
    x: &[f64],
    groups: &[usize],
    d: usize,
    n_groups: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(x.len(), groups.len() * d);
    debug_assert_eq!(out.len(), n_groups * d);
    let mut col: Vec<f64> = Vec::new();
    let mut start = 0;
    for g in 0..n_groups {
        let mut end = start;
        while end < groups.len() && groups[end] == g {
            end += 1;
        }
        let count = end - start;
        debug_assert!(count > 0, "empty pooling group {g}");
        for c in 0..d {
            col.clear();
            col.extend((start..end).map(|r| x[r * d + c]));
            col.sort_unstable_by(f64::total_cmp);
            let mut acc = 0.0;
            for &v in &col {
                acc += v;
            }
            out[g * d + c] = acc / count as f64;
        }
        start = end;
    }
}
