//! Spurious-Motif benchmark generator.
//!
//! Every graph is one label-carrying motif (Cycle / House / Crane) attached
//! by a single random edge to one larger base (Tree / Ladder / Wheel). The
//! label is the motif kind alone; the base only ever carries a spurious
//! signal. In the biased training mode the base kind follows
//! `P(S) = b * I(S = C) + (1 - b) / 2 * I(S != C)`, so `b` controls how
//! strongly the base predicts the label in-distribution. Validation and test
//! splits attach bases independently; the test split additionally scales the
//! bases up to magnify the distribution shift.
//!
//! Motif-internal edges are flagged as the oracle rationale; the attachment
//! edge is not part of it.

use crate::graph::{Dataset, Graph, Split};
use crate::rng::{mix_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotifKind {
    Cycle = 0,
    House = 1,
    Crane = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    Tree = 0,
    Ladder = 1,
    Wheel = 2,
}

impl MotifKind {
    pub const ALL: [MotifKind; 3] = [MotifKind::Cycle, MotifKind::House, MotifKind::Crane];

    pub fn from_index(i: u64) -> MotifKind {
        Self::ALL[i as usize]
    }
}

impl BaseKind {
    pub const ALL: [BaseKind; 3] = [BaseKind::Tree, BaseKind::Ladder, BaseKind::Wheel];

    pub fn from_index(i: u64) -> BaseKind {
        Self::ALL[i as usize]
    }
}

/// How the motif kind and base kind depend on each other in the train split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DependencyMode {
    /// Motif uniform; base biased towards the matching kind with weight `b`.
    Biased,
    /// Motif and base drawn independently and uniformly.
    Independent,
    /// A latent confounder drives both kinds in opposite directions.
    LatentConfounder,
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    /// Bias `b` of the biased mode, in [0, 1].
    pub bias: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Target base node count before scaling.
    pub base_size: usize,
    /// Multiplier on base sizes in the test split; >= 1.
    pub test_base_scale: f64,
    pub feature_dim: usize,
    pub mode: DependencyMode,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            bias: 0.9,
            n_train: 3000,
            n_val: 1000,
            n_test: 2000,
            base_size: 20,
            test_base_scale: 3.0,
            feature_dim: 4,
            mode: DependencyMode::Biased,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.bias) {
            return Err(format!("bias {} outside [0, 1]", self.bias));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err("split counts must be positive".into());
        }
        if self.test_base_scale < 1.0 {
            return Err(format!("test base scale {} below 1", self.test_base_scale));
        }
        if self.base_size < 7 {
            return Err(format!("base size {} too small", self.base_size));
        }
        if self.feature_dim == 0 {
            return Err("feature dim must be positive".into());
        }
        Ok(())
    }
}

/// Canonical motif structures: node count and undirected edge list.
///
/// Cycle: 6-ring. House: 4-cycle 0-1-2-3 with a roof node 4 joined to 0
/// and 1. Crane: triangle 0-1-2 with the pendant path 2-3-4 and a pendant
/// node 5 on node 0. The three are pairwise non-isomorphic with equal or
/// near-equal edge counts, so the label cannot be read off the edge count.
pub fn build_motif(kind: MotifKind) -> (usize, Vec<(u32, u32)>) {
    match kind {
        MotifKind::Cycle => (6, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)]),
        MotifKind::House => (5, vec![(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4)]),
        MotifKind::Crane => (6, vec![(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (0, 5)]),
    }
}

/// Draws the base kind given the motif kind under bias `b`:
/// the matching kind with probability `b`, each other kind with `(1-b)/2`.
pub fn sample_base_kind(motif: MotifKind, b: f64, rng: &mut Rng) -> BaseKind {
    let u = rng.next_f64();
    let c = motif as u64;
    if u < b {
        return BaseKind::from_index(c);
    }
    let others: Vec<u64> = (0..3).filter(|&k| k != c).collect();
    if u < b + (1.0 - b) / 2.0 {
        BaseKind::from_index(others[0])
    } else {
        BaseKind::from_index(others[1])
    }
}

/// Two-trial binomial draw, support {0, 1, 2}.
fn binomial2(p: f64, rng: &mut Rng) -> u64 {
    let a = rng.coin(p) as u64;
    let b = rng.coin(p) as u64;
    a + b
}

/// Latent-confounder pair for a fixed confounder value `e`:
/// `S ~ B(2, e)`, `C ~ B(2, 1 - e)`.
pub fn latent_pair_with(e: f64, rng: &mut Rng) -> (MotifKind, BaseKind) {
    let s = binomial2(e, rng);
    let c = binomial2(1.0 - e, rng);
    (MotifKind::from_index(c), BaseKind::from_index(s))
}

/// Draws the confounder uniformly, then both kinds from it.
pub fn sample_latent_pair(rng: &mut Rng) -> (MotifKind, BaseKind) {
    let e = rng.next_f64();
    latent_pair_with(e, rng)
}

/// One (motif, base) kind pair under the given dependency mode.
pub fn sample_kinds(mode: DependencyMode, bias: f64, rng: &mut Rng) -> (MotifKind, BaseKind) {
    match mode {
        DependencyMode::Biased => {
            let motif = MotifKind::from_index(rng.below(3));
            let base = sample_base_kind(motif, bias, rng);
            (motif, base)
        }
        DependencyMode::Independent => (
            MotifKind::from_index(rng.below(3)),
            BaseKind::from_index(rng.below(3)),
        ),
        DependencyMode::LatentConfounder => sample_latent_pair(rng),
    }
}

/// Base structures grown to roughly `target` nodes.
///
/// Tree: random binary tree with exactly `target` nodes. Ladder: two rails of
/// length L = round(target / 2) joined by rungs (2L nodes, 3L - 2 edges).
/// Wheel: hub joined to an (target - 1)-ring (2(target - 1) edges).
pub fn build_base(kind: BaseKind, target: usize, rng: &mut Rng) -> (usize, Vec<(u32, u32)>) {
    match kind {
        BaseKind::Tree => {
            let n = target.max(2);
            let mut edges = Vec::with_capacity(n - 1);
            let mut children = vec![0u8; n];
            let mut candidates: Vec<u32> = vec![0];
            for i in 1..n as u32 {
                let slot = rng.below(candidates.len() as u64) as usize;
                let parent = candidates[slot];
                children[parent as usize] += 1;
                if children[parent as usize] == 2 {
                    candidates.swap_remove(slot);
                }
                edges.push((parent, i));
                candidates.push(i);
            }
            (n, edges)
        }
        BaseKind::Ladder => {
            let rail = ((target as f64) / 2.0).round().max(2.0) as u32;
            let mut edges = Vec::with_capacity(3 * rail as usize - 2);
            for i in 0..rail - 1 {
                edges.push((i, i + 1));
                edges.push((rail + i, rail + i + 1));
            }
            for i in 0..rail {
                edges.push((i, rail + i));
            }
            (2 * rail as usize, edges)
        }
        BaseKind::Wheel => {
            let ring = (target.max(4) - 1) as u32;
            let mut edges = Vec::with_capacity(2 * ring as usize);
            for i in 1..=ring {
                edges.push((0, i));
            }
            for i in 1..ring {
                edges.push((i, i + 1));
            }
            edges.push((1, ring));
            (ring as usize + 1, edges)
        }
    }
}

/// Joins base and motif by one uniformly random edge, flags motif-internal
/// edges as the oracle rationale, labels by the motif kind, and fills node
/// features with uniform [0,1) noise.
#[allow(clippy::too_many_arguments)]
pub fn attach_and_label(
    base: (usize, Vec<(u32, u32)>),
    base_kind: BaseKind,
    motif: (usize, Vec<(u32, u32)>),
    motif_kind: MotifKind,
    rng: &mut Rng,
    feature_dim: usize,
    id: u64,
    split: Split,
) -> Graph {
    let (nb, base_edges) = base;
    let (nm, motif_edges) = motif;
    let off = nb as u32;
    let mut edges = Vec::with_capacity(base_edges.len() + motif_edges.len() + 1);
    let mut edge_truth = Vec::with_capacity(edges.capacity());
    for &(u, v) in &base_edges {
        edges.push((u.min(v), u.max(v)));
        edge_truth.push(false);
    }
    for &(u, v) in &motif_edges {
        edges.push((off + u.min(v), off + u.max(v)));
        edge_truth.push(true);
    }
    let anchor = rng.below(nb as u64) as u32;
    let port = rng.below(nm as u64) as u32;
    edges.push((anchor, off + port));
    edge_truth.push(false);
    let num_nodes = nb + nm;
    let features = (0..num_nodes)
        .map(|_| (0..feature_dim).map(|_| rng.next_f64()).collect())
        .collect();
    Graph {
        id,
        num_nodes,
        edges,
        edge_truth,
        features,
        label: motif_kind as usize,
        base_kind: Some(base_kind as u8),
        motif_kind: Some(motif_kind as u8),
        split,
    }
}

fn generate_one(cfg: &GenConfig, id: u64, split: Split) -> Graph {
    let mut rng = Rng::seed_from_u64(mix_seed(cfg.seed, id));
    let (mode, scale) = match split {
        Split::Train => (cfg.mode, 1.0),
        Split::Val => (DependencyMode::Independent, 1.0),
        Split::Test => (DependencyMode::Independent, cfg.test_base_scale),
    };
    let (motif_kind, base_kind) = sample_kinds(mode, cfg.bias, &mut rng);
    // Wide size spread, symmetric around the target: the split average stays
    // at the target while individual graphs range from motif-dominated to
    // base-dominated, so rationale crops cover many motif-to-base mixtures.
    let lo = (cfg.base_size - cfg.base_size / 2).max(4) as u64;
    let hi = (cfg.base_size + cfg.base_size / 2) as u64;
    let unscaled = rng.int_in(lo, hi);
    let target = ((unscaled as f64 * scale).round() as usize).max(4);
    let base = build_base(base_kind, target, &mut rng);
    let motif = build_motif(motif_kind);
    attach_and_label(
        base,
        base_kind,
        motif,
        motif_kind,
        &mut rng,
        cfg.feature_dim,
        id,
        split,
    )
}

/// Generates the full dataset. Each graph draws from its own seed stream
/// derived from (master seed, graph id), so output is deterministic and
/// graphs could be produced in any order.
pub fn generate_dataset(cfg: &GenConfig) -> Dataset {
    debug_assert!(cfg.validate().is_ok());
    let mut graphs = Vec::with_capacity(cfg.n_train + cfg.n_val + cfg.n_test);
    let mut id = 0u64;
    for _ in 0..cfg.n_train {
        graphs.push(generate_one(cfg, id, Split::Train));
        id += 1;
    }
    for _ in 0..cfg.n_val {
        graphs.push(generate_one(cfg, id, Split::Val));
        id += 1;
    }
    for _ in 0..cfg.n_test {
        graphs.push(generate_one(cfg, id, Split::Test));
        id += 1;
    }
    Dataset::new(graphs)
}

/// Plain-text report with one label-by-base contingency table per split.
pub fn stats_report(ds: &Dataset) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let graphs = ds.split(split);
        if graphs.is_empty() {
            continue;
        }
        let mut table = [[0usize; 3]; 3];
        let mut nodes = 0usize;
        let mut edges = 0usize;
        for g in &graphs {
            let m = g.motif_kind.unwrap_or(0) as usize;
            let b = g.base_kind.unwrap_or(0) as usize;
            table[m][b] += 1;
            nodes += g.num_nodes;
            edges += g.edges.len();
        }
        let count = graphs.len();
        writeln!(
            out,
            "split {}: {} graphs, avg nodes {:.2}, avg edges {:.2}",
            split.name(),
            count,
            nodes as f64 / count as f64,
            edges as f64 / count as f64
        )
        .unwrap();
        writeln!(out, "  label \\ base      tree    ladder     wheel").unwrap();
        for (m, name) in ["cycle", "house", "crane"].iter().enumerate() {
            writeln!(
                out,
                "  {:<14} {:>7} {:>9} {:>9}",
                name, table[m][0], table[m][1], table[m][2]
            )
            .unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn degree_multiset(n: usize, edges: &[(u32, u32)]) -> Vec<usize> {
        let mut deg = vec![0usize; n];
        for &(u, v) in edges {
            deg[u as usize] += 1;
            deg[v as usize] += 1;
        }
        deg.sort_unstable();
        deg
    }

    #[test]
    fn house_matches_canonical_definition() {
        let (n, edges) = build_motif(MotifKind::House);
        assert_eq!(n, 5);
        assert_eq!(edges, vec![(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4)]);
        assert_eq!(degree_multiset(n, &edges), vec![2, 2, 2, 3, 3]);
    }

    #[test]
    fn cycle_is_a_six_ring() {
        let (n, edges) = build_motif(MotifKind::Cycle);
        assert_eq!((n, edges.len()), (6, 6));
        assert_eq!(degree_multiset(n, &edges), vec![2; 6]);
    }

    #[test]
    fn crane_distinct_from_other_motifs() {
        let (n, edges) = build_motif(MotifKind::Crane);
        assert_eq!((n, edges.len()), (6, 6));
        assert_eq!(degree_multiset(n, &edges), vec![1, 1, 2, 2, 3, 3]);
        // Degree multisets already separate crane from house; against the
        // cycle (same size, same edge count) run the brute-force check.
        let (_, cycle_edges) = build_motif(MotifKind::Cycle);
        assert!(!isomorphic6(&edges, &cycle_edges));
    }

    /// Brute-force isomorphism test for 6-node graphs.
    fn isomorphic6(a: &[(u32, u32)], b: &[(u32, u32)]) -> bool {
        let to_set = |edges: &[(u32, u32)]| {
            edges
                .iter()
                .map(|&(u, v)| (u.min(v), u.max(v)))
                .collect::<std::collections::HashSet<_>>()
        };
        let sb = to_set(b);
        let mut perm: Vec<u32> = (0..6).collect();
        permute_check(&mut perm, 0, a, &sb)
    }

    fn permute_check(
        perm: &mut Vec<u32>,
        k: usize,
        a: &[(u32, u32)],
        sb: &std::collections::HashSet<(u32, u32)>,
    ) -> bool {
        if k == perm.len() {
            return a.iter().all(|&(u, v)| {
                let (x, y) = (perm[u as usize], perm[v as usize]);
                sb.contains(&(x.min(y), x.max(y)))
            });
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            if permute_check(perm, k + 1, a, sb) {
                return true;
            }
            perm.swap(k, i);
        }
        false
    }

    #[test]
    fn ladder_and_wheel_edge_counts() {
        let mut rng = Rng::seed_from_u64(0);
        let (n, e) = build_base(BaseKind::Ladder, 10, &mut rng);
        assert_eq!((n, e.len()), (10, 13));
        let (n, e) = build_base(BaseKind::Wheel, 7, &mut rng);
        assert_eq!((n, e.len()), (7, 12));
        let (n, e) = build_base(BaseKind::Tree, 10, &mut rng);
        assert_eq!((n, e.len()), (10, 9));
    }

    #[test]
    fn tree_respects_binary_arity() {
        let mut rng = Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (n, edges) = build_base(BaseKind::Tree, 30, &mut rng);
            let mut children = vec![0usize; n];
            for &(u, _) in &edges {
                children[u as usize] += 1;
            }
            assert!(children.iter().all(|&c| c <= 2));
        }
    }

    #[test]
    fn matching_base_probability_is_b() {
        let mut rng = Rng::seed_from_u64(11);
        let n = 9000;
        let mut matches = 0;
        for _ in 0..n {
            if sample_base_kind(MotifKind::House, 0.9, &mut rng) == BaseKind::Ladder {
                matches += 1;
            }
        }
        // P(S = C) = 0.9, 3 sigma binomial band
        let sigma = (0.9f64 * 0.1 * n as f64).sqrt();
        assert!((matches as f64 - 0.9 * n as f64).abs() < 3.0 * sigma);
    }

    #[test]
    fn bias_one_third_is_uniform() {
        let mut rng = Rng::seed_from_u64(13);
        let n = 9000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_base_kind(MotifKind::Cycle, 1.0 / 3.0, &mut rng) as usize] += 1;
        }
        let sigma = ((n as f64) * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / 3.0).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn half_bias_frequencies_within_three_sigma() {
        let mut rng = Rng::seed_from_u64(17);
        let n = 9000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_base_kind(MotifKind::Crane, 0.5, &mut rng) as usize] += 1;
        }
        // crane matches wheel (index 2); others get 0.25 each
        let expect = [0.25, 0.25, 0.5];
        for (c, p) in counts.iter().zip(expect) {
            let sigma = ((n as f64) * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - p * n as f64).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn degenerate_confounder_pins_both_kinds() {
        let mut rng = Rng::seed_from_u64(19);
        let (m, b) = latent_pair_with(0.0, &mut rng);
        assert_eq!((m, b), (MotifKind::Crane, BaseKind::Tree));
        let (m, b) = latent_pair_with(1.0, &mut rng);
        assert_eq!((m, b), (MotifKind::Cycle, BaseKind::Wheel));
    }

    #[test]
    fn latent_kinds_anticorrelate() {
        let mut rng = Rng::seed_from_u64(23);
        let n = 10_000;
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let (m, b) = sample_latent_pair(&mut rng);
                (m as u8 as f64, b as u8 as f64)
            })
            .collect();
        let mean_m = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let mean_b = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let cov = pairs
            .iter()
            .map(|p| (p.0 - mean_m) * (p.1 - mean_b))
            .sum::<f64>()
            / n as f64;
        let var_m = pairs.iter().map(|p| (p.0 - mean_m).powi(2)).sum::<f64>() / n as f64;
        let var_b = pairs.iter().map(|p| (p.1 - mean_b).powi(2)).sum::<f64>() / n as f64;
        let corr = cov / (var_m * var_b).sqrt();
        assert!(corr < -0.3, "corr = {corr}");
    }

    #[test]
    fn attach_house_on_tree_edge_accounting() {
        let mut rng = Rng::seed_from_u64(29);
        let base = build_base(BaseKind::Tree, 20, &mut rng);
        let motif = build_motif(MotifKind::House);
        let g = attach_and_label(
            base,
            BaseKind::Tree,
            motif,
            MotifKind::House,
            &mut rng,
            4,
            0,
            Split::Train,
        );
        assert_eq!(g.num_nodes, 25);
        assert_eq!(g.edges.len(), 19 + 6 + 1);
        assert_eq!(g.edge_truth.iter().filter(|&&t| t).count(), 6);
        assert_eq!(g.label, MotifKind::House as usize);
        g.validate().unwrap();
        assert!(g.is_connected());
    }

    #[test]
    fn cycle_graphs_always_labeled_zero() {
        let mut rng = Rng::seed_from_u64(31);
        for kind in BaseKind::ALL {
            let base = build_base(kind, 15, &mut rng);
            let g = attach_and_label(
                base,
                kind,
                build_motif(MotifKind::Cycle),
                MotifKind::Cycle,
                &mut rng,
                4,
                0,
                Split::Test,
            );
            assert_eq!(g.label, 0);
        }
    }

    #[test]
    fn dataset_is_deterministic_and_valid() {
        let cfg = GenConfig {
            n_train: 60,
            n_val: 20,
            n_test: 20,
            seed: 7,
            ..GenConfig::default()
        };
        let a = generate_dataset(&cfg);
        let b = generate_dataset(&cfg);
        assert_eq!(a.graphs, b.graphs);
        for g in &a.graphs {
            g.validate().unwrap();
            assert!(g.is_connected());
            // oracle rationale is exactly the motif's canonical edge set
            let motif = MotifKind::from_index(g.motif_kind.unwrap() as u64);
            let (_, motif_edges) = build_motif(motif);
            assert_eq!(
                g.edge_truth.iter().filter(|&&t| t).count(),
                motif_edges.len()
            );
        }
    }

    #[test]
    fn train_split_sizes_track_target() {
        let cfg = GenConfig {
            n_train: 400,
            n_val: 50,
            n_test: 50,
            seed: 3,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&cfg);
        let train = ds.split(Split::Train);
        let mean: f64 =
            train.iter().map(|g| g.num_nodes as f64).sum::<f64>() / train.len() as f64;
        assert!((mean - 25.4).abs() < 3.0, "train mean nodes {mean}");
        let test = ds.split(Split::Test);
        let mean_t: f64 = test.iter().map(|g| g.num_nodes as f64).sum::<f64>() / test.len() as f64;
        // 3x the base portion plus the motif
        assert!((mean_t - 65.7).abs() < 5.0, "test mean nodes {mean_t}");
    }

    #[test]
    fn train_motif_marginal_uniform() {
        let cfg = GenConfig {
            n_train: 3000,
            n_val: 10,
            n_test: 10,
            seed: 41,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&cfg);
        let mut counts = [0usize; 3];
        for g in ds.split(Split::Train) {
            counts[g.label] += 1;
        }
        let n = 3000f64;
        let sigma = (n * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - n / 3.0).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn independent_mode_has_negligible_mutual_information() {
        let mut rng = Rng::seed_from_u64(47);
        let n = 10_000usize;
        let mut joint = [[0usize; 3]; 3];
        for _ in 0..n {
            let (m, b) = sample_kinds(DependencyMode::Independent, 0.9, &mut rng);
            joint[m as usize][b as usize] += 1;
        }
        let mut mi = 0.0;
        for m in 0..3 {
            for b in 0..3 {
                let pmb = joint[m][b] as f64 / n as f64;
                if pmb == 0.0 {
                    continue;
                }
                let pm = joint[m].iter().sum::<usize>() as f64 / n as f64;
                let pb = (0..3).map(|r| joint[r][b]).sum::<usize>() as f64 / n as f64;
                mi += pmb * (pmb / (pm * pb)).ln();
            }
        }
        assert!(mi < 0.01, "mutual information {mi}");
    }

    #[test]
    fn extreme_bias_locks_base_to_motif() {
        let mut rng = Rng::seed_from_u64(53);
        let n = 5000;
        let mut matched = 0;
        for _ in 0..n {
            let (m, b) = sample_kinds(DependencyMode::Biased, 0.999, &mut rng);
            if m as u8 == b as u8 {
                matched += 1;
            }
        }
        assert!(matched as f64 / n as f64 > 0.99);
    }

    #[test]
    fn stats_report_mentions_all_splits() {
        let cfg = GenConfig {
            n_train: 30,
            n_val: 10,
            n_test: 10,
            seed: 1,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&cfg);
        let report = stats_report(&ds);
        for s in ["split train", "split val", "split test", "crane"] {
            assert!(report.contains(s), "missing {s} in report:\n{report}");
        }
    }
}
