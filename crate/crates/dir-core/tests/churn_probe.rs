//! Temporary diagnostic: does per-epoch crop churn (jittered selection,
//! true masks) restore out-of-distribution accuracy?
//! cargo test -p dir-core --release --test churn_probe -- --ignored --nocapture

use dir_core::autodiff::Tape;
use dir_core::engine::{
    dir_forward_pinned, generator_edge_weights, make_plan, StepConfig,
};
use dir_core::graph::{make_batch, Graph, Split};
use dir_core::nn::{accumulate_grads, bind_gnn, gnn_forward, Arch, ModelParams, Tail};
use dir_core::optim::{OptimKind, Optimizer};
use dir_core::rng::{mix_seed, Rng};
use dir_core::synth::{generate_dataset, GenConfig};
use dir_core::train::{evaluate, Mode};

#[test]
#[ignore]
fn churned_selection_training() {
    let ds = generate_dataset(&GenConfig {
        bias: 0.9,
        n_train: 3000,
        n_val: 1000,
        n_test: 2000,
        seed: 4242,
        ..GenConfig::default()
    });
    let train = ds.split(Split::Train);
    let val = ds.split(Split::Val);
    let test = ds.split(Split::Test);
    let arch = Arch {
        feature_dim: 4,
        n_classes: 3,
        ..Arch::default()
    };
    let mut params = ModelParams::new(arch, 0);
    let mut opt = Optimizer::new(OptimKind::Adam, 1e-3, &params);
    let cfg = StepConfig {
        r: 0.25,
        lambda: 1e-2,
        audit_routing: false,
    };
    let mut rng = Rng::seed_from_u64(mix_seed(0, 0x7261));
    let mut jrng = Rng::seed_from_u64(99);
    let jitter: f64 = std::env::var("CHURN_JITTER")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.3);
    for epoch in 1..=40 {
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        for chunk in order.chunks(32) {
            let graphs: Vec<&Graph> = chunk.iter().map(|&i| train[i]).collect();
            let batch = make_batch(&graphs).unwrap();
            // compute the true mask values on a throwaway tape
            let mask_vals = {
                let mut t = Tape::new();
                let gen = bind_gnn(&mut t, &params.generator);
                let x = t.leaf_matrix(batch.num_nodes, batch.feature_dim, batch.features.clone());
                let w = t.leaf(generator_edge_weights(&batch));
                let z = gnn_forward(&mut t, &gen, x, &batch.dir_src, &batch.dir_dst, w, batch.num_nodes, Tail::Linear).unwrap();
                let z = dir_core::engine::bounded_embeddings(&mut t, z).unwrap();
                let m = dir_core::engine::compute_edge_mask(&mut t, z, &batch.und_u, &batch.und_v).unwrap();
                t.values(m).to_vec()
            };
            let jittered: Vec<f64> = mask_vals
                .iter()
                .map(|&m| m + jrng.range_f64(0.0, jitter))
                .collect();
            let plan = make_plan(&batch, &jittered, cfg.r).unwrap();
            params.zero_all_grads();
            let mut tape = Tape::new();
            let fwd = dir_forward_pinned(&mut tape, &params, &batch, &cfg, plan, None).unwrap();
            let g_dir = tape.backward(fwd.r_dir).unwrap();
            let g_short = tape.backward(fwd.r_shortcut).unwrap();
            accumulate_grads(&mut params.generator, &fwd.generator.ids, &g_dir);
            accumulate_grads(&mut params.encoder, &fwd.encoder.ids, &g_dir);
            accumulate_grads(&mut params.causal_head, &fwd.causal_head.ids, &g_dir);
            accumulate_grads(&mut params.spurious_head, &fwd.spurious_head.ids, &g_short);
            opt.step_group(&mut params.generator);
            opt.step_group(&mut params.encoder);
            opt.step_group(&mut params.causal_head);
            opt.step_group(&mut params.spurious_head);
        }
        if epoch % 4 == 0 || epoch <= 4 {
            let vm = evaluate(&params, &val, Mode::Dir, cfg.r, 5).unwrap();
            let wm = evaluate(&params, &test, Mode::Dir, cfg.r, 5).unwrap();
            println!(
                "epoch {epoch}: val={:.3} test={:.3} p5test={:.3} nu={:.3}",
                vm.acc, wm.acc, wm.prec_at_k, wm.spurious_entropy
            );
        }
    }
}
