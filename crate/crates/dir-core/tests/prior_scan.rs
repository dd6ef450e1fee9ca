//! Temporary diagnostic: precision@5 of the untrained generator's edge
//! ranking, as a function of generator depth/width and seed.
//! cargo test -p dir-core --release --test prior_scan -- --ignored --nocapture

use dir_core::engine::{dir_forward, StepConfig};
use dir_core::graph::{make_batch, Graph, Split};
use dir_core::nn::{Arch, ModelParams};
use dir_core::synth::{generate_dataset, GenConfig};
use dir_core::train::precision_at_k;

#[test]
#[ignore]
fn prior_precision_scan() {
    let ds = generate_dataset(&GenConfig {
        bias: 0.9,
        n_train: 2,
        n_val: 2,
        n_test: 400,
        seed: 777,
        ..GenConfig::default()
    });
    let test: Vec<&Graph> = ds.split(Split::Test);
    for hidden in [
        vec![32, 32, 32],
        vec![32, 32, 32, 32],
        vec![32, 32, 32, 32, 32],
        vec![32, 32, 32, 32, 32, 32],
        vec![32, 32, 32, 32, 32, 32, 32],
        vec![32; 8],
        vec![16, 16, 16, 16, 16, 16],
    ] {
        let mut p5s = Vec::new();
        for seed in 0..4u64 {
            let arch = Arch {
                feature_dim: 4,
                gen_hidden: hidden.clone(),
                head_hidden: 32,
                n_classes: 3,
                ..Arch::default()
            };
            let params = ModelParams::new(arch, seed);
            let mut total = 0.0;
            for chunk in test.chunks(64) {
                let batch = make_batch(chunk).unwrap();
                let mut tape = dir_core::autodiff::Tape::new();
                let fwd = dir_forward(
                    &mut tape,
                    &params,
                    &batch,
                    &StepConfig {
                        r: 0.25,
                        lambda: 0.01,
                        audit_routing: false,
                    },
                )
                .unwrap();
                for (g, s) in chunk.iter().zip(&fwd.plan.per_graph) {
                    total += precision_at_k(&s.mask, &g.edge_truth, 5);
                }
            }
            p5s.push(total / test.len() as f64);
        }
        let mean = p5s.iter().sum::<f64>() / p5s.len() as f64;
        println!(
            "hidden={hidden:?}: p5(test) seeds {:?} mean {mean:.4}",
            p5s.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
}
