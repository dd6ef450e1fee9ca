//! Adam and SGD over parameter groups.

use crate::nn::{GroupId, ModelParams, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimKind {
    Adam,
    Sgd,
}

impl OptimKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimKind::Adam => "adam",
            OptimKind::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Option<OptimKind> {
        match s {
            "adam" => Some(OptimKind::Adam),
            "sgd" => Some(OptimKind::Sgd),
            _ => None,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct GroupState {
    /// First and second moment per tensor; empty for SGD.
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

/// Optimizer state for all four parameter groups.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimKind,
    pub lr: f64,
    states: [GroupState; 4],
}

impl Optimizer {
    pub fn new(kind: OptimKind, lr: f64, params: &ModelParams) -> Self {
        let mk = |id: GroupId| {
            let group = params.group(id);
            match kind {
                OptimKind::Adam => GroupState {
                    m: group.tensors.iter().map(|t| vec![0.0; t.values.len()]).collect(),
                    v: group.tensors.iter().map(|t| vec![0.0; t.values.len()]).collect(),
                    t: 0,
                },
                OptimKind::Sgd => GroupState {
                    m: Vec::new(),
                    v: Vec::new(),
                    t: 0,
                },
            }
        };
        Optimizer {
            kind,
            lr,
            states: [
                mk(GroupId::Generator),
                mk(GroupId::Encoder),
                mk(GroupId::CausalHead),
                mk(GroupId::SpuriousHead),
            ],
        }
    }

    fn state_index(id: GroupId) -> usize {
        match id {
            GroupId::Generator => 0,
            GroupId::Encoder => 1,
            GroupId::CausalHead => 2,
            GroupId::SpuriousHead => 3,
        }
    }

    /// Applies one update to a group from its accumulated gradients.
    pub fn step_group(&mut self, group: &mut ParamGroup) {
        let state = &mut self.states[Self::state_index(group.id)];
        match self.kind {
            OptimKind::Sgd => {
                for t in &mut group.tensors {
                    for (p, &g) in t.values.iter_mut().zip(&t.grad) {
                        *p -= self.lr * g;
                    }
                }
            }
            OptimKind::Adam => {
                assert_eq!(
                    state.m.len(),
                    group.tensors.len(),
                    "optimizer state does not match group {}",
                    group.id.name()
                );
                state.t += 1;
                let bc1 = 1.0 - BETA1.powi(state.t as i32);
                let bc2 = 1.0 - BETA2.powi(state.t as i32);
                for (ti, t) in group.tensors.iter_mut().enumerate() {
                    let m = &mut state.m[ti];
                    let v = &mut state.v[ti];
                    assert_eq!(m.len(), t.values.len(), "moment shape mismatch");
                    for i in 0..t.values.len() {
                        let g = t.grad[i];
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        t.values[i] -= self.lr * mhat / (vhat.sqrt() + EPS);
                    }
                }
            }
        }
    }
}
