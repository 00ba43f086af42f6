use serde::{Deserialize, Serialize};

use crate::numcore::{kernels::sigmoid, Gate, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::Result;

/// How the residual weight is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    /// `alpha = sigmoid(logit)`, trained with the rest of the model.
    Learned,
    /// Endpoint forced by an ablation (0 or 1).
    Fixed(f64),
}

/// Learnable blend between the continuous input and its quantization.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualGate {
    pub logit: ParamId,
    pub penalty_weight: f64,
    pub mode: GateMode,
}

impl ResidualGate {
    pub const PARAM: &'static str = "gate.logit";

    /// Adds the gate logit (one per head when `per_head`) initialized at `alpha_init`.
    pub fn init(store: &mut ParamStore<f32>, per_head: bool, heads: usize, alpha_init: f64) -> Result<ParamId> {
        let n = if per_head { heads } else { 1 };
        let logit = (alpha_init / (1.0 - alpha_init)).ln() as f32;
        store.insert(Self::PARAM, Tensor::new(vec![n], vec![logit; n])?)
    }

    /// Current residual weight(s).
    pub fn alpha<T: Real>(&self, params: &ParamStore<T>) -> Vec<f64> {
        match self.mode {
            GateMode::Fixed(a) => vec![a],
            GateMode::Learned => params.get(self.logit).data().iter().map(|v| sigmoid(v.wide())).collect(),
        }
    }

    pub fn graph_gate<T: Real>(&self, g: &mut Graph<'_, T>) -> Gate<T> {
        match self.mode {
            GateMode::Fixed(a) => Gate::Fixed(T::narrow(a)),
            GateMode::Learned => {
                let l = g.param(self.logit);
                Gate::Learned(g.sigmoid(l))
            }
        }
    }

    /// `lambda * alpha^2` (averaged over heads for a per-head gate).
    pub fn penalty<T: Real>(&self, g: &mut Graph<'_, T>, gate: Gate<T>) -> Var {
        match gate {
            Gate::Fixed(a) => {
                let v = gate_penalty(a.wide(), self.penalty_weight);
                g.constant(1, 1, vec![T::narrow(v)])
            }
            Gate::Learned(a) => {
                let n = g.dims(a).1;
                let sq = g.sum_squares(a);
                g.scale(sq, self.penalty_weight / n as f64)
            }
        }
    }
}

pub fn gate_penalty(alpha: f64, weight: f64) -> f64 {
    weight * alpha * alpha
}
