//! Gated answer decoder and the training objective.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::corpus::NUM_OPTIONS;
use crate::error::{Error, Result};
use crate::nn::{linear, Dropout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderParams<T> {
    /// `4d x d` and `1 x d`.
    pub fc1_w: T,
    pub fc1_b: T,
    pub fc2_w: T,
    pub fc2_b: T,
    /// `2d x d` and `1 x d`.
    pub fcp_w: T,
    pub fcp_b: T,
    /// `d x 1` and `1 x 1`.
    pub z_w: T,
    pub z_b: T,
}

impl<T: Copy> DecoderParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> DecoderParams<U> {
        DecoderParams {
            fc1_w: f(self.fc1_w),
            fc1_b: f(self.fc1_b),
            fc2_w: f(self.fc2_w),
            fc2_b: f(self.fc2_b),
            fcp_w: f(self.fcp_w),
            fcp_b: f(self.fcp_b),
            z_w: f(self.z_w),
            z_b: f(self.z_b),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    /// `4 x 1` answer logits.
    pub logits: Var,
    /// `4 x d` mixing gate between `H` and `O^f`.
    pub gate: Var,
}

fn comparison(tape: &mut Tape, a: Var, b: Var) -> Var {
    let diff = tape.sub(a, b);
    let prod = tape.mul(a, b);
    tape.concat_cols(&[a, b, diff, prod])
}

/// `E1 = ReLU(FC1[h, H, h-H, h*H])`, `E2 = ReLU(FC2[h, O, h-O, h*O])`,
/// `P = sigmoid(FC_P[E1, E2])`, `C = P*H + (1-P)*O`, `z = C W_z + b_z`.
///
/// With `e2_literal` the second block reads `[h, H, h-O, h*O]`.
pub fn hierarchical_decode(
    tape: &mut Tape,
    hc: Var,
    h: Var,
    of: Var,
    p: &DecoderParams<Var>,
    e2_literal: bool,
    drop: &mut Dropout<'_>,
) -> Result<Decoded> {
    let shapes = [
        tape.value(hc).shape(),
        tape.value(h).shape(),
        tape.value(of).shape(),
    ];
    if shapes[0] != shapes[1] || shapes[0] != shapes[2] {
        return Err(Error::shape(
            "hierarchical_decode",
            format!("inputs must share a shape, got {shapes:?}"),
        ));
    }
    let in1 = comparison(tape, hc, h);
    let e1 = linear(tape, in1, p.fc1_w, p.fc1_b);
    let e1 = tape.relu(e1);
    let e1 = drop.apply(tape, e1);

    let in2 = if e2_literal {
        let diff = tape.sub(hc, of);
        let prod = tape.mul(hc, of);
        tape.concat_cols(&[hc, h, diff, prod])
    } else {
        comparison(tape, hc, of)
    };
    let e2 = linear(tape, in2, p.fc2_w, p.fc2_b);
    let e2 = tape.relu(e2);
    let e2 = drop.apply(tape, e2);

    let e = tape.concat_cols(&[e1, e2]);
    let gate_pre = linear(tape, e, p.fcp_w, p.fcp_b);
    let gate = tape.sigmoid(gate_pre);
    let from_h = tape.mul(gate, h);
    let inv = tape.one_minus(gate);
    let from_o = tape.mul(inv, of);
    let c = tape.add(from_h, from_o);
    let logits = linear(tape, c, p.z_w, p.z_b);
    Ok(Decoded { logits, gate })
}

/// `-log softmax(z)[label]`.
pub fn answer_loss(tape: &mut Tape, logits: Var, label: usize) -> Result<Var> {
    let n = tape.value(logits).len();
    if label >= n || n != NUM_OPTIONS {
        return Err(Error::Validation {
            example_id: String::new(),
            rule: format!("label {label} out of range for {n} logits"),
        });
    }
    Ok(tape.cross_entropy(logits, label))
}

/// Span features of one triplet, each `1 x d`.
#[derive(Debug, Clone, Copy)]
pub struct TripletFeatures {
    pub subject: Var,
    pub relation: Var,
    pub object: Var,
}

/// `sum_k (1 - cos(s_k + r_k, o_k))`; zero for no triplets.
pub fn fact_regularization(tape: &mut Tape, triplets: &[TripletFeatures]) -> Var {
    let mut total = tape.constant(Tensor::scalar(0.0));
    for t in triplets {
        let sr = tape.add(t.subject, t.relation);
        let cos = tape.cosine(sr, t.object);
        let term = tape.one_minus(cos);
        total = tape.add(total, term);
    }
    total
}

/// Weights of the answer loss and the fact regulariser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    alpha: f64,
    beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be non-negative, got {beta}"
            )));
        }
        Ok(LossWeights { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `alpha * l_ans + beta * l_lfr` on plain numbers.
    pub fn combine(&self, l_ans: f64, l_lfr: f64) -> f64 {
        self.alpha * l_ans + self.beta * l_lfr
    }
}

/// `alpha * L_ans + beta * L_lfr` on the tape.
pub fn total_loss(tape: &mut Tape, l_ans: Var, l_lfr: Var, w: LossWeights) -> Var {
    let a = tape.scale(l_ans, w.alpha);
    let b = tape.scale(l_lfr, w.beta);
    tape.add(a, b)
}
