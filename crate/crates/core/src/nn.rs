//! Small layer helpers shared by the encoder, interaction and decoder.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};

/// Inverted dropout. Inactive when no RNG is attached or the rate is zero.
pub struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Dropout<'a> {
    pub fn off() -> Self {
        Dropout {
            rate: 0.0,
            rng: None,
        }
    }

    pub fn new(rate: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Dropout {
            rate,
            rng: Some(rng),
        }
    }

    pub fn is_active(&self) -> bool {
        self.rate > 0.0 && self.rng.is_some()
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        let rate = self.rate;
        let Some(rng) = self.rng.as_deref_mut() else {
            return x;
        };
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = tape.value(x).shape();
        let mask: Vec<f64> = (0..shape[0] * shape[1])
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let m = tape.constant(Tensor::new(shape[0], shape[1], mask));
        tape.mul(x, m)
    }
}

/// `x W + 1 b`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

/// Repeats a `1 x d` row `n` times.
pub fn repeat_row(tape: &mut Tape, row: Var, n: usize) -> Var {
    tape.gather_rows(row, &vec![0; n])
}

/// The three parts of an attention scorer `v = [v1; v2; v3]`, each `1 x d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scorer<T> {
    pub v1: T,
    pub v2: T,
    pub v3: T,
}

impl<T: Copy> Scorer<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Scorer<U> {
        Scorer {
            v1: f(self.v1),
            v2: f(self.v2),
            v3: f(self.v3),
        }
    }
}
