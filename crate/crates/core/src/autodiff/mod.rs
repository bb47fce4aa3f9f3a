//! A small dense reverse-mode autodiff library over `f64` matrices.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    gradient_check, relative_error, CoordError, GradCheckOptions, GradCheckReport,
};
pub use params::{ParamId, ParamStore};
pub use tape::{Axis, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Softmax of a plain tensor, outside any tape.
pub fn softmax(x: &Tensor, axis: Axis) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.softmax(v, axis);
    tape.value(y).clone()
}

/// Cosine similarity of two plain tensors; zero when either has zero norm.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let va = tape.constant(a.clone());
    let vb = tape.constant(b.clone());
    let c = tape.cosine(va, vb);
    tape.value(c).item()
}
