//! Attention scoring, pairwise option comparison, correlation fusion and
//! co-attention with the context.
//!
//! Token matrices hold one row per token, so a `d x N` matrix of column
//! vectors appears here as `N x d`.

use crate::autodiff::{Axis, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{linear, repeat_row, Dropout, Scorer};

/// `A[i][j] = softmax_i( v1.u_i + v2.w_j + v3.(u_i * w_j) )` for rows `u_i`
/// of `u` (`N x d`) and `w_j` of `w` (`M x d`). Each column of the
/// `N x M` result sums to one.
pub fn pairwise_attention(tape: &mut Tape, u: Var, w: Var, v: &Scorer<Var>) -> Var {
    let du = tape.value(u).cols();
    let dw = tape.value(w).cols();
    assert_eq!(du, dw, "pairwise_attention width mismatch: {du} vs {dw}");
    let v1t = tape.transpose(v.v1);
    let v2t = tape.transpose(v.v2);
    let su = tape.matmul(u, v1t);
    let sw = tape.matmul(w, v2t);
    let sw_row = tape.transpose(sw);
    let uv3 = tape.mul_row(u, v.v3);
    let wt = tape.transpose(w);
    let cross = tape.matmul(uv3, wt);
    let s = tape.add_col(cross, su);
    let s = tape.add_row(s, sw_row);
    tape.softmax(s, Axis::Rows)
}

/// `A^T values`: row `j` is the attention-weighted sum of `values` for query `j`.
pub fn attend(tape: &mut Tape, queries: Var, keys: Var, values: Var, v: &Scorer<Var>) -> Var {
    let a = pairwise_attention(tape, keys, queries, v);
    let at = tape.transpose(a);
    tape.matmul(at, values)
}

/// Comparison of option `i` against option `j`, `N_i x 2d`:
/// `[O_i - Obar ; O_i * Obar]` where `Obar` routes `O_i` through `O_j` and
/// back, `Obar = Attn(O_j, O_i)^T Attn(O_i, O_j)^T O_i`.
pub fn option_pair_interaction(
    tape: &mut Tape,
    oi: Var,
    oj: Var,
    v: &Scorer<Var>,
    drop: &mut Dropout<'_>,
) -> Result<Var> {
    if oi == oj {
        return Err(Error::shape(
            "option_pair_interaction",
            "an option cannot be compared with itself",
        ));
    }
    let a_ij = pairwise_attention(tape, oi, oj, v);
    let a_ij = drop.apply(tape, a_ij);
    let a_ji = pairwise_attention(tape, oj, oi, v);
    let a_ji = drop.apply(tape, a_ji);
    let t1 = tape.transpose(a_ij);
    let to_j = tape.matmul(t1, oi);
    let t2 = tape.transpose(a_ji);
    let back = tape.matmul(t2, to_j);
    let diff = tape.sub(oi, back);
    let prod = tape.mul(oi, back);
    Ok(tape.concat_cols(&[diff, prod]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionParams<T> {
    pub scorer: Scorer<T>,
    /// `7d x d`.
    pub w_c: T,
    pub b_c: T,
    /// `3d x d`.
    pub w_g: T,
    pub b_g: T,
}

impl<T: Copy> InteractionParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> InteractionParams<U> {
        InteractionParams {
            scorer: self.scorer.map(&f),
            w_c: f(self.w_c),
            b_c: f(self.b_c),
            w_g: f(self.w_g),
            b_g: f(self.b_g),
        }
    }
}

/// Output of [`fuse_option_correlations`].
#[derive(Debug, Clone, Copy)]
pub struct AdvancedOption {
    pub rep: Var,
    pub gate: Var,
    /// Width of the concatenated correlation features (`7d`).
    pub concat_width: usize,
}

/// `O^ = tanh([O_i, O_i^(j1), O_i^(j2), O_i^(j3)] W_c + b_c)`, then
/// `g = sigmoid([O_i, O^, Q~] W_g + b_g)` and `g * O_i + (1 - g) * O^` per row.
pub fn fuse_option_correlations(
    tape: &mut Tape,
    oi: Var,
    partners: &[Var],
    q_tilde: Var,
    p: &InteractionParams<Var>,
) -> Result<AdvancedOption> {
    if partners.len() != 3 {
        return Err(Error::shape(
            "fuse_option_correlations",
            format!("expected 3 partner interactions, got {}", partners.len()),
        ));
    }
    let mut parts = vec![oi];
    parts.extend_from_slice(partners);
    let cat = tape.concat_cols(&parts);
    let concat_width = tape.value(cat).cols();
    let pre = linear(tape, cat, p.w_c, p.b_c);
    let o_hat = tape.tanh(pre);
    let n = tape.value(oi).rows();
    let q = repeat_row(tape, q_tilde, n);
    let gate_in = tape.concat_cols(&[oi, o_hat, q]);
    let gate_pre = linear(tape, gate_in, p.w_g, p.b_g);
    let gate = tape.sigmoid(gate_pre);
    let keep = tape.mul(gate, oi);
    let inv = tape.one_minus(gate);
    let mixed = tape.mul(inv, o_hat);
    let rep = tape.add(keep, mixed);
    Ok(AdvancedOption {
        rep,
        gate,
        concat_width,
    })
}

/// Attends from every option row onto the context rows and mean-pools the
/// attended summaries to `1 x d`. Without context the option rows are pooled.
pub fn coattend_with_context(
    tape: &mut Tape,
    option: Var,
    context: Option<Var>,
    v: &Scorer<Var>,
    drop: &mut Dropout<'_>,
) -> (Var, Option<Var>) {
    let Some(ctx) = context.filter(|c| tape.value(*c).rows() > 0) else {
        return (tape.mean(option, Axis::Rows), None);
    };
    let a = pairwise_attention(tape, ctx, option, v);
    let ad = drop.apply(tape, a);
    let at = tape.transpose(ad);
    let summary = tape.matmul(at, ctx);
    (tape.mean(summary, Axis::Rows), Some(a))
}
