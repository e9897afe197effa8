//! Scaled dot-product attention, both as a tape op chain and as a
//! standalone function for callers that only need values.

use crate::error::{Error, Result};
use crate::nncore::engine::{Engine, Mask, Var};
use crate::nncore::{Scalar, Tensor};

/// Build attention on the tape. `q` is `Tq x d`, `k` is `Tk x d`, `v` is
/// `Tk x dv`. Returns `(context, weights)` where `context` is `Tq x dv` and
/// `weights` is the `Tq x Tk` row-stochastic attention matrix.
pub fn attention<S: Scalar>(
    eng: &mut Engine<S>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Mask>,
) -> Result<(Var, Var)> {
    let d = eng.value(q).cols();
    if d == 0 || eng.value(k).cols() != d {
        return Err(Error::Shape(format!(
            "attention: q width {} vs k width {}",
            d,
            eng.value(k).cols()
        )));
    }
    if eng.value(k).rows() != eng.value(v).rows() {
        return Err(Error::Shape(format!(
            "attention: {} keys vs {} values",
            eng.value(k).rows(),
            eng.value(v).rows()
        )));
    }
    let kt = eng.transpose(k)?;
    let scores = eng.matmul(q, kt)?;
    let scaled = eng.mul_scalar(scores, S::from_f64(1.0 / (d as f64).sqrt()))?;
    let weights = eng.softmax_rows(scaled, mask)?;
    let context = eng.matmul(weights, v)?;
    Ok((context, weights))
}

/// Value-only attention for callers outside a training graph.
pub fn scaled_dot_attention<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    mask: Option<&Mask>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let mut eng = Engine::new();
    let qv = eng.leaf(q.clone())?;
    let kv = eng.leaf(k.clone())?;
    let vv = eng.leaf(v.clone())?;
    let (ctx, w) = attention(&mut eng, qv, kv, vv, mask)?;
    Ok((eng.value(ctx).clone(), eng.value(w).clone()))
}
