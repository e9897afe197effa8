//! Parameterized building blocks on top of the tape engine. Each layer
//! registers its parameters under a dotted name prefix so whole subtrees can
//! be frozen or filtered by prefix.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nncore::attention::attention;
use crate::nncore::engine::{Engine, Mask, Var};
use crate::nncore::init::glorot_uniform;
use crate::nncore::{Scalar, Tensor};

/// Affine map `x W + b` with `W` of shape `in x out`.
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn new<S: Scalar>(
        eng: &mut Engine<S>,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = eng.add_param(
            &format!("{prefix}.w"),
            glorot_uniform(fan_in, fan_out, rng),
            true,
        )?;
        let b = eng.add_param(&format!("{prefix}.b"), Tensor::zeros(1, fan_out), true)?;
        Ok(Linear { w, b })
    }

    pub fn forward<S: Scalar>(&self, eng: &mut Engine<S>, x: Var) -> Result<Var> {
        let y = eng.matmul(x, self.w)?;
        eng.add_row(y, self.b)
    }
}

/// Per-row layer normalization with learned gain and bias.
pub struct LayerNorm {
    pub gain: Var,
    pub bias: Var,
}

impl LayerNorm {
    pub fn new<S: Scalar>(eng: &mut Engine<S>, prefix: &str, width: usize) -> Result<Self> {
        let gain = eng.add_param(
            &format!("{prefix}.gain"),
            Tensor::from_vec(1, width, vec![S::one(); width])?,
            true,
        )?;
        let bias = eng.add_param(&format!("{prefix}.bias"), Tensor::zeros(1, width), true)?;
        Ok(LayerNorm { gain, bias })
    }

    pub fn forward<S: Scalar>(&self, eng: &mut Engine<S>, x: Var) -> Result<Var> {
        eng.layer_norm(x, self.gain, self.bias)
    }
}

/// Two-layer position-wise feed-forward with ReLU.
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new<S: Scalar>(
        eng: &mut Engine<S>,
        prefix: &str,
        width: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(FeedForward {
            fc1: Linear::new(eng, &format!("{prefix}.fc1"), width, hidden, rng)?,
            fc2: Linear::new(eng, &format!("{prefix}.fc2"), hidden, width, rng)?,
        })
    }

    pub fn forward<S: Scalar>(&self, eng: &mut Engine<S>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(eng, x)?;
        let h = eng.relu(h)?;
        self.fc2.forward(eng, h)
    }
}

/// Multi-head attention: shared projections, heads split along the feature
/// axis, concatenated and re-projected.
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar>(
        eng: &mut Engine<S>,
        prefix: &str,
        width: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!(
                "width {width} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(eng, &format!("{prefix}.wq"), width, width, rng)?,
            wk: Linear::new(eng, &format!("{prefix}.wk"), width, width, rng)?,
            wv: Linear::new(eng, &format!("{prefix}.wv"), width, width, rng)?,
            wo: Linear::new(eng, &format!("{prefix}.wo"), width, width, rng)?,
            heads,
            head_dim: width / heads,
        })
    }

    /// `query` attends over `kv`. Self-attention passes the same Var twice.
    pub fn forward<S: Scalar>(
        &self,
        eng: &mut Engine<S>,
        query: Var,
        kv: Var,
        mask: Option<&Mask>,
    ) -> Result<Var> {
        let q = self.wq.forward(eng, query)?;
        let k = self.wk.forward(eng, kv)?;
        let v = self.wv.forward(eng, kv)?;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * self.head_dim;
            let qh = eng.slice_cols(q, start, self.head_dim)?;
            let kh = eng.slice_cols(k, start, self.head_dim)?;
            let vh = eng.slice_cols(v, start, self.head_dim)?;
            let (ctx, _w) = attention(eng, qh, kh, vh, mask)?;
            outs.push(ctx);
        }
        let cat = eng.concat_cols(&outs)?;
        self.wo.forward(eng, cat)
    }
}

/// Lookup table of row embeddings.
pub struct Embedding {
    pub table: Var,
}

impl Embedding {
    pub fn new<S: Scalar>(
        eng: &mut Engine<S>,
        prefix: &str,
        vocab: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let table = eng.add_param(
            &format!("{prefix}.table"),
            glorot_uniform(vocab, dim, rng),
            true,
        )?;
        Ok(Embedding { table })
    }

    pub fn forward<S: Scalar>(&self, eng: &mut Engine<S>, ids: &[usize]) -> Result<Var> {
        eng.embed(self.table, ids)
    }
}

/// Fixed sinusoidal positional table, `len x width`, added to embeddings.
pub fn sinusoidal_table<S: Scalar>(len: usize, width: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(len * width);
    for pos in 0..len {
        for i in 0..width {
            let exponent = (2 * (i / 2)) as f64 / width as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            data.push(S::from_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::from_vec(len, width, data).expect("sized by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_forward_shapes_and_bias() {
        let mut eng = Engine::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::new(&mut eng, "l", 3, 2, &mut rng).unwrap();
        // overwrite with known values
        eng.load_param("l.w", 3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0])
            .unwrap();
        eng.load_param("l.b", 1, 2, vec![0.5, -0.5]).unwrap();
        let x = eng
            .leaf(Tensor::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        let y = lin.forward(&mut eng, x).unwrap();
        assert_eq!(eng.value(y).data(), &[1.0 + 3.0 + 0.5, 2.0 + 3.0 - 0.5]);
    }

    #[test]
    fn mha_rejects_indivisible_width() {
        let mut eng = Engine::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(MultiHeadAttention::new(&mut eng, "a", 10, 3, &mut rng).is_err());
    }

    #[test]
    fn mha_output_shape() {
        let mut eng = Engine::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mha = MultiHeadAttention::new(&mut eng, "a", 8, 2, &mut rng).unwrap();
        let x = eng.leaf(Tensor::zeros(5, 8)).unwrap();
        let y = mha.forward(&mut eng, x, x, None).unwrap();
        assert_eq!(eng.value(y).shape(), (5, 8));
    }

    #[test]
    fn sinusoidal_first_row_alternates_zero_one() {
        let t: Tensor<f64> = sinusoidal_table(4, 6);
        for i in 0..6 {
            let want = if i % 2 == 0 { 0.0 } else { 1.0 };
            assert!((t.at(0, i) - want).abs() < 1e-12);
        }
        // position 1, dim 0: sin(1)
        assert!((t.at(1, 0) - 1.0f64.sin()).abs() < 1e-12);
    }
}
