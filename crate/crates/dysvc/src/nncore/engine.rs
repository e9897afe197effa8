//! Reverse-mode tape.
//!
//! Parameters are persistent leaf nodes at the bottom of the tape; every
//! training step builds ephemeral nodes on top of them, runs [`Engine::backward`],
//! applies an optimizer update in place, and calls [`Engine::reset`] to drop
//! the ephemeral part. Values are checked for NaN/Inf after every op; a
//! non-finite value is an error, not a silent state.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nncore::linalg;
use crate::nncore::{Scalar, Tensor};

/// Handle to a node on the tape. Parameter handles stay valid across
/// [`Engine::reset`]; handles to ephemeral nodes do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Boolean attention mask, `true` = may attend.
#[derive(Debug, Clone)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allow: Vec<bool>) -> Result<Self> {
        if allow.len() != rows * cols {
            return Err(Error::Shape(format!(
                "mask needs {} entries, got {}",
                rows * cols,
                allow.len()
            )));
        }
        let mask = Mask { rows, cols, allow };
        for r in 0..rows {
            if !mask.row(r).iter().any(|&a| a) {
                return Err(Error::DegenerateMask { row: r });
            }
        }
        Ok(mask)
    }

    /// Lower-triangular mask: position `t` sees positions `0..=t`.
    pub fn causal(t: usize) -> Self {
        let mut allow = vec![false; t * t];
        for r in 0..t {
            for c in 0..=r {
                allow[r * t + c] = true;
            }
        }
        Mask {
            rows: t,
            cols: t,
            allow,
        }
    }

    #[inline]
    pub fn allows(&self, r: usize, c: usize) -> bool {
        self.allow[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.allow[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

enum Op<S: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, S),
    MatMul(Var, Var),
    Transpose(Var),
    /// Broadcast-add a `1 x d` row vector over every row of a `T x d` input.
    AddRow(Var, Var),
    Relu(Var),
    Exp(Var),
    Abs(Var),
    Clamp(Var, S, S),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: S,
    },
    Embed {
        table: Var,
        ids: Arc<[usize]>,
    },
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Arc<[Var]>),
    ConcatCols(Arc<[Var]>),
    Reshape(Var),
    SumAll(Var),
    MeanAll(Var),
    BceLogitsMean {
        logits: Var,
        targets: Arc<[S]>,
        pos_weight: S,
    },
    CrossEntropyMean {
        logits: Var,
        classes: Arc<[usize]>,
    },
    NegEntropyMean(Var),
    /// Elementwise product with a constant mask (dropout and friends).
    MulMask(Var, Arc<[S]>),
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Named persistent leaf with a trainable flag. The values live in the
/// engine's node storage; this is the bookkeeping view.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub var: Var,
    pub trainable: bool,
}

/// One exported parameter: `(name, rows, cols, values)`, the unit returned
/// by [`Engine::export_params`] and accepted by [`Engine::import_params`].
pub type ExportedParam<S> = (String, usize, usize, Vec<S>);

pub struct Engine<S: Scalar> {
    nodes: Vec<Node<S>>,
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
    persistent: usize,
}

impl<S: Scalar> Default for Engine<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Engine<S> {
    pub fn new() -> Self {
        Engine {
            nodes: Vec::new(),
            params: Vec::new(),
            by_name: HashMap::new(),
            persistent: 0,
        }
    }

    /// Register a persistent parameter. Only legal while the tape holds no
    /// ephemeral nodes (i.e. before building or right after `reset`).
    pub fn add_param(&mut self, name: &str, tensor: Tensor<S>, trainable: bool) -> Result<Var> {
        assert_eq!(
            self.nodes.len(),
            self.persistent,
            "parameters must be added on a clean tape"
        );
        if self.by_name.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        tensor.check_finite(&format!("parameter {name}"))?;
        let var = Var(self.nodes.len());
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad: trainable,
        });
        self.persistent = self.nodes.len();
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            var,
            trainable,
        });
        Ok(var)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param(&self, idx: usize) -> &Parameter {
        &self.params[idx]
    }

    pub fn param_by_name(&self, name: &str) -> Option<&Parameter> {
        self.by_name.get(name).map(|&i| &self.params[i])
    }

    pub fn param_tensor(&self, idx: usize) -> &Tensor<S> {
        &self.nodes[self.params[idx].var.0].value
    }

    pub fn param_tensor_mut(&mut self, idx: usize) -> &mut Tensor<S> {
        &mut self.nodes[self.params[idx].var.0].value
    }

    /// Flip the trainable flag; requires a clean tape so freezing can never
    /// race a half-built step.
    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        assert_eq!(self.nodes.len(), self.persistent, "freeze on a clean tape");
        let idx = *self
            .by_name
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        self.params[idx].trainable = trainable;
        let var = self.params[idx].var;
        self.nodes[var.0].requires_grad = trainable;
        Ok(())
    }

    /// Apply [`Engine::set_trainable`] to every parameter whose name starts
    /// with `prefix`. Returns how many matched.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) -> usize {
        let names: Vec<String> = self
            .params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.name.clone())
            .collect();
        for n in &names {
            self.set_trainable(n, trainable).expect("known name");
        }
        names.len()
    }

    /// Overwrite a parameter's values (checkpoint restore).
    pub fn load_param(&mut self, name: &str, rows: usize, cols: usize, data: Vec<S>) -> Result<()> {
        let idx = *self
            .by_name
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let var = self.params[idx].var;
        let t = &self.nodes[var.0].value;
        if t.shape() != (rows, cols) {
            return Err(Error::Shape(format!(
                "parameter {name:?} is {:?}, checkpoint has {}x{}",
                t.shape(),
                rows,
                cols
            )));
        }
        self.nodes[var.0].value = Tensor::from_vec(rows, cols, data)?;
        Ok(())
    }

    /// Drop all ephemeral nodes and clear every gradient buffer.
    pub fn reset(&mut self) {
        self.nodes.truncate(self.persistent);
        for n in &mut self.nodes {
            n.value.clear_grad();
        }
    }

    /// Copy of every parameter's values, sorted by name — the unit of
    /// checkpointing and best-epoch selection.
    pub fn export_params(&self) -> Vec<ExportedParam<S>> {
        let mut out: Vec<ExportedParam<S>> = self
            .params
            .iter()
            .map(|p| {
                let t = &self.nodes[p.var.0].value;
                (p.name.clone(), t.rows(), t.cols(), t.data().to_vec())
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Restore values exported by [`Engine::export_params`]. Every record
    /// must name a known parameter of matching shape.
    pub fn import_params(&mut self, params: &[ExportedParam<S>]) -> Result<()> {
        for (name, rows, cols, data) in params {
            self.load_param(name, *rows, *cols, data.clone())?;
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].value.grad()
    }

    pub fn scalar_value(&self, v: Var) -> S {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value.data()[0]
    }

    /// Ephemeral constant leaf (inputs, targets, positional tables).
    pub fn leaf(&mut self, t: Tensor<S>) -> Result<Var> {
        t.check_finite("leaf")?;
        let var = Var(self.nodes.len());
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Ok(var)
    }

    /// Copy of `x`'s value with the gradient path cut.
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        let t = self.nodes[x.0].value.clone();
        let mut t = t;
        t.clear_grad();
        self.leaf(t)
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool, context: &str) -> Result<Var> {
        value.check_finite(context)?;
        let var = Var(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(var)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn t(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = Tensor::from_vec(
            self.t(a).rows(),
            self.t(a).cols(),
            self.t(a)
                .data()
                .iter()
                .zip(self.t(b).data())
                .map(|(&x, &y)| x + y)
                .collect(),
        )?;
        let rg = self.needs(a) || self.needs(b);
        self.push(t, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = Tensor::from_vec(
            self.t(a).rows(),
            self.t(a).cols(),
            self.t(a)
                .data()
                .iter()
                .zip(self.t(b).data())
                .map(|(&x, &y)| x - y)
                .collect(),
        )?;
        let rg = self.needs(a) || self.needs(b);
        self.push(t, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = Tensor::from_vec(
            self.t(a).rows(),
            self.t(a).cols(),
            self.t(a)
                .data()
                .iter()
                .zip(self.t(b).data())
                .map(|(&x, &y)| x * y)
                .collect(),
        )?;
        let rg = self.needs(a) || self.needs(b);
        self.push(t, Op::Mul(a, b), rg, "mul")
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Result<Var> {
        let t = self.t(a).map(|v| v + c);
        let rg = self.needs(a);
        self.push(t, Op::AddScalar(a), rg, "add_scalar")
    }

    pub fn mul_scalar(&mut self, a: Var, c: S) -> Result<Var> {
        let t = self.t(a).map(|v| v * c);
        let rg = self.needs(a);
        self.push(t, Op::MulScalar(a, c), rg, "mul_scalar")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.t(a).map(|v| if v > S::zero() { v } else { S::zero() });
        let rg = self.needs(a);
        self.push(t, Op::Relu(a), rg, "relu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.t(a).map(|v| v.exp());
        let rg = self.needs(a);
        self.push(t, Op::Exp(a), rg, "exp")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let t = self.t(a).map(|v| v.abs());
        let rg = self.needs(a);
        self.push(t, Op::Abs(a), rg, "abs")
    }

    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Result<Var> {
        let t = self.t(a).map(|v| if v < lo { lo } else if v > hi { hi } else { v });
        let rg = self.needs(a);
        self.push(t, Op::Clamp(a, lo, hi), rg, "clamp")
    }

    pub fn mul_mask(&mut self, a: Var, mask: Arc<[S]>) -> Result<Var> {
        if mask.len() != self.t(a).len() {
            return Err(Error::Shape("mask length mismatch".into()));
        }
        let t = Tensor::from_vec(
            self.t(a).rows(),
            self.t(a).cols(),
            self.t(a)
                .data()
                .iter()
                .zip(mask.iter())
                .map(|(&x, &m)| x * m)
                .collect(),
        )?;
        let rg = self.needs(a);
        self.push(t, Op::MulMask(a, mask), rg, "mul_mask")
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// `1/(1-rate)`. Deterministic given the caller's seeded RNG.
    pub fn dropout(
        &mut self,
        a: Var,
        rate: f64,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Var> {
        use rand::Rng;
        if rate <= 0.0 {
            return Ok(a);
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate}")));
        }
        let keep = S::from_f64(1.0 / (1.0 - rate));
        let mask: Arc<[S]> = (0..self.t(a).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        self.mul_mask(a, mask)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.t(a).shape();
        let (kb, n) = self.t(b).shape();
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul {}x{} * {}x{}",
                m, ka, kb, n
            )));
        }
        let mut out = vec![S::zero(); m * n];
        linalg::matmul(self.t(a).data(), self.t(b).data(), m, ka, n, &mut out);
        let t = Tensor::from_vec(m, n, out)?;
        let rg = self.needs(a) || self.needs(b);
        self.push(t, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.t(a).shape();
        let t = Tensor::from_vec(c, r, linalg::transpose(self.t(a).data(), r, c))?;
        let rg = self.needs(a);
        self.push(t, Op::Transpose(a), rg, "transpose")
    }

    /// `x[T x d] + v[1 x d]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (rows, d) = self.t(x).shape();
        if self.t(v).shape() != (1, d) {
            return Err(Error::Shape(format!(
                "add_row: vector {:?} vs width {}",
                self.t(v).shape(),
                d
            )));
        }
        let vv = self.t(v).data().to_vec();
        let mut data = Vec::with_capacity(rows * d);
        for r in 0..rows {
            for (c, bias) in vv.iter().enumerate() {
                data.push(self.t(x).at(r, c) + *bias);
            }
        }
        let t = Tensor::from_vec(rows, d, data)?;
        let rg = self.needs(x) || self.needs(v);
        self.push(t, Op::AddRow(x, v), rg, "add_row")
    }

    // ---- shape plumbing ----

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.t(a).shape();
        if start + len > rows || len == 0 {
            return Err(Error::Shape(format!(
                "slice_rows {start}..{} of {rows}",
                start + len
            )));
        }
        let data = self.t(a).data()[start * cols..(start + len) * cols].to_vec();
        let t = Tensor::from_vec(len, cols, data)?;
        let rg = self.needs(a);
        self.push(t, Op::SliceRows(a, start), rg, "slice_rows")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.t(a).shape();
        if start + len > cols || len == 0 {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{} of {cols}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            let row = self.t(a).row_slice(r);
            data.extend_from_slice(&row[start..start + len]);
        }
        let t = Tensor::from_vec(rows, len, data)?;
        let rg = self.needs(a);
        self.push(t, Op::SliceCols(a, start), rg, "slice_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_rows".into()));
        }
        let cols = self.t(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.t(p).cols() != cols {
                return Err(Error::Shape("concat_rows column mismatch".into()));
            }
            rows += self.t(p).rows();
            data.extend_from_slice(self.t(p).data());
        }
        let t = Tensor::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(t, Op::ConcatRows(parts.into()), rg, "concat_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_cols".into()));
        }
        let rows = self.t(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.t(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                if self.t(p).rows() != rows {
                    return Err(Error::Shape("concat_cols row mismatch".into()));
                }
                data.extend_from_slice(self.t(p).row_slice(r));
            }
        }
        let t = Tensor::from_vec(rows, total, data)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(t, Op::ConcatCols(parts.into()), rg, "concat_cols")
    }

    /// Row-major reinterpretation; element order is unchanged.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        if rows * cols != self.t(a).len() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {}x{}",
                self.t(a).shape(),
                rows,
                cols
            )));
        }
        let t = Tensor::from_vec(rows, cols, self.t(a).data().to_vec())?;
        let rg = self.needs(a);
        self.push(t, Op::Reshape(a), rg, "reshape")
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s: S = self.t(a).data().iter().copied().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg, "sum_all")
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.t(a).len();
        if n == 0 {
            return Err(Error::EmptyInput("mean_all".into()));
        }
        let s: S = self.t(a).data().iter().copied().sum();
        let m = s / S::from_f64(n as f64);
        let rg = self.needs(a);
        self.push(Tensor::scalar(m), Op::MeanAll(a), rg, "mean_all")
    }

    // ---- fused nonlinearities ----

    /// Masked row softmax; masked entries come out exactly zero. A row with
    /// no unmasked entry is a degenerate-mask error.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var> {
        let (rows, cols) = self.t(a).shape();
        if let Some(m) = mask {
            if m.shape() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "mask {:?} vs scores {}x{}",
                    m.shape(),
                    rows,
                    cols
                )));
            }
        }
        let mut data = vec![S::zero(); rows * cols];
        for r in 0..rows {
            let row = self.t(a).row_slice(r);
            let mut max = S::neg_infinity();
            let mut any = false;
            for (c, &v) in row.iter().enumerate() {
                if mask.is_none_or(|m| m.allows(r, c)) {
                    any = true;
                    if v > max {
                        max = v;
                    }
                }
            }
            if !any {
                return Err(Error::DegenerateMask { row: r });
            }
            let mut denom = S::zero();
            for (c, &v) in row.iter().enumerate() {
                if mask.is_none_or(|m| m.allows(r, c)) {
                    let e = (v - max).exp();
                    data[r * cols + c] = e;
                    denom = denom + e;
                }
            }
            for c in 0..cols {
                data[r * cols + c] = data[r * cols + c] / denom;
            }
        }
        let t = Tensor::from_vec(rows, cols, data)?;
        let rg = self.needs(a);
        self.push(t, Op::SoftmaxRows(a), rg, "softmax_rows")
    }

    /// Per-row normalization to zero mean / unit variance, then an affine
    /// `gain * xhat + bias` with `gain`, `bias` of shape `1 x d`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (rows, d) = self.t(x).shape();
        if self.t(gain).shape() != (1, d) || self.t(bias).shape() != (1, d) {
            return Err(Error::Shape("layer_norm gain/bias width".into()));
        }
        let eps = S::from_f64(1e-5);
        let mut data = Vec::with_capacity(rows * d);
        let gdata = self.t(gain).data();
        let bdata = self.t(bias).data();
        for r in 0..rows {
            let row = self.t(x).row_slice(r);
            let (mean, inv) = row_norm_stats(row, eps);
            for ((&v, &g), &b) in row.iter().zip(gdata).zip(bdata) {
                let xhat = (v - mean) * inv;
                data.push(g * xhat + b);
            }
        }
        let t = Tensor::from_vec(rows, d, data)?;
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(t, Op::LayerNorm { x, gain, bias, eps }, rg, "layer_norm")
    }

    /// Gather rows of `table` by index.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.t(table).shape();
        if ids.is_empty() {
            return Err(Error::EmptyInput("embed with no ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Shape(format!("embedding id {id} >= vocab {vocab}")));
            }
            data.extend_from_slice(self.t(table).row_slice(id));
        }
        let t = Tensor::from_vec(ids.len(), dim, data)?;
        let rg = self.needs(table);
        self.push(
            t,
            Op::Embed {
                table,
                ids: ids.into(),
            },
            rg,
            "embed",
        )
    }

    // ---- fused losses ----

    /// Mean binary cross-entropy over logits, with a positive-class weight.
    pub fn bce_with_logits_mean(
        &mut self,
        logits: Var,
        targets: &[S],
        pos_weight: S,
    ) -> Result<Var> {
        if targets.len() != self.t(logits).len() {
            return Err(Error::Shape("bce target length".into()));
        }
        let mut total = S::zero();
        for (&x, &t) in self.t(logits).data().iter().zip(targets) {
            // -pw*t*log(sigmoid(x)) - (1-t)*log(1-sigmoid(x))
            total = total + pos_weight * t * softplus(-x) + (S::one() - t) * softplus(x);
        }
        let n = S::from_f64(targets.len() as f64);
        let t = Tensor::scalar(total / n);
        let rg = self.needs(logits);
        self.push(
            t,
            Op::BceLogitsMean {
                logits,
                targets: targets.into(),
                pos_weight,
            },
            rg,
            "bce_with_logits",
        )
    }

    /// Mean softmax cross-entropy over rows against integer class labels.
    pub fn cross_entropy_mean(&mut self, logits: Var, classes: &[usize]) -> Result<Var> {
        let (rows, cols) = self.t(logits).shape();
        if classes.len() != rows {
            return Err(Error::Shape("cross_entropy label count".into()));
        }
        let mut total = S::zero();
        for (r, &cls) in classes.iter().enumerate() {
            if cls >= cols {
                return Err(Error::Shape(format!("class {cls} >= {cols}")));
            }
            let row = self.t(logits).row_slice(r);
            total = total + (log_sum_exp(row) - row[cls]);
        }
        let t = Tensor::scalar(total / S::from_f64(rows as f64));
        let rg = self.needs(logits);
        self.push(
            t,
            Op::CrossEntropyMean {
                logits,
                classes: classes.into(),
            },
            rg,
            "cross_entropy",
        )
    }

    /// Mean over rows of `sum_j p_j ln p_j` (negative entropy of the row
    /// softmax). Minimizing this pushes the distribution toward uniform.
    pub fn neg_entropy_mean(&mut self, logits: Var) -> Result<Var> {
        let (rows, _cols) = self.t(logits).shape();
        let mut total = S::zero();
        for r in 0..rows {
            let row = self.t(logits).row_slice(r);
            let lse = log_sum_exp(row);
            let mut f = S::zero();
            for &z in row {
                let lp = z - lse;
                f = f + lp.exp() * lp;
            }
            total = total + f;
        }
        let t = Tensor::scalar(total / S::from_f64(rows as f64));
        let rg = self.needs(logits);
        self.push(t, Op::NegEntropyMean(logits), rg, "neg_entropy")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.t(a).shape() != self.t(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.t(a).shape(),
                self.t(b).shape()
            )));
        }
        Ok(())
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into the
    /// `grad` buffers of every node on a differentiable path; frozen
    /// parameters receive none.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.t(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.t(loss).shape()
            )));
        }
        self.nodes[loss.0].value.grad_mut()[0] = S::one();

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad || node.value.grad().is_none() {
                continue;
            }
            let g = node.value.grad().unwrap().to_vec();
            let out_value = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(before, *a, g.iter().copied());
                    acc(before, *b, g.iter().copied());
                }
                Op::Sub(a, b) => {
                    acc(before, *a, g.iter().copied());
                    acc(before, *b, g.iter().map(|&v| -v));
                }
                Op::Mul(a, b) => {
                    let bv: Vec<S> = before[b.0].value.data().to_vec();
                    let av: Vec<S> = before[a.0].value.data().to_vec();
                    acc(before, *a, g.iter().zip(&bv).map(|(&gv, &v)| gv * v));
                    acc(before, *b, g.iter().zip(&av).map(|(&gv, &v)| gv * v));
                }
                Op::AddScalar(a) => acc(before, *a, g.iter().copied()),
                Op::MulScalar(a, c) => {
                    let c = *c;
                    acc(before, *a, g.iter().map(move |&v| v * c));
                }
                Op::MatMul(a, b) => {
                    let (m, k) = before[a.0].value.shape();
                    let n = before[b.0].value.cols();
                    // dA = G * B^T
                    let bt = linalg::transpose(before[b.0].value.data(), k, n);
                    let mut da = vec![S::zero(); m * k];
                    linalg::matmul(&g, &bt, m, n, k, &mut da);
                    acc(before, *a, da.into_iter());
                    // dB = A^T * G
                    let at = linalg::transpose(before[a.0].value.data(), m, k);
                    let mut db = vec![S::zero(); k * n];
                    linalg::matmul(&at, &g, k, m, n, &mut db);
                    acc(before, *b, db.into_iter());
                }
                Op::Transpose(a) => {
                    let (r, c) = out_value.shape();
                    acc(before, *a, linalg::transpose(&g, r, c).into_iter());
                }
                Op::AddRow(x, v) => {
                    let d = before[v.0].value.cols();
                    acc(before, *x, g.iter().copied());
                    let mut gv = vec![S::zero(); d];
                    for (i, &gi) in g.iter().enumerate() {
                        gv[i % d] = gv[i % d] + gi;
                    }
                    acc(before, *v, gv.into_iter());
                }
                Op::Relu(a) => {
                    let xv: Vec<S> = before[a.0].value.data().to_vec();
                    acc(
                        before,
                        *a,
                        g.iter()
                            .zip(&xv)
                            .map(|(&gv, &x)| if x > S::zero() { gv } else { S::zero() }),
                    );
                }
                Op::Exp(a) => {
                    let yv: Vec<S> = out_value.data().to_vec();
                    acc(before, *a, g.iter().zip(&yv).map(|(&gv, &y)| gv * y));
                }
                Op::Abs(a) => {
                    let xv: Vec<S> = before[a.0].value.data().to_vec();
                    acc(
                        before,
                        *a,
                        g.iter().zip(&xv).map(|(&gv, &x)| {
                            if x > S::zero() {
                                gv
                            } else if x < S::zero() {
                                -gv
                            } else {
                                S::zero()
                            }
                        }),
                    );
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let xv: Vec<S> = before[a.0].value.data().to_vec();
                    acc(
                        before,
                        *a,
                        g.iter().zip(&xv).map(move |(&gv, &x)| {
                            if x > lo && x < hi {
                                gv
                            } else {
                                S::zero()
                            }
                        }),
                    );
                }
                Op::MulMask(a, mask) => {
                    let mask = mask.clone();
                    acc(before, *a, g.iter().zip(mask.iter()).map(|(&gv, &m)| gv * m));
                }
                Op::SoftmaxRows(a) => {
                    let (rows, cols) = out_value.shape();
                    let y = out_value.data();
                    let mut gx = vec![S::zero(); rows * cols];
                    for r in 0..rows {
                        let ys = &y[r * cols..(r + 1) * cols];
                        let gs = &g[r * cols..(r + 1) * cols];
                        let dot: S = ys.iter().zip(gs).map(|(&yv, &gv)| yv * gv).sum();
                        for c in 0..cols {
                            gx[r * cols + c] = ys[c] * (gs[c] - dot);
                        }
                    }
                    acc(before, *a, gx.into_iter());
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (rows, d) = before[x.0].value.shape();
                    let eps = *eps;
                    let gain_v: Vec<S> = before[gain.0].value.data().to_vec();
                    let mut gx = vec![S::zero(); rows * d];
                    let mut ggain = vec![S::zero(); d];
                    let mut gbias = vec![S::zero(); d];
                    let dn = S::from_f64(d as f64);
                    for r in 0..rows {
                        let row = before[x.0].value.row_slice(r);
                        let (mean, inv) = row_norm_stats(row, eps);
                        let gs = &g[r * d..(r + 1) * d];
                        let mut sum_gxh = S::zero();
                        let mut sum_gxh_xhat = S::zero();
                        let mut xhat = vec![S::zero(); d];
                        for c in 0..d {
                            xhat[c] = (row[c] - mean) * inv;
                            let gxh = gs[c] * gain_v[c];
                            sum_gxh = sum_gxh + gxh;
                            sum_gxh_xhat = sum_gxh_xhat + gxh * xhat[c];
                            ggain[c] = ggain[c] + gs[c] * xhat[c];
                            gbias[c] = gbias[c] + gs[c];
                        }
                        let mean_gxh = sum_gxh / dn;
                        let mean_gxh_xhat = sum_gxh_xhat / dn;
                        for c in 0..d {
                            let gxh = gs[c] * gain_v[c];
                            gx[r * d + c] = inv * (gxh - mean_gxh - xhat[c] * mean_gxh_xhat);
                        }
                    }
                    acc(before, *x, gx.into_iter());
                    acc(before, *gain, ggain.into_iter());
                    acc(before, *bias, gbias.into_iter());
                }
                Op::Embed { table, ids } => {
                    let dim = before[table.0].value.cols();
                    let rows = before[table.0].value.rows();
                    let mut gt = vec![S::zero(); rows * dim];
                    for (i, &id) in ids.iter().enumerate() {
                        for c in 0..dim {
                            gt[id * dim + c] = gt[id * dim + c] + g[i * dim + c];
                        }
                    }
                    acc(before, *table, gt.into_iter());
                }
                Op::SliceRows(a, start) => {
                    let cols = before[a.0].value.cols();
                    let total = before[a.0].value.len();
                    let mut ga = vec![S::zero(); total];
                    ga[start * cols..start * cols + g.len()].copy_from_slice(&g);
                    acc(before, *a, ga.into_iter());
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = before[a.0].value.shape();
                    let w = out_value.cols();
                    let mut ga = vec![S::zero(); rows * cols];
                    for r in 0..rows {
                        for c in 0..w {
                            ga[r * cols + start + c] = g[r * w + c];
                        }
                    }
                    acc(before, *a, ga.into_iter());
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let cols = out_value.cols();
                    let mut offset = 0;
                    for &p in parts.iter() {
                        let rows = before[p.0].value.rows();
                        let seg = g[offset * cols..(offset + rows) * cols].to_vec();
                        acc(before, p, seg.into_iter());
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let rows = out_value.rows();
                    let total = out_value.cols();
                    let mut offset = 0;
                    for &p in parts.iter() {
                        let w = before[p.0].value.cols();
                        let mut seg = vec![S::zero(); rows * w];
                        for r in 0..rows {
                            seg[r * w..(r + 1) * w]
                                .copy_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        acc(before, p, seg.into_iter());
                        offset += w;
                    }
                }
                Op::Reshape(a) => acc(before, *a, g.iter().copied()),
                Op::SumAll(a) => {
                    let n = before[a.0].value.len();
                    let gv = g[0];
                    acc(before, *a, std::iter::repeat_n(gv, n));
                }
                Op::MeanAll(a) => {
                    let n = before[a.0].value.len();
                    let gv = g[0] / S::from_f64(n as f64);
                    acc(before, *a, std::iter::repeat_n(gv, n));
                }
                Op::BceLogitsMean {
                    logits,
                    targets,
                    pos_weight,
                } => {
                    let targets = targets.clone();
                    let pw = *pos_weight;
                    let n = S::from_f64(targets.len() as f64);
                    let gv = g[0] / n;
                    let xv: Vec<S> = before[logits.0].value.data().to_vec();
                    acc(
                        before,
                        *logits,
                        xv.iter().zip(targets.iter()).map(move |(&x, &t)| {
                            let s = sigmoid(x);
                            gv * (-pw * t * (S::one() - s) + (S::one() - t) * s)
                        }),
                    );
                }
                Op::CrossEntropyMean { logits, classes } => {
                    let classes = classes.clone();
                    let (rows, cols) = before[logits.0].value.shape();
                    let gv = g[0] / S::from_f64(rows as f64);
                    let mut gl = vec![S::zero(); rows * cols];
                    for (r, &cls) in classes.iter().enumerate() {
                        let row = before[logits.0].value.row_slice(r);
                        let lse = log_sum_exp(row);
                        for c in 0..cols {
                            let p = (row[c] - lse).exp();
                            let delta = if c == cls { S::one() } else { S::zero() };
                            gl[r * cols + c] = gv * (p - delta);
                        }
                    }
                    acc(before, *logits, gl.into_iter());
                }
                Op::NegEntropyMean(a) => {
                    let (rows, cols) = before[a.0].value.shape();
                    let gv = g[0] / S::from_f64(rows as f64);
                    let mut gl = vec![S::zero(); rows * cols];
                    for r in 0..rows {
                        let row = before[a.0].value.row_slice(r);
                        let lse = log_sum_exp(row);
                        let mut f = S::zero();
                        for &z in row {
                            let lp = z - lse;
                            f = f + lp.exp() * lp;
                        }
                        for c in 0..cols {
                            let lp = row[c] - lse;
                            gl[r * cols + c] = gv * lp.exp() * (lp - f);
                        }
                    }
                    acc(before, *a, gl.into_iter());
                }
            }
        }

        for p in &self.params {
            if let Some(g) = self.nodes[p.var.0].value.grad() {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {}", p.name)));
                }
            }
        }
        Ok(())
    }
}

/// Accumulate a gradient contribution into node `v` if it is on a
/// differentiable path.
fn acc<S: Scalar>(nodes: &mut [Node<S>], v: Var, contrib: impl Iterator<Item = S>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let g = nodes[v.0].value.grad_mut();
    for (slot, c) in g.iter_mut().zip(contrib) {
        *slot = *slot + c;
    }
}

fn row_norm_stats<S: Scalar>(row: &[S], eps: S) -> (S, S) {
    let n = S::from_f64(row.len() as f64);
    let mean = row.iter().copied().sum::<S>() / n;
    let var = row
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<S>()
        / n;
    (mean, (var + eps).sqrt().recip())
}

fn softplus<S: Scalar>(x: S) -> S {
    // max(x,0) + ln(1 + exp(-|x|)), stable at both tails
    let m = if x > S::zero() { x } else { S::zero() };
    m + (S::one() + (-x.abs()).exp()).ln()
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        (S::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let max = row.iter().copied().fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    let sum: S = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}
