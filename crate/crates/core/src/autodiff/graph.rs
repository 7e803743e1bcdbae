use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// `x[m×n] + b[n]` broadcast over rows.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<S>),
    Affine(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Option<Vec<S>>,
        probs: Vec<S>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<S>,
        pos_weight: S,
    },
    Sum(Var),
    Mean(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    GradReverse(Var, S),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// A tape of tensor operations supporting one reverse-mode sweep.
///
/// Nodes are appended in evaluation order, so the tape is its own
/// topological order and `backward` walks it once from the end.
#[derive(Debug, Default)]
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    bound: HashMap<String, Var>,
    bound_order: Vec<String>,
    grads: Vec<Option<Vec<S>>>,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn stable_sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (e + S::one())
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            bound: HashMap::new(),
            bound_order: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A leaf that participates in differentiation.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds a named parameter as a differentiable leaf, once per graph.
    pub fn param(&mut self, params: &Params<S>, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| Error::Index(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.input(t);
        self.bound.insert(name.to_string(), v);
        self.bound_order.push(name.to_string());
        Ok(v)
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound_order
            .iter()
            .map(move |n| (n.as_str(), self.bound[n.as_str()]))
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(format!("{what}: expected a matrix, got shape {s:?}"))),
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul lhs")?;
        let (k2, n) = self.matrix_dims(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: inner extents {k} and {k2} differ"
            )));
        }
        let mut out = vec![S::zero(); m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a[m×k] · b[n×k]ᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul_nt lhs")?;
        let (n, k2) = self.matrix_dims(b, "matmul_nt rhs")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul_nt: inner extents {k} and {k2} differ"
            )));
        }
        let mut out = vec![S::zero(); m * n];
        gemm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(S) -> S) -> Tensor<S> {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims2(x);
        if self.value(bias).len() != c {
            return Err(Error::dim(format!(
                "add_row: bias of length {} for rows of width {c}",
                self.value(bias).len()
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for i in 0..r {
            for (o, &bv) in out[i * c..(i + 1) * c].iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddRow(x, bias), rg))
    }

    /// Elementwise product with a non-differentiable tensor (masks, dropout).
    pub fn mul_const(&mut self, x: Var, c: Vec<S>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::dim("mul_const: length mismatch"));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&c)
            .map(|(&a, &b)| a * b)
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::MulConst(x, c), rg))
    }

    /// `scale · x + shift`
    pub fn affine(&mut self, x: Var, scale: S, shift: S) -> Var {
        let t = self.map(x, |v| scale * v + shift);
        let rg = self.rg(x);
        self.push(t, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, s: S) -> Var {
        self.affine(x, s, S::zero())
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -S::one(), S::zero())
    }

    /// `1 − x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -S::one(), S::one())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map(x, stable_sigmoid);
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| v.tanh());
        let rg = self.rg(x);
        self.push(t, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| if v > S::zero() { v } else { S::zero() });
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!(
                "softmax: axis {axis} out of range for shape {shape:?}"
            )));
        }
        let len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![S::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mx = S::neg_infinity();
                for j in 0..len {
                    mx = mx.max(src[idx(j)]);
                }
                let mut z = S::zero();
                for j in 0..len {
                    let e = (src[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[idx(j)] = out[idx(j)] / z;
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Row-wise layer normalisation over the last dimension.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, d) = self.dims2(x);
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::dim(format!(
                "layer_norm: gain/bias must have length {d}"
            )));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let dn = S::of(d as f64);
        let mut xhat = vec![S::zero(); r * d];
        let mut inv_std = vec![S::zero(); r];
        let mut out = vec![S::zero(); r * d];
        for i in 0..r {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
            let is = S::one() / (var + S::of(eps)).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[i * d + j] = h;
                out[i * d + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Mean over rows of `−w[y]·log softmax(logits)[y]`, log-softmax fused.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: Option<&[S]>,
    ) -> Result<Var> {
        let (n, k) = self.dims2(logits);
        if targets.len() != n {
            return Err(Error::dim(format!(
                "cross_entropy: {} targets for {n} rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Index(format!(
                "cross_entropy: target {bad} outside [0, {k})"
            )));
        }
        if let Some(w) = weights {
            if w.len() != k {
                return Err(Error::dim(format!(
                    "cross_entropy: {} class weights for {k} classes",
                    w.len()
                )));
            }
        }
        let src = self.value(logits).data();
        let mut probs = vec![S::zero(); n * k];
        let mut total = 0.0f64;
        for i in 0..n {
            let row = &src[i * k..(i + 1) * k];
            let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
            let z: S = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
            let w = weights.map_or(1.0, |w| w[targets[i]].as_f64());
            total += w * (lse - row[targets[i]]).as_f64();
        }
        let t = Tensor::scalar(S::of(total / n as f64));
        let rg = self.rg(logits);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.map(|w| w.to_vec()),
                probs,
            },
            rg,
        ))
    }

    /// Mean of `−[w·y·log σ(z) + (1−y)·log(1−σ(z))]`, fused with the sigmoid.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[S], pos_weight: S) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != targets.len() {
            return Err(Error::dim(format!(
                "bce_with_logits: {} targets for {} logits",
                targets.len(),
                z.len()
            )));
        }
        let w = pos_weight.as_f64();
        let mut total = 0.0;
        for (&zi, &yi) in z.iter().zip(targets) {
            let (zi, yi) = (zi.as_f64(), yi.as_f64());
            total += w * yi * softplus(-zi) + (1.0 - yi) * softplus(zi);
        }
        let t = Tensor::scalar(S::of(total / z.len() as f64));
        let rg = self.rg(logits);
        Ok(self.push(
            t,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                pos_weight,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(S::of(s)), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: f64 = v.data().iter().map(|v| v.as_f64()).sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(S::of(s)), Op::Mean(x), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::dim(format!(
                "slice_cols: [{start}, {}) outside width {c}",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![r, len], out)?,
            Op::SliceCols { x, start },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_cols: no inputs"));
        }
        let r = self.matrix_dims(parts[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.matrix_dims(p, "concat_cols")?;
            if pr != r {
                return Err(Error::dim(format!(
                    "concat_cols: row counts {r} and {pr} differ"
                )));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![S::zero(); r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..r {
                out[i * total + off..i * total + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![r, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(Error::dim(format!(
                "slice_rows: [{start}, {}) outside {r} rows",
                start + len
            )));
        }
        let out = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![len, c], out)?,
            Op::SliceRows { x, start },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_rows: no inputs"));
        }
        let c = self.matrix_dims(parts[0], "concat_rows")?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.matrix_dims(p, "concat_rows")?;
            if pc != c {
                return Err(Error::dim(format!(
                    "concat_rows: widths {c} and {pc} differ"
                )));
            }
            rows += pr;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, c], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Embedding lookup: row `indices[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.matrix_dims(table, "gather_rows")?;
        if indices.is_empty() {
            return Err(Error::dim("gather_rows: no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!(
                "gather_rows: index {bad} outside table of {r} rows"
            )));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![indices.len(), c], out)?,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Identity forward; the backward pass multiplies the gradient by `−λ`.
    pub fn grad_reverse(&mut self, x: Var, lambda: S) -> Var {
        let t = self.value(x).clone();
        let rg = self.rg(x);
        self.push(t, Op::GradReverse(x, lambda), rg)
    }

    /// Reverse sweep from a scalar root. Gradients from earlier sweeps are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::contract(format!(
                "backward: root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![S::one()]);
        for idx in (0..=root.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backprop_node(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad shape"))
    }

    /// Gradients of every bound parameter, zero-filled when unreached.
    pub fn param_grads(&self) -> Vec<(String, Tensor<S>)> {
        self.bound_params()
            .map(|(name, v)| {
                let g = self
                    .grad(v)
                    .unwrap_or_else(|| Tensor::zeros(self.shape(v)));
                (name.to_string(), g)
            })
            .collect()
    }

    fn backprop_node(&self, idx: usize, gy: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [S])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot =
                grads[v.0].get_or_insert_with(|| vec![S::zero(); self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| gemm_nt_acc(gy, bv, ga, m, n, k));
                acc(*b, &mut |gb| gemm_tn_acc(av, gy, gb, m, k, n));
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).0;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| gemm_acc(gy, bv, ga, m, n, k));
                acc(*b, &mut |gb| gemm_tn_acc(gy, av, gb, m, n, k));
            }
            Op::Transpose(a) => {
                let (r, c) = self.dims2(*a);
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += gy[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| add_into(g, gy));
            }
            Op::AddRow(x, b) => {
                let (r, c) = self.dims2(*x);
                acc(*x, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| {
                    for i in 0..r {
                        add_into(g, &gy[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| {
                    for (gi, &d) in g.iter_mut().zip(gy) {
                        *gi -= d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * bv[i];
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * av[i];
                    }
                });
            }
            Op::MulConst(x, c) => acc(*x, &mut |g| {
                for i in 0..g.len() {
                    g[i] += gy[i] * c[i];
                }
            }),
            Op::Affine(x, s) => acc(*x, &mut |g| {
                for i in 0..g.len() {
                    g[i] += gy[i] * *s;
                }
            }),
            Op::Sigmoid(x) => acc(*x, &mut |g| {
                for i in 0..g.len() {
                    g[i] += gy[i] * out[i] * (S::one() - out[i]);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |g| {
                for i in 0..g.len() {
                    g[i] += gy[i] * (S::one() - out[i] * out[i]);
                }
            }),
            Op::Relu(x) => acc(*x, &mut |g| {
                for i in 0..g.len() {
                    if out[i] > S::zero() {
                        g[i] += gy[i];
                    }
                }
            }),
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => acc(*x, &mut |g| {
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let mut dot = S::zero();
                        for j in 0..*len {
                            dot += gy[idx(j)] * out[idx(j)];
                        }
                        for j in 0..*len {
                            g[idx(j)] += out[idx(j)] * (gy[idx(j)] - dot);
                        }
                    }
                }
            }),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (r, d) = self.dims2(*x);
                let gv = self.value(*gain).data();
                let dn = S::of(d as f64);
                acc(*x, &mut |g| {
                    for i in 0..r {
                        let mut m1 = S::zero();
                        let mut m2 = S::zero();
                        for j in 0..d {
                            let dh = gy[i * d + j] * gv[j];
                            m1 += dh;
                            m2 += dh * xhat[i * d + j];
                        }
                        m1 = m1 / dn;
                        m2 = m2 / dn;
                        for j in 0..d {
                            let dh = gy[i * d + j] * gv[j];
                            g[i * d + j] += inv_std[i] * (dh - m1 - xhat[i * d + j] * m2);
                        }
                    }
                });
                acc(*gain, &mut |g| {
                    for i in 0..r {
                        for j in 0..d {
                            g[j] += gy[i * d + j] * xhat[i * d + j];
                        }
                    }
                });
                acc(*bias, &mut |g| {
                    for i in 0..r {
                        add_into(g, &gy[i * d..(i + 1) * d]);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let (n, k) = self.dims2(*logits);
                let scale = gy[0] / S::of(n as f64);
                acc(*logits, &mut |g| {
                    for i in 0..n {
                        let w = weights.as_ref().map_or(S::one(), |w| w[targets[i]]);
                        for j in 0..k {
                            let onehot = if j == targets[i] { S::one() } else { S::zero() };
                            g[i * k + j] += scale * w * (probs[i * k + j] - onehot);
                        }
                    }
                });
            }
            Op::BceWithLogits {
                logits,
                targets,
                pos_weight,
            } => {
                let z = self.value(*logits).data();
                let scale = gy[0] / S::of(z.len() as f64);
                acc(*logits, &mut |g| {
                    for i in 0..g.len() {
                        let s = stable_sigmoid(z[i]);
                        let y = targets[i];
                        let d = *pos_weight * y * (s - S::one()) + (S::one() - y) * s;
                        g[i] += scale * d;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |g| {
                for gi in g.iter_mut() {
                    *gi += gy[0];
                }
            }),
            Op::Mean(x) => acc(*x, &mut |g| {
                let s = gy[0] / S::of(g.len() as f64);
                for gi in g.iter_mut() {
                    *gi += s;
                }
            }),
            Op::SliceCols { x, start } => {
                let (r, c) = self.dims2(*x);
                let w = node.value.dims2().1;
                acc(*x, &mut |g| {
                    for i in 0..r {
                        add_into(&mut g[i * c + start..i * c + start + w], &gy[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.dims2().1;
                let r = node.value.dims2().0;
                let mut off = 0;
                for p in parts {
                    let w = self.dims2(*p).1;
                    acc(*p, &mut |g| {
                        for i in 0..r {
                            add_into(
                                &mut g[i * w..(i + 1) * w],
                                &gy[i * total + off..i * total + off + w],
                            );
                        }
                    });
                    off += w;
                }
            }
            Op::SliceRows { x, start } => {
                let c = self.dims2(*x).1;
                acc(*x, &mut |g| {
                    add_into(&mut g[start * c..start * c + gy.len()], gy);
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    acc(*p, &mut |g| add_into(g, &gy[off..off + n]));
                    off += n;
                }
            }
            Op::GatherRows { table, indices } => {
                let c = self.dims2(*table).1;
                acc(*table, &mut |g| {
                    for (row, &i) in indices.iter().enumerate() {
                        add_into(&mut g[i * c..(i + 1) * c], &gy[row * c..(row + 1) * c]);
                    }
                });
            }
            Op::GradReverse(x, lambda) => acc(*x, &mut |g| {
                for i in 0..g.len() {
                    g[i] -= *lambda * gy[i];
                }
            }),
        }
    }
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
