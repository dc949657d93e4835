use super::kernels;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax(Var),
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Var,
    },
    ColSlice {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    L1 {
        pred: Var,
        target: Var,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    /// Accumulated gradient; only populated for leaves.
    grad: Option<Tensor<T>>,
}

/// Wengert list of every value computed during a forward pass.
///
/// Nodes are appended in evaluation order, so the list is already a
/// topological order and backward simply walks it in reverse.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Gradients are only accumulated for leaves
    /// created with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, `None` if no backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn matrix(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            &[r, c] => Ok((r, c)),
            s => Err(Error::shape(format!("{what}: expected a matrix, got {s:?}"))),
        }
    }

    fn vector(&self, v: Var, what: &str) -> Result<usize> {
        match self.shape(v) {
            &[n] => Ok(n),
            s => Err(Error::shape(format!("{what}: expected a vector, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul lhs")?;
        let (k2, n) = self.matrix(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul {m}×{k} by {k2}×{n}")));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let value = Tensor::new([m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a[m×k]`, `b[n×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul_nt lhs")?;
        let (n, k2) = self.matrix(b, "matmul_nt rhs")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul_nt {m}×{k} by ({n}×{k2})ᵀ")));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let value = Tensor::new([m, n], out)?;
        Ok(self.push(value, Op::MatMulNt(a, b), &[a, b]))
    }

    /// Adds a length-`C` bias to every row of an `R×C` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, c) = self.matrix(x, "add_bias input")?;
        let n = self.vector(b, "bias")?;
        if n != c {
            return Err(Error::shape(format!("bias of length {n} for {c} columns")));
        }
        let mut value = self.value(x).clone();
        let bias = self.value(b).data();
        for row in value.data_mut().chunks_exact_mut(c) {
            kernels::add_into(row, bias);
        }
        Ok(self.push(value, Op::AddBias(x, b), &[x, b]))
    }

    /// `y = x·W + b` with `W[Din×Dout]`, `b[Dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "add {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut value = self.value(a).clone();
        kernels::add_into(value.data_mut(), self.value(b).data());
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.push(value, Op::Tanh(x), &[x])
    }

    /// Per-row normalization to zero mean and unit variance followed by an
    /// affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.matrix(x, "layer_norm input")?;
        if self.vector(gain, "layer_norm gain")? != c || self.vector(bias, "layer_norm bias")? != c
        {
            return Err(Error::shape(format!("layer_norm affine params for {c} features")));
        }
        let eps = T::from_f64(eps);
        let n = T::from_f64(c as f64);
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / n;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new([r, c], out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let s = *self
            .shape(x)
            .last()
            .ok_or_else(|| Error::shape("softmax of a scalar"))?;
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_exact_mut(s) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let inv = T::one() / sum;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    /// Same-padded, stride-1 1-d convolution over time.
    /// `x[T×Cin]`, `kernel[K×Cin×Cout]`, `bias[Cout]`; `K` must be odd.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (t, cin) = self.matrix(x, "conv1d input")?;
        let (k, kcin, cout) = match self.shape(kernel) {
            &[k, a, b] => (k, a, b),
            s => return Err(Error::shape(format!("conv1d kernel must be K×Cin×Cout, got {s:?}"))),
        };
        if k % 2 == 0 {
            return Err(Error::shape(format!("conv1d kernel size {k} is even")));
        }
        if kcin != cin {
            return Err(Error::shape(format!("conv1d kernel expects {kcin} channels, input has {cin}")));
        }
        if self.vector(bias, "conv1d bias")? != cout {
            return Err(Error::shape("conv1d bias length"));
        }
        let mut out = vec![T::zero(); t * cout];
        for row in out.chunks_exact_mut(cout) {
            row.copy_from_slice(self.value(bias).data());
        }
        kernels::conv1d_forward(
            self.value(x).data(),
            self.value(kernel).data(),
            t,
            cin,
            cout,
            k,
            &mut out,
        );
        let value = Tensor::new([t, cout], out)?;
        Ok(self.push(value, Op::Conv1d { x, kernel, bias }, &[x, kernel, bias]))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn col_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix(x, "col_slice input")?;
        if len == 0 || start + len > c {
            return Err(Error::shape(format!("columns {start}..{} of {c}", start + len)));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for row in src.chunks_exact(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let value = Tensor::new([r, len], out)?;
        Ok(self.push(value, Op::ColSlice { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let (r, _) = self.matrix(first, "concat_cols input")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.matrix(p, "concat_cols input")?;
            if pr != r {
                return Err(Error::shape(format!("concat_cols rows {pr} vs {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new([r, total], out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_rows(&values)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Mean over rows, giving a `1×C` matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix(x, "mean_rows input")?;
        let mut out = vec![T::zero(); c];
        kernels::add_col_sums(self.value(x).data(), c, &mut out);
        let inv = T::one() / T::from_f64(r as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::new([1, c], out)?;
        Ok(self.push(value, Op::MeanRows(x), &[x]))
    }

    /// Mean absolute difference over all elements, as a scalar.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape(format!(
                "l1_loss between {:?} and {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let sum = p
            .iter()
            .zip(t)
            .fold(T::zero(), |s, (&a, &b)| s + (a - b).abs());
        let value = Tensor::scalar(sum / T::from_f64(p.len() as f64));
        Ok(self.push(value, Op::L1 { pred, target }, &[pred, target]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |s, &v| s + v);
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Reverse pass from a scalar. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }

        for (id, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[id];
            match &mut node.grad {
                Some(acc) => kernels::add_into(acc.data_mut(), &g),
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].requires_grad;
        // Returns the gradient buffer for `v`, creating it on first use.
        fn slot<'a, T: Scalar>(
            grads: &'a mut [Option<Vec<T>>],
            nodes: &[Node<T>],
            v: Var,
        ) -> &'a mut Vec<T> {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()])
        }

        match &nodes[id].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (val(a).shape()[0], val(a).shape()[1]);
                let n = val(b).shape()[1];
                if wants(a) {
                    kernels::matmul_nt(g, val(b).data(), m, n, k, slot(grads, nodes, a));
                }
                if wants(b) {
                    kernels::matmul_tn(val(a).data(), g, m, k, n, slot(grads, nodes, b));
                }
            }
            &Op::MatMulNt(a, b) => {
                let (m, k) = (val(a).shape()[0], val(a).shape()[1]);
                let n = val(b).shape()[0];
                if wants(a) {
                    kernels::matmul_nn(g, val(b).data(), m, n, k, slot(grads, nodes, a));
                }
                if wants(b) {
                    kernels::matmul_tn(g, val(a).data(), m, n, k, slot(grads, nodes, b));
                }
            }
            &Op::AddBias(x, b) => {
                if wants(x) {
                    kernels::add_into(slot(grads, nodes, x), g);
                }
                if wants(b) {
                    let c = val(b).len();
                    kernels::add_col_sums(g, c, slot(grads, nodes, b));
                }
            }
            &Op::Add(a, b) => {
                for p in [a, b] {
                    if wants(p) {
                        kernels::add_into(slot(grads, nodes, p), g);
                    }
                }
            }
            &Op::Scale(x, c) => {
                if wants(x) {
                    for (o, &gv) in slot(grads, nodes, x).iter_mut().zip(g) {
                        *o += gv * c;
                    }
                }
            }
            &Op::Relu(x) => {
                if wants(x) {
                    let xv = val(x).data();
                    for ((o, &gv), &v) in slot(grads, nodes, x).iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *o += gv;
                        }
                    }
                }
            }
            &Op::Tanh(x) => {
                if wants(x) {
                    let y = nodes[id].value.data();
                    for ((o, &gv), &yv) in slot(grads, nodes, x).iter_mut().zip(g).zip(y) {
                        *o += gv * (T::one() - yv * yv);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let c = val(gain).len();
                let gv = val(gain).data();
                if wants(x) {
                    let n = T::from_f64(c as f64);
                    let dx = slot(grads, nodes, x);
                    let mut dxhat = vec![T::zero(); c];
                    for (i, inv) in inv_std.iter().enumerate() {
                        let gr = &g[i * c..(i + 1) * c];
                        let xh = &xhat[i * c..(i + 1) * c];
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for j in 0..c {
                            dxhat[j] = gr[j] * gv[j];
                            sum_d += dxhat[j];
                            sum_dx += dxhat[j] * xh[j];
                        }
                        let scale = *inv / n;
                        for j in 0..c {
                            dx[i * c + j] += scale * (n * dxhat[j] - sum_d - xh[j] * sum_dx);
                        }
                    }
                }
                if wants(gain) {
                    let dg = slot(grads, nodes, gain);
                    for (gr, xh) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            dg[j] += gr[j] * xh[j];
                        }
                    }
                }
                if wants(bias) {
                    kernels::add_col_sums(g, c, slot(grads, nodes, bias));
                }
            }
            &Op::Softmax(x) => {
                if wants(x) {
                    let y = nodes[id].value.data();
                    let s = *nodes[id].value.shape().last().unwrap();
                    let dx = slot(grads, nodes, x);
                    for ((yr, gr), dr) in y
                        .chunks_exact(s)
                        .zip(g.chunks_exact(s))
                        .zip(dx.chunks_exact_mut(s))
                    {
                        let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&p, &q)| a + p * q);
                        for j in 0..s {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            &Op::Conv1d { x, kernel, bias } => {
                let (t, cin) = (val(x).shape()[0], val(x).shape()[1]);
                let (k, cout) = (val(kernel).shape()[0], val(kernel).shape()[2]);
                let mut dx = wants(x).then(|| vec![T::zero(); t * cin]);
                let mut dk = wants(kernel).then(|| vec![T::zero(); k * cin * cout]);
                kernels::conv1d_backward(
                    val(x).data(),
                    val(kernel).data(),
                    g,
                    t,
                    cin,
                    cout,
                    k,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    kernels::add_into(slot(grads, nodes, x), &dx);
                }
                if let Some(dk) = dk {
                    kernels::add_into(slot(grads, nodes, kernel), &dk);
                }
                if wants(bias) {
                    kernels::add_col_sums(g, cout, slot(grads, nodes, bias));
                }
            }
            &Op::ColSlice { x, start } => {
                if wants(x) {
                    let c = val(x).shape()[1];
                    let len = nodes[id].value.shape()[1];
                    let dx = slot(grads, nodes, x);
                    for (dr, gr) in dx.chunks_exact_mut(c).zip(g.chunks_exact(len)) {
                        kernels::add_into(&mut dr[start..start + len], gr);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = nodes[id].value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).shape()[1];
                    if wants(p) {
                        let dp = slot(grads, nodes, p);
                        for (dr, gr) in dp.chunks_exact_mut(w).zip(g.chunks_exact(total)) {
                            kernels::add_into(dr, &gr[offset..offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    if wants(p) {
                        kernels::add_into(slot(grads, nodes, p), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            &Op::MeanRows(x) => {
                if wants(x) {
                    let (r, c) = (val(x).shape()[0], val(x).shape()[1]);
                    let inv = T::one() / T::from_f64(r as f64);
                    let scaled: Vec<T> = g.iter().map(|&v| v * inv).collect();
                    for dr in slot(grads, nodes, x).chunks_exact_mut(c) {
                        kernels::add_into(dr, &scaled);
                    }
                }
            }
            &Op::L1 { pred, target } => {
                let p = val(pred).data();
                let t = val(target).data();
                let w = g[0] / T::from_f64(p.len() as f64);
                let sign = |d: T| {
                    if d > T::zero() {
                        w
                    } else if d < T::zero() {
                        -w
                    } else {
                        T::zero()
                    }
                };
                if wants(pred) {
                    for ((o, &a), &b) in slot(grads, nodes, pred).iter_mut().zip(p).zip(t) {
                        *o += sign(a - b);
                    }
                }
                if wants(target) {
                    for ((o, &a), &b) in slot(grads, nodes, target).iter_mut().zip(p).zip(t) {
                        *o -= sign(a - b);
                    }
                }
            }
            &Op::Sum(x) => {
                if wants(x) {
                    let g0 = g[0];
                    slot(grads, nodes, x).iter_mut().for_each(|o| *o += g0);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    fn v(data: &[f64]) -> Tensor<f64> {
        Tensor::new([data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity_and_zero_weight() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(m(&[&[1.0, 2.0]]));
        let w = tape.constant(m(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = tape.constant(v(&[0.0, 0.0]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);

        let w0 = tape.constant(m(&[&[0.0, 0.0], &[0.0, 0.0]]));
        let b1 = tape.constant(v(&[3.0, 4.0]));
        let y = tape.linear(x, w0, b1).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn linear_rejects_inner_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(m(&[&[1.0, 2.0, 3.0]]));
        let w = tape.constant(m(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = tape.constant(v(&[0.0, 0.0]));
        assert!(matches!(tape.linear(x, w, b), Err(Error::Shape(_))));
    }

    #[test]
    fn conv1d_identity_tap_and_length() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(m(&[&[1.0, -2.0], &[3.0, 4.0], &[0.5, 0.0]]));
        let k = tape.constant(Tensor::new([1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.constant(v(&[0.0, 0.0]));
        let y = tape.conv1d(x, k, b).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let x7 = tape.constant(Tensor::full([7, 2], 1.0));
        let k5 = tape.constant(Tensor::full([5, 2, 3], 0.1));
        let b3 = tape.constant(v(&[0.0; 3]));
        let y = tape.conv1d(x7, k5, b3).unwrap();
        assert_eq!(tape.shape(y), &[7, 3]);

        let k4 = tape.constant(Tensor::full([4, 2, 3], 0.1));
        assert!(tape.conv1d(x7, k4, b3).is_err());
    }

    #[test]
    fn relu_tanh_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(v(&[-1.0, 2.0, 0.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0, 0.0]);
        let t = tape.tanh(x);
        assert_eq!(tape.value(t).data()[2], 0.0);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(v(&[0.0, 1.0]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn layer_norm_cases() {
        let mut tape = Tape::<f64>::new();
        let g = tape.constant(v(&[1.0, 1.0, 1.0]));
        let b = tape.constant(v(&[0.0, 0.0, 0.0]));
        let x = tape.constant(m(&[&[5.0, 5.0, 5.0]]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);

        let g2 = tape.constant(v(&[1.0, 1.0]));
        let b2 = tape.constant(v(&[0.0, 0.0]));
        let x2 = tape.constant(m(&[&[1.0, -1.0]]));
        let y2 = tape.layer_norm(x2, g2, b2, 1e-5).unwrap();
        let out = tape.value(y2).data();
        assert!((out[0] - 1.0).abs() < 1e-5 && (out[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn softmax_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(m(&[&[0.0, 0.0], &[1000.0, 0.0]]));
        let y = tape.softmax_rows(x).unwrap();
        let out = tape.value(y).data();
        assert_eq!(&out[..2], &[0.5, 0.5]);
        assert!((out[2] - 1.0).abs() < 1e-6 && out[3].abs() < 1e-6);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn l1_values_and_gradient() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(v(&[0.0, 0.0]));
        let t = tape.constant(v(&[1.0, -1.0]));
        let l = tape.l1_loss(p, t).unwrap();
        assert_eq!(tape.value(l).data(), &[1.0]);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[-0.5, 0.5]);

        let same = tape.l1_loss(t, t).unwrap();
        assert_eq!(tape.value(same).data(), &[0.0]);
    }

    #[test]
    fn backward_sum_gives_ones_and_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full([2, 3], 0.7));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 2.0));
        tape.zero_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn unreachable_leaves_get_no_grad() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(v(&[1.0, 2.0]));
        let b = tape.param(v(&[3.0, 4.0]));
        let ta = tape.constant(v(&[0.0, 0.0]));
        let tb = tape.constant(v(&[0.0, 0.0]));
        let la = tape.l1_loss(a, ta).unwrap();
        let _lb = tape.l1_loss(b, tb).unwrap();
        tape.backward(la).unwrap();
        assert!(tape.grad(a).is_some());
        assert!(tape.grad(b).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(v(&[1.0, 2.0]));
        let r = tape.relu(a);
        assert!(tape.backward(r).is_err());
    }
}
