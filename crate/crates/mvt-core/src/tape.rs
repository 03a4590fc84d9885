//! Dynamic Wengert tape: forward ops record themselves, `backward` replays
//! the records in reverse.
//!
//! One tape per forward/backward pass, confined to one thread. Gradient
//! accumulation walks recorded ops from the loss down to node 0, visiting
//! each node exactly once, with fixed left-to-right reductions; two passes
//! over identical inputs therefore produce bit-identical gradients.

use std::collections::BTreeMap;

use crate::element::Element;
use crate::error::{CoreError, Result};
use crate::kernels;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone)]
enum Op<T: Element> {
    Leaf,
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: T },
    AddRowBias { x: NodeId, b: NodeId },
    MatMul { a: NodeId, b: NodeId },
    MatMulNT { a: NodeId, b: NodeId },
    Transpose { a: NodeId },
    Reshape { a: NodeId },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    SliceRows { a: NodeId, start: usize },
    SliceCols { a: NodeId, start: usize },
    GatherRows { a: NodeId, rows: Vec<usize> },
    MeanAxis { a: NodeId, axis: usize },
    Sum { a: NodeId },
    SoftmaxRows { a: NodeId },
    Gelu { a: NodeId },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    CrossEntropyMean { logits: NodeId, labels: Vec<usize> },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    /// Saved forward intermediates some backward rules need
    /// (LayerNorm: xhat ++ inv_std; CrossEntropyMean: softmax probs).
    aux: Vec<T>,
}

/// Recording tape; owns every tensor produced during one forward pass.
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    param_ids: BTreeMap<String, NodeId>,
    bytes_live: usize,
    bytes_peak: usize,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_ids: BTreeMap::new(),
            bytes_live: 0,
            bytes_peak: 0,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, aux: Vec<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.bytes_live += (value.numel() + aux.len()) * std::mem::size_of::<T>();
        self.bytes_peak = self.bytes_peak.max(self.bytes_live);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            aux,
        });
        self.grads.push(None);
        id
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// High-water mark of tensor bytes held by this tape (values, aux
    /// buffers, and gradient buffers).
    pub fn peak_bytes(&self) -> usize {
        self.bytes_peak
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` with respect to node `id`, if the
    /// node required one.
    pub fn grad(&self, id: NodeId) -> Option<Tensor<T>> {
        self.grads[id.0].as_ref().map(|g| {
            Tensor::new(self.nodes[id.0].value.shape().to_vec(), g.clone())
                .expect("grad shape mirrors value shape")
        })
    }

    // ── leaves ─────────────────────────────────────────────────────────

    /// Record a tensor; gradient participation follows `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> NodeId {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg, Vec::new())
    }

    /// Record a tensor that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor<T>) -> NodeId {
        t.set_requires_grad(false);
        self.push(t, Op::Leaf, false, Vec::new())
    }

    /// Insert the named parameter as a gradient-requiring leaf, memoized so
    /// repeated loads of one name share a node.
    pub fn load_param(&mut self, store: &ParamStore<T>, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.param_ids.get(name) {
            return Ok(id);
        }
        let t = store.get(name)?.clone();
        let id = self.push(t, Op::Leaf, true, Vec::new());
        self.param_ids.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.param_ids.get(name).copied()
    }

    // ── elementwise and broadcast ──────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a, b }, rg, Vec::new()))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Sub { a, b }, rg, Vec::new()))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul { a, b }, rg, Vec::new()))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Scale { a, c }, rg, Vec::new()))
    }

    /// x[n,d] + b[1,d], the one permitted broadcast.
    pub fn add_row_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, bs) = (self.value(x).shape(), self.value(b).shape());
        if xs.len() != 2 || bs.len() != 2 || bs[0] != 1 || bs[1] != xs[1] {
            return Err(CoreError::ShapeMismatch {
                op: "add_row_bias",
                lhs: xs.to_vec(),
                rhs: bs.to_vec(),
            });
        }
        let (n, d) = (xs[0], xs[1]);
        let xv = self.value(x).data();
        let bv = self.value(b).data();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                data.push(xv[i * d + j] + bv[j]);
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![n, d], data)?,
            Op::AddRowBias { x, b },
            rg,
            Vec::new(),
        ))
    }

    // ── linear algebra ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_nn(&mut out, self.value(a).data(), self.value(b).data(), m, k, n, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, rg, Vec::new()))
    }

    /// a[m,k] * b[p,k]^T. Same result as `matmul(a, transpose(b))` without
    /// materializing the transpose; used for attention scores.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(CoreError::ShapeMismatch {
                op: "matmul_nt",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, p) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::zero(); m * p];
        kernels::matmul_nt(&mut out, self.value(a).data(), self.value(b).data(), m, k, p, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, p], out)?, Op::MatMulNT { a, b }, rg, Vec::new()))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.value(a).shape();
        if sa.len() != 2 {
            return Err(CoreError::BadShape {
                op: "transpose",
                expected: "2-D tensor".into(),
                got: sa.to_vec(),
            });
        }
        let (m, n) = (sa[0], sa[1]);
        let v = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose { a }, rg, Vec::new()))
    }

    pub fn reshape(&mut self, a: NodeId, new_shape: &[usize]) -> Result<NodeId> {
        let numel: usize = new_shape.iter().product();
        if numel != self.value(a).numel() || new_shape.contains(&0) {
            return Err(CoreError::BadShape {
                op: "reshape",
                expected: format!("shape with {} elements", self.value(a).numel()),
                got: new_shape.to_vec(),
            });
        }
        let data = self.value(a).data().to_vec();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(new_shape.to_vec(), data)?,
            Op::Reshape { a },
            rg,
            Vec::new(),
        ))
    }

    // ── layout: concat / slice / gather ────────────────────────────────

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(CoreError::Contract {
                op: "concat_rows",
                detail: "empty part list".into(),
            });
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[1] != cols {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            rg,
            Vec::new(),
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(CoreError::Contract {
                op: "concat_cols",
                detail: "empty part list".into(),
            });
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != rows {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            cols += s[1];
        }
        let mut data = vec![T::zero(); rows * cols];
        let mut col_off = 0;
        for &p in parts {
            let pv = self.value(p);
            let pc = pv.cols();
            for i in 0..rows {
                data[i * cols + col_off..i * cols + col_off + pc]
                    .copy_from_slice(&pv.data()[i * pc..(i + 1) * pc]);
            }
            col_off += pc;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            rg,
            Vec::new(),
        ))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.value(a).shape();
        if s.len() != 2 || start + len > s[0] || len == 0 {
            return Err(CoreError::BadShape {
                op: "slice_rows",
                expected: format!("row range {}..{} inside", start, start + len),
                got: s.to_vec(),
            });
        }
        let cols = s[1];
        let data = self.value(a).data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![len, cols], data)?,
            Op::SliceRows { a, start },
            rg,
            Vec::new(),
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.value(a).shape();
        if s.len() != 2 || start + len > s[1] || len == 0 {
            return Err(CoreError::BadShape {
                op: "slice_cols",
                expected: format!("column range {}..{} inside", start, start + len),
                got: s.to_vec(),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let v = self.value(a).data();
        let mut data = Vec::with_capacity(rows * len);
        for i in 0..rows {
            data.extend_from_slice(&v[i * cols + start..i * cols + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![rows, len], data)?,
            Op::SliceCols { a, start },
            rg,
            Vec::new(),
        ))
    }

    /// Select rows by index (duplicates allowed); backward scatter-adds.
    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let s = self.value(a).shape();
        if s.len() != 2 || rows.is_empty() {
            return Err(CoreError::BadShape {
                op: "gather_rows",
                expected: "2-D tensor and non-empty index list".into(),
                got: s.to_vec(),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= s[0]) {
            return Err(CoreError::Contract {
                op: "gather_rows",
                detail: format!("row index {bad} out of range 0..{}", s[0]),
            });
        }
        let cols = s[1];
        let v = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(&v[r * cols..(r + 1) * cols]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![rows.len(), cols], data)?,
            Op::GatherRows {
                a,
                rows: rows.to_vec(),
            },
            rg,
            Vec::new(),
        ))
    }

    // ── reductions ─────────────────────────────────────────────────────

    /// Mean along `axis` of a 2-D tensor: axis 0 -> [1,d], axis 1 -> [n,1].
    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let s = self.value(a).shape();
        if s.len() != 2 || axis > 1 {
            return Err(CoreError::BadShape {
                op: "mean_axis",
                expected: "2-D tensor, axis 0 or 1".into(),
                got: s.to_vec(),
            });
        }
        let (n, d) = (s[0], s[1]);
        let v = self.value(a).data();
        let (shape, data) = if axis == 0 {
            let inv = T::from_f64(1.0 / n as f64);
            let mut acc = vec![T::zero(); d];
            for i in 0..n {
                for j in 0..d {
                    acc[j] = acc[j] + v[i * d + j];
                }
            }
            for x in acc.iter_mut() {
                *x = *x * inv;
            }
            (vec![1, d], acc)
        } else {
            let inv = T::from_f64(1.0 / d as f64);
            let mut acc = Vec::with_capacity(n);
            for i in 0..n {
                let mut srow = T::zero();
                for j in 0..d {
                    srow = srow + v[i * d + j];
                }
                acc.push(srow * inv);
            }
            (vec![n, 1], acc)
        };
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::MeanAxis { a, axis }, rg, Vec::new()))
    }

    /// Sum of all elements -> scalar [1].
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let mut s = T::zero();
        for &v in self.value(a).data() {
            s = s + v;
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum { a }, rg, Vec::new()))
    }

    // ── nonlinearities ─────────────────────────────────────────────────

    /// Row softmax with max-subtraction; rejects NaN input.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).shape();
        if s.len() != 2 {
            return Err(CoreError::BadShape {
                op: "softmax_rows",
                expected: "2-D tensor".into(),
                got: s.to_vec(),
            });
        }
        let v = self.value(a).data();
        if v.iter().any(|x| x.is_nan()) {
            return Err(CoreError::Numeric {
                op: "softmax_rows",
                detail: "NaN in input".into(),
            });
        }
        let (n, d) = (s[0], s[1]);
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            let row = &v[i * d..(i + 1) * d];
            let mut mx = row[0];
            for &x in &row[1..] {
                if x > mx {
                    mx = x;
                }
            }
            let mut denom = T::zero();
            let base = out.len();
            for &x in row {
                let e = (x - mx).exp();
                out.push(e);
                denom = denom + e;
            }
            for x in out[base..].iter_mut() {
                *x = *x / denom;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            Op::SoftmaxRows { a },
            rg,
            Vec::new(),
        ))
    }

    /// Exact-erf GELU: 0.5 x (1 + erf(x / sqrt(2))).
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let half = T::from_f64(0.5);
        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let one = T::one();
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| half * x * (one + (x * inv_sqrt2).erf()))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Gelu { a }, rg, Vec::new()))
    }

    /// Per-row layer norm with learned affine:
    /// y = gamma * (x - mean) / sqrt(var + eps) + beta, population variance.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let s = self.value(x).shape();
        if s.len() != 2 {
            return Err(CoreError::BadShape {
                op: "layer_norm",
                expected: "2-D tensor".into(),
                got: s.to_vec(),
            });
        }
        let (n, d) = (s[0], s[1]);
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            let ps = self.value(id).shape();
            if ps != [1, d] {
                return Err(CoreError::BadShape {
                    op: "layer_norm",
                    expected: format!("{name} of shape [1, {d}]"),
                    got: ps.to_vec(),
                });
            }
        }
        if eps <= 0.0 {
            return Err(CoreError::Contract {
                op: "layer_norm",
                detail: format!("eps must be positive, got {eps}"),
            });
        }
        let epsv = T::from_f64(eps);
        let inv_d = T::from_f64(1.0 / d as f64);
        let xv = self.value(x).data();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut out = Vec::with_capacity(n * d);
        // aux: xhat (n*d) followed by inv_std (n)
        let mut aux = Vec::with_capacity(n * d + n);
        let mut inv_stds = Vec::with_capacity(n);
        for i in 0..n {
            let row = &xv[i * d..(i + 1) * d];
            let mut mu = T::zero();
            for &v in row {
                mu = mu + v;
            }
            mu = mu * inv_d;
            let mut var = T::zero();
            for &v in row {
                let c = v - mu;
                var = var + c * c;
            }
            var = var * inv_d;
            let inv_std = T::one() / (var + epsv).sqrt();
            inv_stds.push(inv_std);
            for (j, &v) in row.iter().enumerate() {
                let xhat = (v - mu) * inv_std;
                aux.push(xhat);
                out.push(gv[j] * xhat + bv[j]);
            }
        }
        aux.extend_from_slice(&inv_stds);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            Op::LayerNorm { x, gamma, beta },
            rg,
            aux,
        ))
    }

    /// Mean over rows of -log softmax(logits)[label], stabilized through
    /// log-sum-exp with max subtraction.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let s = self.value(logits).shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(CoreError::BadShape {
                op: "cross_entropy_mean",
                expected: format!("[{}, K] logits", labels.len()),
                got: s.to_vec(),
            });
        }
        let (b, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(CoreError::Contract {
                op: "cross_entropy_mean",
                detail: format!("label {bad} out of range 0..{k}"),
            });
        }
        let v = self.value(logits).data();
        if v.iter().any(|x| x.is_nan()) {
            return Err(CoreError::Numeric {
                op: "cross_entropy_mean",
                detail: "NaN in logits".into(),
            });
        }
        let mut probs = Vec::with_capacity(b * k);
        let mut total = T::zero();
        for (i, &label) in labels.iter().enumerate() {
            let row = &v[i * k..(i + 1) * k];
            let mut mx = row[0];
            for &x in &row[1..] {
                if x > mx {
                    mx = x;
                }
            }
            let mut denom = T::zero();
            let base = probs.len();
            for &x in row {
                let e = (x - mx).exp();
                probs.push(e);
                denom = denom + e;
            }
            for p in probs[base..].iter_mut() {
                *p = *p / denom;
            }
            let lse = mx + denom.ln();
            total = total + (lse - row[label]);
        }
        let loss = total * T::from_f64(1.0 / b as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropyMean {
                logits,
                labels: labels.to_vec(),
            },
            rg,
            probs,
        ))
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Gradients land on every
    /// gradient-requiring node at or below the loss; query them with
    /// [`Tape::grad`] or [`Tape::param_grads`].
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(CoreError::Contract {
                op: "backward",
                detail: format!(
                    "loss must be scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        let grad_bytes: usize = (0..=loss.0)
            .filter(|&i| self.nodes[i].requires_grad)
            .map(|i| self.nodes[i].value.numel() * std::mem::size_of::<T>())
            .sum();
        self.bytes_peak = self.bytes_peak.max(self.bytes_live + grad_bytes);
        for i in 0..=loss.0 {
            if self.nodes[i].requires_grad {
                self.grads[i] = Some(vec![T::zero(); self.nodes[i].value.numel()]);
            }
        }
        if self.grads[loss.0].is_none() {
            // Loss does not depend on any gradient-requiring leaf; nothing to do.
            return Ok(());
        }
        self.grads[loss.0].as_mut().unwrap()[0] = T::one();

        for i in (0..=loss.0).rev() {
            if self.grads[i].is_none() {
                continue;
            }
            let g = self.grads[i].take().unwrap();
            self.apply_backward(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Collect gradients for every parameter loaded via `load_param`,
    /// keyed by name. Parameters the loss never touched get exact zeros.
    pub fn param_grads(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, &id) in &self.param_ids {
            let g = match &self.grads[id.0] {
                Some(g) => Tensor::new(self.nodes[id.0].value.shape().to_vec(), g.clone())
                    .expect("grad shape mirrors value shape"),
                None => Tensor::zeros(self.nodes[id.0].value.shape()),
            };
            out.insert(name.clone(), g).expect("param names unique");
        }
        out
    }

    fn acc(&mut self, id: NodeId, f: impl FnOnce(&mut [T])) {
        if let Some(g) = self.grads[id.0].as_mut() {
            f(g);
        }
    }

    fn apply_backward(&mut self, i: usize, g: &[T]) {
        // Clones of input values are taken where the rule needs them; the
        // tensors involved are small relative to the matmul work.
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                self.acc(a, |ga| add_into(ga, g));
                self.acc(b, |gb| add_into(gb, g));
            }
            Op::Sub { a, b } => {
                self.acc(a, |ga| add_into(ga, g));
                self.acc(b, |gb| sub_into(gb, g));
            }
            Op::Mul { a, b } => {
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                self.acc(a, |ga| {
                    for ((o, &gv), &bvv) in ga.iter_mut().zip(g).zip(bv.iter()) {
                        *o = *o + gv * bvv;
                    }
                });
                self.acc(b, |gb| {
                    for ((o, &gv), &avv) in gb.iter_mut().zip(g).zip(av.iter()) {
                        *o = *o + gv * avv;
                    }
                });
            }
            Op::Scale { a, c } => {
                self.acc(a, |ga| kernels::axpy(ga, g, c, true));
            }
            Op::AddRowBias { x, b } => {
                self.acc(x, |gx| add_into(gx, g));
                let d = self.nodes[b.0].value.numel();
                let n = g.len() / d;
                self.acc(b, |gb| {
                    for i in 0..n {
                        for j in 0..d {
                            gb[j] = gb[j] + g[i * d + j];
                        }
                    }
                });
            }
            Op::MatMul { a, b } => {
                // y = a*b: da = g * b^T, db = a^T * g
                let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let n = self.nodes[b.0].value.cols();
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                self.acc(a, |ga| kernels::matmul_nt(ga, g, &bv, m, n, k, true));
                self.acc(b, |gb| kernels::matmul_tn(gb, &av, g, m, k, n, true));
            }
            Op::MatMulNT { a, b } => {
                // y = a*b^T: da = g * b, db = g^T * a
                let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let p = self.nodes[b.0].value.rows();
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                self.acc(a, |ga| kernels::matmul_nn(ga, g, &bv, m, p, k, true));
                self.acc(b, |gb| kernels::matmul_tn(gb, g, &av, m, p, k, true));
            }
            Op::Transpose { a } => {
                let (m, n) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                self.acc(a, |ga| {
                    for i in 0..n {
                        for j in 0..m {
                            ga[j * n + i] = ga[j * n + i] + g[i * m + j];
                        }
                    }
                });
            }
            Op::Reshape { a } => {
                self.acc(a, |ga| add_into(ga, g));
            }
            Op::ConcatRows { parts } => {
                let mut off = 0;
                for p in parts {
                    let numel = self.nodes[p.0].value.numel();
                    let gs = &g[off..off + numel];
                    self.acc(p, |gp| add_into(gp, gs));
                    off += numel;
                }
            }
            Op::ConcatCols { parts } => {
                let rows = self.nodes[parts[0].0].value.rows();
                let total_cols = g.len() / rows;
                let mut col_off = 0;
                for p in parts {
                    let pc = self.nodes[p.0].value.cols();
                    self.acc(p, |gp| {
                        for i in 0..rows {
                            for j in 0..pc {
                                gp[i * pc + j] = gp[i * pc + j] + g[i * total_cols + col_off + j];
                            }
                        }
                    });
                    col_off += pc;
                }
            }
            Op::SliceRows { a, start } => {
                let cols = self.nodes[a.0].value.cols();
                self.acc(a, |ga| {
                    add_into(&mut ga[start * cols..start * cols + g.len()], g);
                });
            }
            Op::SliceCols { a, start } => {
                let (rows, cols) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let len = g.len() / rows;
                self.acc(a, |ga| {
                    for i in 0..rows {
                        for j in 0..len {
                            let o = &mut ga[i * cols + start + j];
                            *o = *o + g[i * len + j];
                        }
                    }
                });
            }
            Op::GatherRows { a, rows } => {
                let cols = self.nodes[a.0].value.cols();
                self.acc(a, |ga| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..cols {
                            ga[r * cols + j] = ga[r * cols + j] + g[i * cols + j];
                        }
                    }
                });
            }
            Op::MeanAxis { a, axis } => {
                let (n, d) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                if axis == 0 {
                    let inv = T::from_f64(1.0 / n as f64);
                    self.acc(a, |ga| {
                        for i in 0..n {
                            for j in 0..d {
                                ga[i * d + j] = ga[i * d + j] + g[j] * inv;
                            }
                        }
                    });
                } else {
                    let inv = T::from_f64(1.0 / d as f64);
                    self.acc(a, |ga| {
                        for i in 0..n {
                            for j in 0..d {
                                ga[i * d + j] = ga[i * d + j] + g[i] * inv;
                            }
                        }
                    });
                }
            }
            Op::Sum { a } => {
                let g0 = g[0];
                self.acc(a, |ga| {
                    for o in ga.iter_mut() {
                        *o = *o + g0;
                    }
                });
            }
            Op::SoftmaxRows { a } => {
                // dx = y * (g - <g, y>_row)
                let y = self.nodes[i].value.data().to_vec();
                let (n, d) = (self.nodes[i].value.rows(), self.nodes[i].value.cols());
                self.acc(a, |ga| {
                    for r in 0..n {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let mut dot = T::zero();
                        for (&yv, &gv) in yr.iter().zip(gr) {
                            dot = dot + yv * gv;
                        }
                        for j in 0..d {
                            ga[r * d + j] = ga[r * d + j] + yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Gelu { a } => {
                // d/dx [x Phi(x)] = Phi(x) + x phi(x)
                let xv = self.nodes[a.0].value.data().to_vec();
                let half = T::from_f64(0.5);
                let one = T::one();
                let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
                let inv_sqrt_2pi = T::from_f64(INV_SQRT_2PI);
                self.acc(a, |ga| {
                    for (k, (&x, &gv)) in xv.iter().zip(g).enumerate() {
                        let phi_cdf = half * (one + (x * inv_sqrt2).erf());
                        let pdf = (-(x * x) * half).exp() * inv_sqrt_2pi;
                        ga[k] = ga[k] + gv * (phi_cdf + x * pdf);
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta } => {
                let (n, d) = (self.nodes[i].value.rows(), self.nodes[i].value.cols());
                let aux = std::mem::take(&mut self.nodes[i].aux);
                let (xhat, inv_std) = aux.split_at(n * d);
                let gv = self.nodes[gamma.0].value.data().to_vec();
                let inv_d = T::from_f64(1.0 / d as f64);
                self.acc(x, |gx| {
                    // dx = inv_std * (ggam - mean(ggam) - xhat * mean(ggam*xhat))
                    for r in 0..n {
                        let xh = &xhat[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let gg = gr[j] * gv[j];
                            m1 = m1 + gg;
                            m2 = m2 + gg * xh[j];
                        }
                        m1 = m1 * inv_d;
                        m2 = m2 * inv_d;
                        for j in 0..d {
                            let gg = gr[j] * gv[j];
                            gx[r * d + j] =
                                gx[r * d + j] + inv_std[r] * (gg - m1 - xh[j] * m2);
                        }
                    }
                });
                self.acc(gamma, |gg| {
                    for r in 0..n {
                        for j in 0..d {
                            gg[j] = gg[j] + g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                self.acc(beta, |gb| {
                    for r in 0..n {
                        for j in 0..d {
                            gb[j] = gb[j] + g[r * d + j];
                        }
                    }
                });
                self.nodes[i].aux = aux;
            }
            Op::CrossEntropyMean { logits, labels } => {
                let probs = std::mem::take(&mut self.nodes[i].aux);
                let b = labels.len();
                let k = probs.len() / b;
                let g0 = g[0];
                let inv_b = T::from_f64(1.0 / b as f64);
                self.acc(logits, |gl| {
                    for r in 0..b {
                        for j in 0..k {
                            let indicator = if labels[r] == j { T::one() } else { T::zero() };
                            gl[r * k + j] =
                                gl[r * k + j] + g0 * inv_b * (probs[r * k + j] - indicator);
                        }
                    }
                });
                self.nodes[i].aux = probs;
            }
        }
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CoreError::ShapeMismatch {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }
}

fn zip_map<T: Element>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into<T: Element>(out: &mut [T], g: &[T]) {
    for (o, &v) in out.iter_mut().zip(g.iter()) {
        *o = *o + v;
    }
}

fn sub_into<T: Element>(out: &mut [T], g: &[T]) {
    for (o, &v) in out.iter_mut().zip(g.iter()) {
        *o = *o - v;
    }
}
