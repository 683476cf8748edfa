// Wengert-style tape: every op appends a node holding its forward value and
// the indices it read. `backward` walks the nodes in reverse creation order,
// which is a valid reverse topological order because inputs always precede
// outputs.

use rand::Rng;

use super::dense::Tensor;
use super::kernels::{gemm, Layout};
use crate::error::{Result, SignError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, b_transposed: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, bias: Var },
    AddConst(Var),
    Affine { x: Var, scale: f64 },
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    GatherRows { table: Var, ids: Vec<usize> },
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    Pick { x: Var, idx: Vec<usize> },
    Prod(Var),
    Reshape(Var),
    Dropout { x: Var, mask: Vec<f64> },
    BceWithLogits { x: Var, targets: Vec<f64> },
    CtcLogProb { probs: Var, target: Vec<usize>, blank: usize },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Records a dynamic computation graph for reverse-mode differentiation.
///
/// A tape lives for one forward/backward pass. Call [`Tape::clear`] (or build
/// a new one) between training steps.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    no_grad: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that never records gradient requirements; used for inference.
    pub fn inference() -> Self {
        Tape {
            no_grad: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad: needs_grad && !self.no_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Places a tensor on the tape, differentiable iff `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Copies the value of `v` into a new constant node.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node shape is consistent")
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Copies the gradient of `v` into `t.grad` (zeros when unreached).
    pub fn write_grad(&self, v: Var, t: &mut Tensor) {
        t.grad = Some(
            self.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()]),
        );
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(SignError::shape(op, s, &[0, 0])),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(SignError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(shape, value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        self.push(shape, value, op, ng)
    }

    // ---- linear algebra ------------------------------------------------

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_transposed: bool) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (br, bc) = self.matrix_dims(b, "matmul")?;
        let (kb, n) = if b_transposed { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(SignError::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        let b_layout = if b_transposed {
            Layout::transposed(bc)
        } else {
            Layout::row_major(bc)
        };
        gemm(
            m,
            k,
            n,
            self.value(a),
            Layout::row_major(k),
            self.value(b),
            b_layout,
            &mut out,
            0.0,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, b_transposed }, ng))
    }

    // ---- elementwise ---------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.binary(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.binary(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.binary(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a bias vector `[n]` to every row of `x[m×n]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.matrix_dims(x, "add_row")?;
        if self.shape(bias) != [n] {
            return Err(SignError::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).to_vec();
        let value = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(&b).map(|(v, c)| v + c))
            .collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(shape, value, Op::AddRow { x, bias }, ng))
    }

    /// Adds a non-differentiable tensor (masks, offsets) to `x`.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(SignError::shape("add_const", self.shape(x), c.shape()));
        }
        let value = self.value(x).iter().zip(c.data()).map(|(a, b)| a + b).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(shape, value, Op::AddConst(x), ng))
    }

    /// `scale · x + offset`.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Var {
        self.unary(x, Op::Affine { x, scale }, |v| scale * v + offset)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, c, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(SignError::shape("reshape", self.shape(x), &shape));
        }
        let value = self.value(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(shape, value, Op::Reshape(x), ng))
    }

    /// Inverted dropout: zeroes entries with probability `p`, rescales the rest.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let value = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(shape, value, Op::Dropout { x, mask }, ng)
    }

    // ---- normalisation -------------------------------------------------

    /// Max-stabilised softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(SignError::invalid("axis", format!("{axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| src[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in 0..len {
                    let e = (src[idx(l)] - max).exp();
                    out[idx(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    out[idx(l)] /= total;
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(shape, out, Op::Softmax { x, outer, len, inner }, ng))
    }

    /// Layer normalisation over the last dimension of `x[m×n]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "layer_norm")?;
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(SignError::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let src = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            vec![m, n],
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    // ---- structural ----------------------------------------------------

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "slice_cols")?;
        if width == 0 || start + width > n {
            return Err(SignError::shape("slice_cols", &[m, n], &[start, width]));
        }
        let src = self.value(x);
        let value = (0..m)
            .flat_map(|r| src[r * n + start..r * n + start + width].iter().copied())
            .collect();
        let ng = self.ng(x);
        Ok(self.push(vec![m, width], value, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(SignError::Empty("concat_cols of nothing".into()));
        };
        let (m, _) = self.matrix_dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.matrix_dims(p, "concat_cols")?;
            if pm != m {
                return Err(SignError::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                value.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![m, total], value, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Embedding lookup: rows `ids` of `table[v×n]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, n) = self.matrix_dims(table, "gather_rows")?;
        if ids.is_empty() {
            return Err(SignError::Empty("gather_rows with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(SignError::invalid("id", format!("row {bad} out of range for table of {v}")));
        }
        let src = self.value(table);
        let value = ids.iter().flat_map(|&i| src[i * n..(i + 1) * n].iter().copied()).collect();
        let ng = self.ng(table);
        Ok(self.push(
            vec![ids.len(), n],
            value,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Mean over rows: `x[m×n]` → `[n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "mean_rows")?;
        let src = self.value(x);
        let mut out = vec![0.0; n];
        for row in src.chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let ng = self.ng(x);
        Ok(self.push(vec![n], out, Op::MeanRows(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push(Vec::new(), vec![s], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(x);
        self.push(Vec::new(), vec![s], Op::Mean(x), ng)
    }

    /// Sums scalar nodes.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let Some((&first, rest)) = xs.split_first() else {
            return Err(SignError::Empty("add_all of nothing".into()));
        };
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// `out[i] = x[i, idx[i]]` for `x[m×n]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "pick")?;
        if idx.len() != m {
            return Err(SignError::shape("pick", &[m, n], &[idx.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(SignError::invalid("index", format!("column {bad} out of range for width {n}")));
        }
        let src = self.value(x);
        let value = idx.iter().enumerate().map(|(r, &c)| src[r * n + c]).collect();
        let ng = self.ng(x);
        Ok(self.push(vec![m], value, Op::Pick { x, idx: idx.to_vec() }, ng))
    }

    /// Product of all entries.
    pub fn prod(&mut self, x: Var) -> Var {
        let p = self.value(x).iter().product();
        let ng = self.ng(x);
        self.push(Vec::new(), vec![p], Op::Prod(x), ng)
    }

    // ---- fused losses --------------------------------------------------

    /// Mean binary cross-entropy between `sigmoid(x)` and `targets`.
    pub fn bce_with_logits(&mut self, x: Var, targets: &[f64]) -> Result<Var> {
        if self.value(x).len() != targets.len() {
            return Err(SignError::shape("bce_with_logits", self.shape(x), &[targets.len()]));
        }
        let n = targets.len() as f64;
        let loss = self
            .value(x)
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let ng = self.ng(x);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::BceWithLogits {
                x,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    /// CTC log-probability `ln p(target | probs)` where `probs[T×C]` holds
    /// per-frame label distributions and `blank` is the blank column.
    /// Infeasible targets give `-inf`.
    pub fn ctc_log_prob(&mut self, probs: Var, target: &[usize], blank: usize) -> Result<Var> {
        let (t_len, classes) = self.matrix_dims(probs, "ctc_log_prob")?;
        if blank >= classes {
            return Err(SignError::invalid("blank", format!("{blank} ≥ class count {classes}")));
        }
        if let Some(&bad) = target.iter().find(|&&g| g >= classes || g == blank) {
            return Err(SignError::invalid("target", format!("label {bad} invalid")));
        }
        let lp = super::ctc::forward(self.value(probs), t_len, classes, target, blank).log_prob;
        let ng = self.ng(probs);
        Ok(self.push(
            Vec::new(),
            vec![lp],
            Op::CtcLogProb {
                probs,
                target: target.to_vec(),
                blank,
            },
            ng,
        ))
    }

    // ---- reverse pass --------------------------------------------------

    /// Back-propagates from the scalar `loss`. Every differentiable leaf on
    /// the tape ends up with a gradient buffer, zero-filled when unreached.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(SignError::Empty("backward on an empty tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(SignError::invalid(
                "loss",
                format!("backward needs a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.needs_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.value.len()]);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, b_transposed } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = node.shape[1];
                if self.ng(*a) {
                    // dA = dC · op(B)ᵀ
                    let layout = if *b_transposed {
                        Layout::row_major(k)
                    } else {
                        Layout::transposed(n)
                    };
                    let buf = self.grad_buf(grads, *a);
                    gemm(m, n, k, g, Layout::row_major(n), self.value(*b), layout, buf, 1.0);
                }
                if self.ng(*b) {
                    let buf = self.grad_buf(grads, *b);
                    if *b_transposed {
                        // dB[n×k] = dCᵀ · A
                        gemm(n, m, k, g, Layout::transposed(n), self.value(*a), Layout::row_major(k), buf, 1.0);
                    } else {
                        // dB[k×n] = Aᵀ · dC
                        gemm(k, m, n, self.value(*a), Layout::transposed(k), g, Layout::row_major(n), buf, 1.0);
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |_| g.iter().copied());
                self.accumulate(grads, *b, |_| g.iter().copied());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |_| g.iter().copied());
                self.accumulate(grads, *b, |_| g.iter().map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |_| g.iter().zip(bv).map(|(g, b)| g * b));
                self.accumulate(grads, *b, |_| g.iter().zip(av).map(|(g, a)| g * a));
            }
            Op::AddRow { x, bias } => {
                self.accumulate(grads, *x, |_| g.iter().copied());
                if self.ng(*bias) {
                    let n = node.shape[1];
                    let buf = self.grad_buf(grads, *bias);
                    for row in g.chunks(n) {
                        for (b, v) in buf.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                }
            }
            Op::AddConst(x) | Op::Reshape(x) => {
                self.accumulate(grads, *x, |_| g.iter().copied());
            }
            Op::Affine { x, scale } => {
                self.accumulate(grads, *x, |_| g.iter().map(|v| v * scale));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, |_| {
                    g.iter().zip(xv).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                });
            }
            Op::Sigmoid(x) => {
                self.accumulate(grads, *x, |_| g.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)));
            }
            Op::Exp(x) => {
                self.accumulate(grads, *x, |_| g.iter().zip(out).map(|(g, e)| g * e));
            }
            Op::Log(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, |_| g.iter().zip(xv).map(|(g, x)| g / x));
            }
            Op::Softmax { x, outer, len, inner } => {
                if self.ng(*x) {
                    let buf = self.grad_buf(grads, *x);
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let dot: f64 = (0..*len).map(|l| g[at(l)] * out[at(l)]).sum();
                            for l in 0..*len {
                                buf[at(l)] += out[at(l)] * (g[at(l)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = node.shape[1];
                let gv = self.value(*gamma);
                if self.ng(*x) {
                    let buf = self.grad_buf(grads, *x);
                    for (r, rs) in rstd.iter().enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let dh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for c in 0..n {
                            buf[r * n + c] += rs * (dh[c] - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                }
                if self.ng(*gamma) {
                    let buf = self.grad_buf(grads, *gamma);
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for c in 0..n {
                            buf[c] += gr[c] * hr[c];
                        }
                    }
                }
                if self.ng(*beta) {
                    let buf = self.grad_buf(grads, *beta);
                    for gr in g.chunks(n) {
                        for (b, v) in buf.iter_mut().zip(gr) {
                            *b += v;
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if self.ng(*x) {
                    let n = self.shape(*x)[1];
                    let w = node.shape[1];
                    let buf = self.grad_buf(grads, *x);
                    for (r, gr) in g.chunks(w).enumerate() {
                        for (b, v) in buf[r * n + start..r * n + start + w].iter_mut().zip(gr) {
                            *b += v;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.ng(p) {
                        let buf = self.grad_buf(grads, p);
                        for (r, br) in buf.chunks_mut(w).enumerate() {
                            for (b, v) in br.iter_mut().zip(&g[r * total + offset..r * total + offset + w]) {
                                *b += v;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::GatherRows { table, ids } => {
                if self.ng(*table) {
                    let n = node.shape[1];
                    let buf = self.grad_buf(grads, *table);
                    for (gr, &id) in g.chunks(n).zip(ids) {
                        for (b, v) in buf[id * n..(id + 1) * n].iter_mut().zip(gr) {
                            *b += v;
                        }
                    }
                }
            }
            Op::MeanRows(x) => {
                let m = self.shape(*x)[0] as f64;
                let n = node.shape[0];
                self.accumulate(grads, *x, |len| (0..len).map(move |i| g[i % n] / m));
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |len| std::iter::repeat_n(g[0], len));
            }
            Op::Mean(x) => {
                self.accumulate(grads, *x, |len| std::iter::repeat_n(g[0] / len as f64, len));
            }
            Op::Pick { x, idx } => {
                if self.ng(*x) {
                    let n = self.shape(*x)[1];
                    let buf = self.grad_buf(grads, *x);
                    for (r, &c) in idx.iter().enumerate() {
                        buf[r * n + c] += g[r];
                    }
                }
            }
            Op::Prod(x) => {
                if self.ng(*x) {
                    let xv = self.value(*x);
                    // prefix/suffix products keep zeros exact
                    let mut prefix = vec![1.0; xv.len() + 1];
                    for (i, v) in xv.iter().enumerate() {
                        prefix[i + 1] = prefix[i] * v;
                    }
                    let mut suffix = 1.0;
                    let buf = self.grad_buf(grads, *x);
                    for i in (0..xv.len()).rev() {
                        buf[i] += g[0] * prefix[i] * suffix;
                        suffix *= xv[i];
                    }
                }
            }
            Op::Dropout { x, mask } => {
                self.accumulate(grads, *x, |_| g.iter().zip(mask).map(|(g, m)| g * m));
            }
            Op::BceWithLogits { x, targets } => {
                let xv = self.value(*x);
                let n = targets.len() as f64;
                self.accumulate(grads, *x, |_| {
                    xv.iter().zip(targets).map(|(&z, &y)| g[0] * (sigmoid(z) - y) / n)
                });
            }
            Op::CtcLogProb { probs, target, blank } => {
                if self.ng(*probs) && out[0].is_finite() {
                    let (t_len, classes) = (self.shape(*probs)[0], self.shape(*probs)[1]);
                    let d = super::ctc::log_prob_grad(self.value(*probs), t_len, classes, target, *blank);
                    let buf = self.grad_buf(grads, *probs);
                    for (b, v) in buf.iter_mut().zip(d) {
                        *b += g[0] * v;
                    }
                }
            }
        }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let len = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn accumulate<I: Iterator<Item = f64>>(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        contrib: impl FnOnce(usize) -> I,
    ) {
        if !self.ng(v) {
            return;
        }
        let buf = self.grad_buf(grads, v);
        let len = buf.len();
        for (b, c) in buf.iter_mut().zip(contrib(len)) {
            *b += c;
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
