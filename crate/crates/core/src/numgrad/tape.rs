use crate::scalar::Scalar;

use super::{NumgradError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an op defined outside this module.
///
/// `inputs` are the forward input values in registration order; the returned
/// vector holds one optional gradient per input.
pub trait CustomBackward<F: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        grad_out: &Tensor<F>,
        inputs: &[&Tensor<F>],
        output: &Tensor<F>,
    ) -> Vec<Option<Tensor<F>>>;
}

enum Op<F: Scalar> {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddRowBias(Var, Var),
    Exp(Var),
    Log(Var),
    Silu(Var),
    Gelu(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    RmsNorm { x: Var, w: Var, inv_rms: Vec<F> },
    CumSumRows(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Conv1dCausal { x: Var, w: Var, b: Var },
    SumAll(Var),
    MeanAll(Var),
    SoftCrossEntropy { logits: Var, targets: Tensor<F>, probs: Tensor<F> },
    Custom { inputs: Vec<Var>, rule: Box<dyn CustomBackward<F>> },
}

impl<F: Scalar> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Silu(..) => "silu",
            Op::Gelu(..) => "gelu",
            Op::Softplus(..) => "softplus",
            Op::SoftmaxRows(..) => "softmax",
            Op::LogSumExpRows(..) => "logsumexp",
            Op::RmsNorm { .. } => "rmsnorm",
            Op::CumSumRows(..) => "cumsum",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::Conv1dCausal { .. } => "conv1d",
            Op::SumAll(..) => "sum",
            Op::MeanAll(..) => "mean",
            Op::SoftCrossEntropy { .. } => "soft_cross_entropy",
            Op::Custom { rule, .. } => rule.name(),
        }
    }
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the loss w.r.t. `v`; zeros when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor<F> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Moves the gradient out, leaving zeros semantics for later calls.
    pub fn take(&mut self, v: Var) -> Tensor<F> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

/// Ordered record of executed ops. Backward replays it once in reverse.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    flops: u64,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NumgradError {
    NumgradError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub(crate) fn silu<F: Scalar>(x: F) -> F {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn softplus<F: Scalar>(x: F) -> F {
    if x > F::lit(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub(crate) fn gelu<F: Scalar>(x: F) -> F {
    let u = F::lit(GELU_K) * (x + F::lit(GELU_C) * x * x * x);
    F::lit(0.5) * x * (F::one() + u.tanh())
}

#[inline]
fn gelu_grad<F: Scalar>(x: F) -> F {
    let u = F::lit(GELU_K) * (x + F::lit(GELU_C) * x * x * x);
    let th = u.tanh();
    let du = F::lit(GELU_K) * (F::one() + F::lit(3.0 * GELU_C) * x * x);
    F::lit(0.5) * (F::one() + th) + F::lit(0.5) * x * (F::one() - th * th) * du
}

/// Row-wise RMS normalisation; also used by the recurrent path.
pub(crate) fn rms_normalize<F: Scalar>(x: &[F], w: &[F], eps: F, out: &mut [F]) -> F {
    let n = F::from_usize(x.len()).unwrap();
    let ms = x.iter().map(|&v| v * v).sum::<F>() / n;
    let inv = F::one() / (ms + eps).sqrt();
    for ((o, &xv), &wv) in out.iter_mut().zip(x).zip(w) {
        *o = xv * inv * wv;
    }
    inv
}

pub(crate) fn log_sum_exp<F: Scalar>(row: &[F]) -> F {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<F>().ln()
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            flops: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Floating point operations counted by forward execution so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, flops: usize) -> Var {
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => self.inputs_of(&op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.flops += flops as u64;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_of(&self, op: &Op<F>) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddRowBias(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Silu(a)
            | Op::Gelu(a)
            | Op::Softplus(a)
            | Op::SoftmaxRows(a)
            | Op::LogSumExpRows(a)
            | Op::CumSumRows(a)
            | Op::SumAll(a)
            | Op::MeanAll(a) => vec![*a],
            Op::RmsNorm { x, w, .. } => vec![*x, *w],
            Op::SliceCols { x, .. } => vec![*x],
            Op::ConcatCols(vs) => vs.clone(),
            Op::Conv1dCausal { x, w, b } => vec![*x, *w, *b],
            Op::SoftCrossEntropy { logits, .. } => vec![*logits],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, 0)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Constant, 0)
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize), NumgradError> {
        self.nodes[v.0].value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumgradError> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(mismatch("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(
            m,
            k,
            n,
            F::one(),
            self.value(a).data(),
            k,
            1,
            self.value(b).data(),
            n,
            1,
            F::zero(),
            &mut out,
            n,
            1,
        );
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), 2 * m * k * n))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Result<Var, NumgradError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let n = va.numel();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, op, n))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumgradError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumgradError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumgradError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let t = self.value(a).map(|x| x * c);
        let n = t.numel();
        self.push(t, Op::Scale(a, c), n)
    }

    /// `a[i, j] + b[j]` for `a: [m, n]`, `b: [n]`.
    pub fn add_row_bias(&mut self, a: Var, b: Var) -> Result<Var, NumgradError> {
        let (m, n) = self.dims2(a)?;
        if self.value(b).shape() != [n] {
            return Err(mismatch("add_row_bias", self.value(a).shape(), self.value(b).shape()));
        }
        let bias = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &bv) in row.iter_mut().zip(bias) {
                *x += bv;
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddRowBias(a, b), m * n))
    }

    fn unary(&mut self, a: Var, f: impl Fn(F) -> F, op: Op<F>, cost: usize) -> Var {
        let t = self.value(a).map(f);
        let n = t.numel();
        self.push(t, op, cost * n)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, F::exp, Op::Exp(a), 1)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, F::ln, Op::Log(a), 1)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, silu, Op::Silu(a), 4)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu, Op::Gelu(a), 8)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a), 3)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumgradError> {
        let (m, n) = self.dims2(a)?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            let lse = log_sum_exp(row);
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::SoftmaxRows(a), 4 * m * n))
    }

    /// Row-wise log-sum-exp, `[m, n] -> [m]`.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var, NumgradError> {
        let (m, n) = self.dims2(a)?;
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .map(log_sum_exp)
            .collect::<Vec<_>>();
        Ok(self.push(Tensor::vector(data), Op::LogSumExpRows(a), 3 * m * n))
    }

    /// `x / rms(x) * w` per row.
    pub fn rms_norm(&mut self, x: Var, w: Var, eps: F) -> Result<Var, NumgradError> {
        let (m, n) = self.dims2(x)?;
        if self.value(w).shape() != [n] {
            return Err(mismatch("rms_norm", self.value(x).shape(), self.value(w).shape()));
        }
        let mut out = vec![F::zero(); m * n];
        let mut inv_rms = Vec::with_capacity(m);
        let wd = self.value(w).data();
        for (xr, or) in self.value(x).data().chunks(n).zip(out.chunks_mut(n)) {
            inv_rms.push(rms_normalize(xr, wd, eps, or));
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::RmsNorm { x, w, inv_rms }, 4 * m * n))
    }

    /// Inclusive prefix sum down the rows (over time).
    pub fn cum_sum_rows(&mut self, a: Var) -> Result<Var, NumgradError> {
        let (m, n) = self.dims2(a)?;
        let mut data = self.value(a).data().to_vec();
        for t in 1..m {
            let (prev, cur) = data.split_at_mut(t * n);
            for (c, &p) in cur[..n].iter_mut().zip(&prev[(t - 1) * n..]) {
                *c += p;
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::CumSumRows(a), m * n))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumgradError> {
        let (m, n) = self.dims2(x)?;
        if start > end || end > n {
            return Err(NumgradError::InvalidArgument(format!(
                "slice_cols {start}..{end} out of range for {n} columns"
            )));
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * w);
        for row in src.chunks(n) {
            data.extend_from_slice(&row[start..end]);
        }
        Ok(self.push(Tensor::new(vec![m, w], data)?, Op::SliceCols { x, start }, 0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumgradError> {
        let first = parts
            .first()
            .ok_or_else(|| NumgradError::InvalidArgument("concat of zero tensors".into()))?;
        let (m, _) = self.dims2(*first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims2(p)?;
            if pm != m {
                return Err(mismatch("concat_cols", self.value(*first).shape(), self.value(p).shape()));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor::new(vec![m, total], data)?, Op::ConcatCols(parts.to_vec()), 0))
    }

    /// Depthwise causal convolution over time.
    ///
    /// `x: [T, C]`, `w: [k, C]`, `b: [C]`; `y[t] = b + sum_j w[j] * x[t + j - (k - 1)]`
    /// with zeros before the first row.
    pub fn conv1d_causal(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumgradError> {
        let (t_len, c) = self.dims2(x)?;
        let (k, c2) = self.dims2(w)?;
        if c != c2 || self.value(b).shape() != [c] {
            return Err(mismatch("conv1d_causal", self.value(x).shape(), self.value(w).shape()));
        }
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Vec::with_capacity(t_len * c);
        for t in 0..t_len {
            out.extend_from_slice(bd);
            let orow = &mut out[t * c..];
            for j in 0..k {
                let Some(s) = (t + j).checked_sub(k - 1) else {
                    continue;
                };
                let xr = &xd[s * c..(s + 1) * c];
                let wr = &wd[j * c..(j + 1) * c];
                for ((o, &xv), &wv) in orow.iter_mut().zip(xr).zip(wr) {
                    *o += xv * wv;
                }
            }
        }
        let tensor = Tensor::new(vec![t_len, c], out)?;
        Ok(self.push(tensor, Op::Conv1dCausal { x, w, b }, 2 * k * t_len * c))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<F>();
        let n = self.value(a).numel();
        self.push(Tensor::scalar(s), Op::SumAll(a), n)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = F::from_usize(v.numel()).unwrap();
        let s = v.data().iter().copied().sum::<F>() / n;
        let cnt = v.numel();
        self.push(Tensor::scalar(s), Op::MeanAll(a), cnt)
    }

    /// Mean over rows of `-sum_n p[t, n] * log_softmax(y[t])[n]`.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: Tensor<F>) -> Result<Var, NumgradError> {
        let (m, n) = self.dims2(logits)?;
        if targets.shape() != [m, n] {
            return Err(mismatch("soft_cross_entropy", self.value(logits).shape(), targets.shape()));
        }
        let y = self.value(logits);
        let mut probs = Vec::with_capacity(m * n);
        let mut total = F::zero();
        for (yr, pr) in y.data().chunks(n).zip(targets.data().chunks(n)) {
            let lse = log_sum_exp(yr);
            let mut row = F::zero();
            for (&yv, &pv) in yr.iter().zip(pr) {
                row += -(pv * (yv - lse));
                probs.push((yv - lse).exp());
            }
            total += row;
        }
        let loss = total / F::from_usize(m).unwrap();
        let probs = Tensor::new(vec![m, n], probs)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftCrossEntropy {
                logits,
                targets,
                probs,
            },
            6 * m * n,
        ))
    }

    /// Records an externally computed op. `flops` feeds the tape's counter.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor<F>,
        rule: Box<dyn CustomBackward<F>>,
        flops: u64,
    ) -> Var {
        self.flops += flops;
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
            0,
        )
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, NumgradError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumgradError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), F::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let contributions = self.backward_op(&node.op, &g, &node.value);
            for (v, contrib) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            // leaves keep their gradient
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // only leaves are meaningful to callers
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn backward_op(&self, op: &Op<F>, g: &Tensor<F>, out: &Tensor<F>) -> Vec<(Var, Tensor<F>)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let gd = g.data();
        match op {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().unwrap();
                let n = val(*b).shape()[1];
                let mut da = vec![F::zero(); m * k];
                // dA = dC · B^T
                F::gemm(m, n, k, F::one(), gd, n, 1, val(*b).data(), 1, n, F::zero(), &mut da, k, 1);
                let mut db = vec![F::zero(); k * n];
                // dB = A^T · dC
                F::gemm(k, m, n, F::one(), val(*a).data(), 1, k, gd, n, 1, F::zero(), &mut db, n, 1);
                vec![
                    (*a, Tensor::new(vec![m, k], da).unwrap()),
                    (*b, Tensor::new(vec![k, n], db).unwrap()),
                ]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => {
                let ga = zip_map(g, val(*b), |gv, bv| gv * bv);
                let gb = zip_map(g, val(*a), |gv, av| gv * av);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, c) => vec![(*a, g.map(|x| x * *c))],
            Op::AddRowBias(a, b) => {
                let n = val(*b).numel();
                let mut db = vec![F::zero(); n];
                for row in gd.chunks(n) {
                    for (d, &x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                vec![(*a, g.clone()), (*b, Tensor::vector(db))]
            }
            Op::Exp(a) => vec![(*a, zip_map(g, out, |gv, y| gv * y))],
            Op::Log(a) => vec![(*a, zip_map(g, val(*a), |gv, x| gv / x))],
            Op::Silu(a) => vec![(
                *a,
                zip_map(g, val(*a), |gv, x| {
                    let s = sigmoid(x);
                    gv * s * (F::one() + x * (F::one() - s))
                }),
            )],
            Op::Gelu(a) => vec![(*a, zip_map(g, val(*a), |gv, x| gv * gelu_grad(x)))],
            Op::Softplus(a) => vec![(*a, zip_map(g, val(*a), |gv, x| gv * sigmoid(x)))],
            Op::SoftmaxRows(a) => {
                let n = out.shape()[1];
                let mut dx = Vec::with_capacity(out.numel());
                for (yr, gr) in out.data().chunks(n).zip(gd.chunks(n)) {
                    let dot: F = yr.iter().zip(gr).map(|(&y, &gv)| y * gv).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&y, &gv)| y * (gv - dot)));
                }
                vec![(*a, Tensor::new(out.shape().to_vec(), dx).unwrap())]
            }
            Op::LogSumExpRows(a) => {
                let x = val(*a);
                let n = x.shape()[1];
                let mut dx = Vec::with_capacity(x.numel());
                for ((xr, &lse), &gv) in x.data().chunks(n).zip(out.data()).zip(gd) {
                    dx.extend(xr.iter().map(|&xv| gv * (xv - lse).exp()));
                }
                vec![(*a, Tensor::new(x.shape().to_vec(), dx).unwrap())]
            }
            Op::RmsNorm { x, w, inv_rms } => {
                let xv = val(*x);
                let wd = val(*w).data();
                let n = wd.len();
                let nf = F::from_usize(n).unwrap();
                let mut dx = Vec::with_capacity(xv.numel());
                let mut dw = vec![F::zero(); n];
                for ((xr, gr), &r) in xv.data().chunks(n).zip(gd.chunks(n)).zip(inv_rms) {
                    let dot: F = xr
                        .iter()
                        .zip(gr)
                        .zip(wd)
                        .map(|((&xi, &gi), &wi)| gi * wi * xi)
                        .sum();
                    let coef = r * r * r * dot / nf;
                    for (((&xi, &gi), &wi), dwi) in xr.iter().zip(gr).zip(wd).zip(dw.iter_mut()) {
                        dx.push(r * wi * gi - xi * coef);
                        *dwi += gi * xi * r;
                    }
                }
                vec![
                    (*x, Tensor::new(xv.shape().to_vec(), dx).unwrap()),
                    (*w, Tensor::vector(dw)),
                ]
            }
            Op::CumSumRows(a) => {
                let (m, n) = g.dims2().unwrap();
                let mut dx = gd.to_vec();
                for t in (0..m.saturating_sub(1)).rev() {
                    let (cur, next) = dx.split_at_mut((t + 1) * n);
                    for (c, &nx) in cur[t * n..].iter_mut().zip(&next[..n]) {
                        *c += nx;
                    }
                }
                vec![(*a, Tensor::new(vec![m, n], dx).unwrap())]
            }
            Op::SliceCols { x, start } => {
                let (m, n) = val(*x).dims2().unwrap();
                let w = g.shape()[1];
                let mut dx = vec![F::zero(); m * n];
                for (drow, grow) in dx.chunks_mut(n).zip(gd.chunks(w.max(1))) {
                    drow[*start..*start + w].copy_from_slice(&grow[..w]);
                }
                vec![(*x, Tensor::new(vec![m, n], dx).unwrap())]
            }
            Op::ConcatCols(parts) => {
                let (m, total) = g.dims2().unwrap();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let w = val(p).shape()[1];
                    let mut d = Vec::with_capacity(m * w);
                    for row in gd.chunks(total) {
                        d.extend_from_slice(&row[offset..offset + w]);
                    }
                    offset += w;
                    res.push((p, Tensor::new(vec![m, w], d).unwrap()));
                }
                res
            }
            Op::Conv1dCausal { x, w, b } => {
                let (t_len, c) = val(*x).dims2().unwrap();
                let k = val(*w).shape()[0];
                let (xd, wd) = (val(*x).data(), val(*w).data());
                let mut dx = vec![F::zero(); t_len * c];
                let mut dw = vec![F::zero(); k * c];
                let mut db = vec![F::zero(); c];
                for t in 0..t_len {
                    let gr = &gd[t * c..(t + 1) * c];
                    for (d, &gv) in db.iter_mut().zip(gr) {
                        *d += gv;
                    }
                    for j in 0..k {
                        let Some(s) = (t + j).checked_sub(k - 1) else {
                            continue;
                        };
                        for ch in 0..c {
                            dx[s * c + ch] += wd[j * c + ch] * gr[ch];
                            dw[j * c + ch] += gr[ch] * xd[s * c + ch];
                        }
                    }
                }
                vec![
                    (*x, Tensor::new(vec![t_len, c], dx).unwrap()),
                    (*w, Tensor::new(vec![k, c], dw).unwrap()),
                    (*b, Tensor::vector(db)),
                ]
            }
            Op::SumAll(a) => vec![(*a, Tensor::full(val(*a).shape(), gd[0]))],
            Op::MeanAll(a) => {
                let n = F::from_usize(val(*a).numel()).unwrap();
                vec![(*a, Tensor::full(val(*a).shape(), gd[0] / n))]
            }
            Op::SoftCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (m, n) = probs.dims2().unwrap();
                let scale = gd[0] / F::from_usize(m).unwrap();
                let mut dy = Vec::with_capacity(m * n);
                for (pr, tr) in probs.data().chunks(n).zip(targets.data().chunks(n)) {
                    let mass: F = tr.iter().copied().sum();
                    dy.extend(pr.iter().zip(tr).map(|(&p, &q)| scale * (p * mass - q)));
                }
                vec![(*logits, Tensor::new(vec![m, n], dy).unwrap())]
            }
            Op::Custom { inputs, rule } => {
                let vals: Vec<&Tensor<F>> = inputs.iter().map(|v| val(*v)).collect();
                rule.backward(g, &vals, out)
                    .into_iter()
                    .zip(inputs)
                    .filter_map(|(gr, v)| gr.map(|t| (*v, t)))
                    .collect()
            }
        }
    }
}

fn zip_map<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}
