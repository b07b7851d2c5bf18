//! Wengert-list reverse-mode differentiation.
//!
//! Values are computed eagerly as operations are recorded; `backward`
//! replays the list once in reverse, accumulating adjoints. A tape is
//! single-shot: a second `backward` call is an error, not silent reuse.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// `[m,k] x [k,n] -> [m,n]`; `n = 1` also covers matrix-vector.
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    /// Elementwise `scale * x + shift`.
    Affine { x: Var, scale: f64 },
    Sigmoid { x: Var },
    Tanh { x: Var },
    /// max(0, x); subgradient at 0 is 0.
    Relu { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    /// Euclidean norm of the flattened input; gradient at the origin is 0.
    L2Norm { x: Var },
    /// Fused log-softmax + NLL against one target class. Probabilities are
    /// cached at record time for the backward pass.
    SoftmaxCrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    /// Elementwise sum of any number of same-shaped inputs.
    AddN { inputs: Vec<Var> },
}

struct Node {
    value: Tensor,
    op: Op,
    /// False for constant subtrees; backward skips them entirely.
    needs_grad: bool,
}

/// Per-variable adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` if no gradient flowed there and `v` is not
    /// a gradient target.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Adjoint of a gradient-target leaf. Targets always have an entry
    /// (zeros when unreached), so this panics only on misuse.
    pub fn wrt(&self, v: Var) -> &[f64] {
        self.grads[v.0]
            .as_deref()
            .expect("gradient requested for a variable that is not a gradient target")
    }
}

/// Recording tape. See module docs.
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Current value of `v`.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Insert a leaf. Gradient tracking follows `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push(t, Op::Leaf, needs_grad)
    }

    /// Insert a leaf that is never differentiated, whatever its flag says.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ---- operations ------------------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]`, or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        let (m, k, n, out_shape) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k1], [k2, n]) if k1 == k2 => (*m, *k1, *n, vec![*m, *n]),
            ([m, k1], [k2]) if k1 == k2 => (*m, *k1, 1, vec![*m]),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: sa,
                    rhs: sb,
                })
            }
        };
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(out_shape, out), Op::MatMul { a, b, m, k, n }, needs))
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let shape = sa.to_vec();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let op = match name {
            "add" => Op::Add { a, b },
            "sub" => Op::Sub { a, b },
            "mul" => Op::Mul { a, b },
            _ => unreachable!(),
        };
        Ok(self.push(Tensor::new(shape, data), op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("sub", a, b, |x, y| x - y)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("mul", a, b, |x, y| x * y)
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(x);
        let data: Vec<f64> = t.data().iter().map(|&v| scale * v + shift).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, data), Op::Affine { x, scale }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data: Vec<f64> = t.data().iter().map(|&v| stable_sigmoid(v)).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, data), Op::Sigmoid { x }, needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data: Vec<f64> = t.data().iter().map(|&v| v.tanh()).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, data), Op::Tanh { x }, needs)
    }

    /// `max(0, x)`; the subgradient at exactly 0 is taken as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data: Vec<f64> = t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, data), Op::Relu { x }, needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let needs = self.needs(x);
        self.push(Tensor::scalar(m), Op::Mean { x }, needs)
    }

    /// Euclidean norm over all elements. Gradient at the origin is the
    /// zero vector rather than NaN.
    pub fn l2_norm(&mut self, x: Var) -> Var {
        let n = self.value(x).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let needs = self.needs(x);
        self.push(Tensor::scalar(n), Op::L2Norm { x }, needs)
    }

    /// `||a - b||_2` as a scalar.
    pub fn euclidean_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        Ok(self.l2_norm(d))
    }

    /// Cross-entropy of softmax(logits) against `target`, fused for
    /// stability: the max logit is subtracted before exponentiation.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        let c = t.numel();
        if target >= c {
            return Err(Error::contract(format!(
                "softmax target class {target} out of range for {c} logits"
            )));
        }
        let z = t.data();
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| (v - zmax).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / denom).collect();
        // -log softmax[target] = log(denom) - (z[target] - zmax)
        let loss = denom.ln() - (z[target] - zmax);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, target, probs },
            needs,
        ))
    }

    /// Elementwise sum of `inputs`, which must be non-empty and same-shaped.
    pub fn add_n(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::contract("add_n over an empty input list"))?;
        let shape = self.value(first).shape().to_vec();
        let mut data = self.value(first).data().to_vec();
        let mut needs = self.needs(first);
        for &v in &inputs[1..] {
            if self.value(v).shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "add_n",
                    lhs: shape,
                    rhs: self.value(v).shape().to_vec(),
                });
            }
            for (acc, x) in data.iter_mut().zip(self.value(v).data()) {
                *acc += x;
            }
            needs = needs || self.needs(v);
        }
        Ok(self.push(Tensor::new(shape, data), Op::AddN { inputs: inputs.to_vec() }, needs))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from scalar `loss`. Gradient targets that the loss does
    /// not reach get explicit zeros. Errors if the tape was already swept or
    /// `loss` is not a scalar.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward from non-scalar value of shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let upstream = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &upstream, &mut grads);
            grads[i] = Some(upstream);
        }

        // Unreached targets still answer with a well-defined zero gradient.
        for (i, node) in self.nodes.iter().enumerate() {
            if node.needs_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn bump(grads: &mut [Option<Vec<f64>>], v: Var, numel: usize) -> &mut Vec<f64> {
        grads[v.0].get_or_insert_with(|| vec![0.0; numel])
    }

    fn accumulate(&self, i: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if self.needs(*a) {
                    let db = self.value(*b).data();
                    let ga = Self::bump(grads, *a, m * k);
                    // dA = dC · B^T
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += up[i * n + j] * db[p * n + j];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                }
                if self.needs(*b) {
                    let da = self.value(*a).data();
                    let gb = Self::bump(grads, *b, k * n);
                    // dB = A^T · dC
                    for p in 0..k {
                        for i in 0..m {
                            let aip = da[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += aip * up[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for &v in &[*a, *b] {
                    if self.needs(v) {
                        let g = Self::bump(grads, v, up.len());
                        for (gi, u) in g.iter_mut().zip(up) {
                            *gi += u;
                        }
                    }
                }
            }
            Op::Sub { a, b } => {
                if self.needs(*a) {
                    let g = Self::bump(grads, *a, up.len());
                    for (gi, u) in g.iter_mut().zip(up) {
                        *gi += u;
                    }
                }
                if self.needs(*b) {
                    let g = Self::bump(grads, *b, up.len());
                    for (gi, u) in g.iter_mut().zip(up) {
                        *gi -= u;
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let db = self.value(*b).data();
                    let g = Self::bump(grads, *a, up.len());
                    for ((gi, u), y) in g.iter_mut().zip(up).zip(db) {
                        *gi += u * y;
                    }
                }
                if self.needs(*b) {
                    let da = self.value(*a).data();
                    let g = Self::bump(grads, *b, up.len());
                    for ((gi, u), x) in g.iter_mut().zip(up).zip(da) {
                        *gi += u * x;
                    }
                }
            }
            Op::Affine { x, scale } => {
                if self.needs(*x) {
                    let s = *scale;
                    let g = Self::bump(grads, *x, up.len());
                    for (gi, u) in g.iter_mut().zip(up) {
                        *gi += u * s;
                    }
                }
            }
            Op::Sigmoid { x } => {
                if self.needs(*x) {
                    let y = self.nodes[i].value.data();
                    let g = Self::bump(grads, *x, up.len());
                    for ((gi, u), s) in g.iter_mut().zip(up).zip(y) {
                        *gi += u * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh { x } => {
                if self.needs(*x) {
                    let y = self.nodes[i].value.data();
                    let g = Self::bump(grads, *x, up.len());
                    for ((gi, u), t) in g.iter_mut().zip(up).zip(y) {
                        *gi += u * (1.0 - t * t);
                    }
                }
            }
            Op::Relu { x } => {
                if self.needs(*x) {
                    let inp = self.value(*x).data();
                    let g = Self::bump(grads, *x, up.len());
                    for ((gi, u), v) in g.iter_mut().zip(up).zip(inp) {
                        if *v > 0.0 {
                            *gi += u;
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if self.needs(*x) {
                    let n = self.value(*x).numel();
                    let g = Self::bump(grads, *x, n);
                    for gi in g.iter_mut() {
                        *gi += up[0];
                    }
                }
            }
            Op::Mean { x } => {
                if self.needs(*x) {
                    let n = self.value(*x).numel();
                    let w = up[0] / n as f64;
                    let g = Self::bump(grads, *x, n);
                    for gi in g.iter_mut() {
                        *gi += w;
                    }
                }
            }
            Op::L2Norm { x } => {
                if self.needs(*x) {
                    let norm = self.nodes[i].value.item();
                    let inp = self.value(*x).data();
                    let g = Self::bump(grads, *x, inp.len());
                    if norm > 0.0 {
                        let w = up[0] / norm;
                        for (gi, v) in g.iter_mut().zip(inp) {
                            *gi += w * v;
                        }
                    }
                    // norm == 0: gradient defined as 0, nothing to add.
                }
            }
            Op::SoftmaxCrossEntropy { logits, target, probs } => {
                if self.needs(*logits) {
                    let target = *target;
                    let g = Self::bump(grads, *logits, probs.len());
                    for (j, (gi, p)) in g.iter_mut().zip(probs).enumerate() {
                        let ind = if j == target { 1.0 } else { 0.0 };
                        *gi += up[0] * (p - ind);
                    }
                }
            }
            Op::AddN { inputs } => {
                for &v in inputs {
                    if self.needs(v) {
                        let g = Self::bump(grads, v, up.len());
                        for (gi, u) in g.iter_mut().zip(up) {
                            *gi += u;
                        }
                    }
                }
            }
        }
    }
}

/// Numerically stable logistic function: never exponentiates a large
/// positive argument, so it cannot overflow to NaN. Saturates cleanly to
/// 0.0 / 1.0 in f64 for very large |x|.
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
