use super::kernels::{matmul, transpose};
use super::{Activation, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Act(Var, Activation),
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    L1 { a: Var, b: Var },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// A tape is cheap to create and is meant to live for one forward/backward
/// pass. Leaves copy the tensor data they are built from.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Leaf that receives a gradient iff `t.requires_grad()`.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn input(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape, t.data, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Copies a recorded value out as a fresh tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("recorded shapes are valid")
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension(format!("{what} must be 2-D, got shape {s:?}"))),
        }
    }

    /// `x[N x d_in] * w[d_in x d_out] + b[d_out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, d_in) = self.matrix_dims(x, "affine input")?;
        let (w_in, d_out) = self.matrix_dims(w, "affine weight")?;
        if w_in != d_in {
            return Err(Error::Dimension(format!(
                "affine inner dimensions differ: input width {d_in}, weight rows {w_in}"
            )));
        }
        if self.node(b).value.len() != d_out {
            return Err(Error::Dimension(format!(
                "affine bias has {} entries, expected {d_out}",
                self.node(b).value.len()
            )));
        }
        let mut out = matmul(self.value(x), self.value(w), n, d_in, d_out);
        let bias = self.value(b);
        for row in out.chunks_exact_mut(d_out) {
            for (o, &bj) in row.iter_mut().zip(bias) {
                *o += bj;
            }
        }
        let needs = self.node(x).needs_grad || self.node(w).needs_grad || self.node(b).needs_grad;
        Ok(self.push(vec![n, d_out], out, Op::Affine { x, w, b }, needs))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(self.shape(a).to_vec(), value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).iter().map(|&x| x * factor).collect();
        let needs = self.node(a).needs_grad;
        self.push(self.shape(a).to_vec(), value, Op::Scale(a, factor), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let needs = self.node(a).needs_grad;
        self.push(vec![1], vec![s], Op::Sum(a), needs)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let value = self.value(a).iter().map(|&x| kind.apply(x)).collect();
        let needs = self.node(a).needs_grad;
        self.push(self.shape(a).to_vec(), value, Op::Act(a, kind), needs)
    }

    /// Mean cross entropy of row-wise softmax probabilities against class
    /// indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.matrix_dims(logits, "logits")?;
        if labels.len() != n {
            return Err(Error::Dimension(format!(
                "{} labels for {n} logit rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index(format!("label {bad} out of range for {k} classes")));
        }
        let probs = softmax_rows(self.value(logits), k);
        let mut loss = 0.0;
        for (row, &label) in self.value(logits).chunks_exact(k).zip(labels) {
            loss += log_sum_exp(row) - row[label];
        }
        loss /= n as f64;
        let needs = self.node(logits).needs_grad;
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Batch mean of the per-row L1 distance.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l1 loss")?;
        let rows = match self.shape(a) {
            [r, _] => *r,
            _ => 1,
        };
        let total: f64 = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y).abs())
            .sum();
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(vec![1], vec![total / rows as f64], Op::L1 { a, b }, needs))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.node(loss);
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !root.needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Affine { x, w, b } => {
                    let (n, d_in) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let d_out = node.shape[1];
                    if self.node(*x).needs_grad {
                        let wt = transpose(self.value(*w), d_in, d_out);
                        accumulate(&mut grads, *x, matmul(&g, &wt, n, d_out, d_in));
                    }
                    if self.node(*w).needs_grad {
                        let xt = transpose(self.value(*x), n, d_in);
                        accumulate(&mut grads, *w, matmul(&xt, &g, d_in, n, d_out));
                    }
                    if self.node(*b).needs_grad {
                        let mut gb = vec![0.0; d_out];
                        for row in g.chunks_exact(d_out) {
                            for (s, &v) in gb.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.node(*a).needs_grad {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.node(*b).needs_grad {
                        accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if self.node(*a).needs_grad {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.node(*b).needs_grad {
                        accumulate(&mut grads, *b, g.iter().map(|v| -v).collect());
                    }
                }
                Op::Mul(a, b) => {
                    if self.node(*a).needs_grad {
                        let ga = g.iter().zip(self.value(*b)).map(|(gv, y)| gv * y).collect();
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.node(*b).needs_grad {
                        let gb = g.iter().zip(self.value(*a)).map(|(gv, x)| gv * x).collect();
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Scale(a, f) => {
                    accumulate(&mut grads, *a, g.iter().map(|v| v * f).collect());
                }
                Op::Sum(a) => {
                    let n = self.node(*a).value.len();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Act(a, kind) => {
                    let ga = g
                        .iter()
                        .zip(self.value(*a))
                        .zip(&node.value)
                        .map(|((gv, &x), &y)| gv * kind.derivative(x, y))
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let k = self.shape(*logits)[1];
                    let scale = g[0] / labels.len() as f64;
                    let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (i, &label) in labels.iter().enumerate() {
                        gl[i * k + label] -= scale;
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::L1 { a, b } => {
                    let rows = match self.shape(*a) {
                        [r, _] => *r,
                        _ => 1,
                    };
                    let scale = g[0] / rows as f64;
                    let sign: Vec<f64> = self
                        .value(*a)
                        .iter()
                        .zip(self.value(*b))
                        .map(|(x, y)| scale * signum0(x - y))
                        .collect();
                    if self.node(*b).needs_grad {
                        accumulate(&mut grads, *b, sign.iter().map(|v| -v).collect());
                    }
                    if self.node(*a).needs_grad {
                        accumulate(&mut grads, *a, sign);
                    }
                }
            }
            // Only leaves keep their gradient once propagated.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax of a row-major matrix with `cols` columns.
pub fn softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    out
}

/// Gradients produced by [`Tape::backward`], indexed by leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the leaf does not influence the loss or does not require
    /// a gradient.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Overwrites `t.grad` with the gradient for `v` (zeros when the loss
    /// does not depend on it). Tensors without `requires_grad` are left
    /// untouched.
    pub fn write_to(&self, v: Var, t: &mut Tensor) {
        if !t.requires_grad() {
            return;
        }
        let g = match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; t.len()],
        };
        t.set_grad(g);
    }
}
