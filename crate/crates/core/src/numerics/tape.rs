use crate::error::{Error, Result};

use super::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SqDist(Var, Var),
    LogSoftmaxRows(Var),
    MaskedLogSumExpRows(Var, Vec<f64>),
    ConcatCols(Var, Var),
    WeightedSum(Var, Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// Nodes are appended in evaluation order, which is a topological order;
/// [`Tape::backward`] walks them back to front. Shapes are treated as
/// `[rows, cols]` with 1-d tensors being a single column. Shape errors in
/// the graph operators are programming errors and panic; user-facing
/// shape checks happen at the model boundary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `var`, or zeros of the given length when the loss
    /// does not depend on it.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

fn dims(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (shape[0], 1),
        _ => (shape[0], shape[1..].iter().product()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
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

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes hold consistent shapes")
    }

    /// Records a tensor; it participates in backward iff `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a tensor as a trainable input.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        self.push(shape, data, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = dims(self.shape(a));
        let (k2, m) = dims(self.shape(b));
        assert_eq!(k, k2, "matmul inner extents");
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * m..(p + 1) * m];
                for (o, w) in row.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(vec![n, m], out, Op::MatMul(a, b), ng)
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (n, m) = dims(self.shape(a));
        assert_eq!(self.value(bias).len(), m, "add_row bias extent");
        let bv = self.value(bias);
        let mut out = self.value(a).to_vec();
        for i in 0..n {
            for (o, b) in out[i * m..(i + 1) * m].iter_mut().zip(bv) {
                *o += b;
            }
        }
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(bias);
        self.push(shape, out, Op::AddRow(a, bias), ng)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        assert_eq!(self.value(a).len(), self.value(b).len(), "elementwise extents");
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        self.push(shape, out, op, ng)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push(shape, out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::AddScalar(a, c), |x| x + c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, Op::Ln(a), f64::ln)
    }

    /// Square root; the derivative at 0 is taken to be 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, Op::Sqrt(a), |x| x.max(0.0).sqrt())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.ng(a);
        self.push(vec![1], vec![s], Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(a);
        self.push(vec![1], vec![s], Op::Mean(a), ng)
    }

    /// `[n, m] -> [n]`, summing each row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (n, m) = dims(self.shape(a));
        let v = self.value(a);
        let out = (0..n).map(|i| v[i * m..(i + 1) * m].iter().sum()).collect();
        let ng = self.ng(a);
        self.push(vec![n], out, Op::SumRows(a), ng)
    }

    /// Pairwise squared Euclidean distances: `[n, d] x [k, d] -> [n, k]`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Var {
        let (n, d) = dims(self.shape(a));
        let (k, d2) = dims(self.shape(b));
        assert_eq!(d, d2, "sq_dist feature extents");
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let ai = &av[i * d..(i + 1) * d];
            for j in 0..k {
                let bj = &bv[j * d..(j + 1) * d];
                out[i * k + j] = ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum();
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(vec![n, k], out, Op::SqDist(a, b), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = dims(self.shape(a));
        let v = self.value(a);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &v[i * m..(i + 1) * m];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            for j in 0..m {
                out[i * m + j] = row[j] - lse;
            }
        }
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push(shape, out, Op::LogSoftmaxRows(a), ng)
    }

    /// Row-wise `log sum_j mask_ij * exp(x_ij)` for a 0/1 mask. Rows with an
    /// empty mask produce 0 and receive no gradient.
    pub fn masked_logsumexp_rows(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let (n, m) = dims(self.shape(a));
        assert_eq!(mask.len(), n * m, "mask extent");
        let v = self.value(a);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..m {
                if mask[i * m + j] > 0.0 {
                    mx = mx.max(v[i * m + j]);
                }
            }
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let s: f64 = (0..m)
                .filter(|&j| mask[i * m + j] > 0.0)
                .map(|j| (v[i * m + j] - mx).exp())
                .sum();
            out[i] = mx + s.ln();
        }
        let ng = self.ng(a);
        self.push(vec![n], out, Op::MaskedLogSumExpRows(a, mask), ng)
    }

    /// `[n, a] ++ [n, b] -> [n, a + b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (n, ca) = dims(self.shape(a));
        let (n2, cb) = dims(self.shape(b));
        assert_eq!(n, n2, "concat_cols row extents");
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            out.extend_from_slice(&av[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(vec![n, ca + cb], out, Op::ConcatCols(a, b), ng)
    }

    /// Scalar `sum_i w_i * x_i` with constant weights.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<f64>) -> Var {
        assert_eq!(weights.len(), self.value(a).len(), "weighted_sum extent");
        let s = self.value(a).iter().zip(&weights).map(|(x, w)| x * w).sum();
        let ng = self.ng(a);
        self.push(vec![1], vec![s], Op::WeightedSum(a, weights), ng)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let n = self.node(loss);
        if n.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                n.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = dims(self.shape(*a));
                let (_, m) = dims(self.shape(*b));
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, &mut |da| {
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let brow = &bv[p * m..(p + 1) * m];
                            da[i * k + p] += gi.iter().zip(brow).map(|(x, w)| x * w).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * m..(p + 1) * m].iter_mut().zip(gi) {
                                *d += x * gv;
                            }
                        }
                    }
                });
            }
            Op::AddRow(a, bias) => {
                let m = self.value(*bias).len();
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, x)| *d += x));
                acc(*bias, &mut |db| {
                    for (i, x) in g.iter().enumerate() {
                        db[i % m] += x;
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, x)| *d -= x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += c * x)),
            Op::AddScalar(a, _) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x)),
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if av[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Exp(a) => acc(*a, &mut |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i];
                }
            }),
            Op::Ln(a) => {
                let av = self.value(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / av[i];
                    }
                });
            }
            Op::Sqrt(a) => acc(*a, &mut |d| {
                for i in 0..d.len() {
                    if y[i] > 0.0 {
                        d[i] += g[i] * 0.5 / y[i];
                    }
                }
            }),
            Op::Square(a) => {
                let av = self.value(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += 2.0 * g[i] * av[i];
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if av[i] >= *lo && av[i] <= *hi {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::SumRows(a) => {
                let (_, m) = dims(self.shape(*a));
                acc(*a, &mut |d| {
                    for (i, dv) in d.iter_mut().enumerate() {
                        *dv += g[i / m];
                    }
                });
            }
            Op::SqDist(a, b) => {
                let (n, dd) = dims(self.shape(*a));
                let (k, _) = dims(self.shape(*b));
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |da| {
                    for i in 0..n {
                        for j in 0..k {
                            let gij = g[i * k + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for c in 0..dd {
                                da[i * dd + c] += 2.0 * gij * (av[i * dd + c] - bv[j * dd + c]);
                            }
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..n {
                        for j in 0..k {
                            let gij = g[i * k + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for c in 0..dd {
                                db[j * dd + c] += 2.0 * gij * (bv[j * dd + c] - av[i * dd + c]);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                let (n, m) = dims(self.shape(*a));
                acc(*a, &mut |d| {
                    for i in 0..n {
                        let gs: f64 = g[i * m..(i + 1) * m].iter().sum();
                        for j in 0..m {
                            d[i * m + j] += g[i * m + j] - y[i * m + j].exp() * gs;
                        }
                    }
                });
            }
            Op::MaskedLogSumExpRows(a, mask) => {
                let (n, m) = dims(self.shape(*a));
                let av = self.value(*a);
                acc(*a, &mut |d| {
                    for i in 0..n {
                        for j in 0..m {
                            if mask[i * m + j] > 0.0 {
                                d[i * m + j] += g[i] * (av[i * m + j] - y[i]).exp();
                            }
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (n, ca) = dims(self.shape(*a));
                let (_, cb) = dims(self.shape(*b));
                let w = ca + cb;
                acc(*a, &mut |d| {
                    for i in 0..n {
                        for c in 0..ca {
                            d[i * ca + c] += g[i * w + c];
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..n {
                        for c in 0..cb {
                            d[i * cb + c] += g[i * w + ca + c];
                        }
                    }
                });
            }
            Op::WeightedSum(a, w) => acc(*a, &mut |d| {
                for i in 0..d.len() {
                    d[i] += g[0] * w[i];
                }
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::from_vec(vec![3.0]));
        let sq = tape.mul(w, w);
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &[6.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::from_vec(vec![1.0, 2.0]));
        let c = tape.constant(vec![2], vec![5.0, 6.0]);
        let loss = tape.sum(c);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get_or_zeros(w, 2), vec![0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::from_vec(vec![1.0, 2.0]));
        let e = tape.exp(w);
        assert!(matches!(tape.backward(e), Err(Error::Contract(_))));
    }

    #[test]
    fn masked_logsumexp_matches_direct_sum() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![2, 3], vec![0.1, -2.0, 3.0, 1.0, 1.0, 1.0]);
        let out = tape.masked_logsumexp_rows(x, vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let v = tape.value(out);
        assert!((v[0] - (0.1f64.exp() + 3.0f64.exp()).ln()).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn replay_yields_identical_tape() {
        let build = || {
            let mut tape = Tape::new();
            let a = tape.param(&Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
            let b = tape.constant(vec![2, 2], vec![0.3, 0.1, -0.7, 2.0]);
            let m = tape.matmul(a, b);
            let r = tape.relu(m);
            let _ = tape.mean(r);
            tape
        };
        assert_eq!(build(), build());
    }
}
