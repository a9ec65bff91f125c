//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] is rebuilt for every forward pass: the graph snapshot bound to
//! the derivative network changes from one interval to the next, so a static
//! graph buys nothing. Leaves are created with [`Tape::leaf`]; every other
//! node is produced by one of the typed op methods and stores its forward
//! value. [`Tape::backward`] walks the nodes in reverse recording order.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// The operation that produced a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Scale,
    MulScalar,
    Hadamard,
    MulRowVector,
    Tanh,
    Sigmoid,
    GatherRows,
    ScatterMeanRows,
    ConcatRows,
    Transpose,
    RowKron,
    RowSoftmaxCrossEntropy,
    Sum,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    MulScalar {
        scalar: usize,
        x: usize,
    },
    Hadamard(usize, usize),
    MulRowVector {
        x: usize,
        v: usize,
    },
    Tanh(usize),
    Sigmoid(usize),
    GatherRows {
        x: usize,
        index: Vec<usize>,
    },
    ScatterMeanRows {
        x: usize,
        index: Vec<usize>,
        weights: Option<Vec<f64>>,
        counts: Vec<usize>,
    },
    ConcatRows(usize, usize),
    Transpose(usize),
    RowKron(usize, usize),
    RowSoftmaxCrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Matrix,
    },
    Sum(usize),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Scale(..) => OpKind::Scale,
            Op::MulScalar { .. } => OpKind::MulScalar,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::MulRowVector { .. } => OpKind::MulRowVector,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::ScatterMeanRows { .. } => OpKind::ScatterMeanRows,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::Transpose(_) => OpKind::Transpose,
            Op::RowKron(..) => OpKind::RowKron,
            Op::RowSoftmaxCrossEntropy { .. } => OpKind::RowSoftmaxCrossEntropy,
            Op::Sum(_) => OpKind::Sum,
        }
    }
}

struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.id].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.id].op.kind()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        let id = self.nodes.len();
        let (rows, cols) = value.shape();
        self.nodes.push(Node { op, value });
        Var { id, rows, cols }
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a.id, b.id), v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a.id, b.id), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a.id, b.id), v))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a.id, c), v)
    }

    /// Multiplication by a 1x1 node (a trainable gate, for instance).
    pub fn mul_scalar(&mut self, scalar: Var, x: Var) -> Result<Var> {
        if scalar.shape() != (1, 1) {
            return Err(Error::dim(
                "mul_scalar",
                format!("scalar operand has shape {:?}", scalar.shape()),
            ));
        }
        let s = self.value(scalar).item();
        let v = self.value(x).scale(s);
        Ok(self.push(
            Op::MulScalar {
                scalar: scalar.id,
                x: x.id,
            },
            v,
        ))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a.id, b.id), v))
    }

    /// Multiplies every row of `x` elementwise by the `1 x cols` vector `v`
    /// (a diagonal weight matrix applied on the right).
    pub fn mul_row_vector(&mut self, x: Var, v: Var) -> Result<Var> {
        if v.rows != 1 || v.cols != x.cols {
            return Err(Error::dim(
                "mul_row_vector",
                format!("{:?} by row vector {:?}", x.shape(), v.shape()),
            ));
        }
        let xv = self.value(x);
        let diag = self.value(v).as_slice();
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, d) in out.row_mut(r).iter_mut().zip(diag) {
                *o *= d;
            }
        }
        Ok(self.push(Op::MulRowVector { x: x.id, v: v.id }, out))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a.id), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a.id), v)
    }

    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let v = self.value(x).gather_rows(index)?;
        Ok(self.push(
            Op::GatherRows {
                x: x.id,
                index: index.to_vec(),
            },
            v,
        ))
    }

    /// Row `o` of the output is the (optionally weighted) mean of the rows
    /// `i` of `x` with `index[i] == o`. Output rows that receive nothing are
    /// zero. The mean divides by the number of contributing rows, counted
    /// with multiplicity; weights scale contributions but not the count.
    pub fn scatter_mean_rows(
        &mut self,
        x: Var,
        index: &[usize],
        weights: Option<&[f64]>,
        out_rows: usize,
    ) -> Result<Var> {
        if index.len() != x.rows {
            return Err(Error::dim(
                "scatter_mean_rows",
                format!("{} indices for {} rows", index.len(), x.rows),
            ));
        }
        if let Some(w) = weights {
            if w.len() != x.rows {
                return Err(Error::dim(
                    "scatter_mean_rows",
                    format!("{} weights for {} rows", w.len(), x.rows),
                ));
            }
        }
        let mut counts = vec![0usize; out_rows];
        for &o in index {
            if o >= out_rows {
                return Err(Error::Index {
                    op: "scatter_mean_rows",
                    index: o,
                    len: out_rows,
                });
            }
            counts[o] += 1;
        }
        let xv = self.value(x);
        let mut out = Matrix::zeros(out_rows, x.cols);
        for (i, &o) in index.iter().enumerate() {
            let c = weights.map_or(1.0, |w| w[i]) / counts[o] as f64;
            let src = xv.row(i);
            for (dst, s) in out.row_mut(o).iter_mut().zip(src) {
                *dst += c * s;
            }
        }
        Ok(self.push(
            Op::ScatterMeanRows {
                x: x.id,
                index: index.to_vec(),
                weights: weights.map(<[f64]>::to_vec),
                counts,
            },
            out,
        ))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).concat_rows(self.value(b))?;
        Ok(self.push(Op::ConcatRows(a.id, b.id), v))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a.id), v)
    }

    /// Row-wise Kronecker product: `out[i, j * n + k] = a[i, j] * b[i, k]`.
    pub fn row_kron(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.rows != b.rows {
            return Err(Error::dim(
                "row_kron",
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let (m, n) = (a.cols, b.cols);
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Matrix::zeros(a.rows, m * n);
        for i in 0..a.rows {
            let (ar, br) = (av.row(i), bv.row(i));
            let or = out.row_mut(i);
            for j in 0..m {
                for k in 0..n {
                    or[j * n + k] = ar[j] * br[k];
                }
            }
        }
        Ok(self.push(Op::RowKron(a.id, b.id), out))
    }

    /// Mean over rows of `-log softmax(logits[i])[targets[i]]`, computed
    /// with max subtraction. Returns a 1x1 node.
    pub fn row_softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        if targets.len() != logits.rows {
            return Err(Error::dim(
                "row_softmax_cross_entropy",
                format!("{} targets for {} rows", targets.len(), logits.rows),
            ));
        }
        if targets.is_empty() {
            return Err(Error::Contract("cross entropy over zero rows".into()));
        }
        let lv = self.value(logits);
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= lv.cols() {
                return Err(Error::Index {
                    op: "row_softmax_cross_entropy",
                    index: t,
                    len: lv.cols(),
                });
            }
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &x) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            for p in probs.row_mut(i) {
                *p /= z;
            }
            total += -(row[t] - max - z.ln());
        }
        let n = targets.len() as f64;
        Ok(self.push(
            Op::RowSoftmaxCrossEntropy {
                logits: logits.id,
                targets: targets.to_vec(),
                probs,
            },
            Matrix::scalar(total / n),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a.id), v)
    }

    /// Gradients of the 1x1 node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        self.backward_from(loss, Matrix::scalar(1.0))
    }

    /// Vector-Jacobian product: propagates the cotangent `seed` attached to
    /// `output` back to every node.
    pub fn backward_from(&self, output: Var, seed: Matrix) -> Result<Gradients> {
        if seed.shape() != output.shape() {
            return Err(Error::dim(
                "backward_from",
                format!("seed {:?} for node {:?}", seed.shape(), output.shape()),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::new();
        grads.resize_with(output.id + 1, || None);
        grads[output.id] = Some(seed);

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    accumulate(&mut grads, *a, g.matmul(&bv.transpose())?)?;
                    accumulate(&mut grads, *b, av.transpose().matmul(&g)?)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.scale(-1.0))?;
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c))?,
                Op::MulScalar { scalar, x } => {
                    let s = self.nodes[*scalar].value.item();
                    let xv = &self.nodes[*x].value;
                    accumulate(&mut grads, *scalar, Matrix::scalar(g.dot(xv)?))?;
                    accumulate(&mut grads, *x, g.scale(s))?;
                }
                Op::Hadamard(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    accumulate(&mut grads, *a, g.hadamard(bv)?)?;
                    accumulate(&mut grads, *b, g.hadamard(av)?)?;
                }
                Op::MulRowVector { x, v } => {
                    let xv = &self.nodes[*x].value;
                    let diag = self.nodes[*v].value.as_slice();
                    let mut gx = g.clone();
                    let mut gv = Matrix::zeros(1, diag.len());
                    for r in 0..g.rows() {
                        for c in 0..diag.len() {
                            gx.row_mut(r)[c] *= diag[c];
                            gv.as_mut_slice()[c] += g.get(r, c) * xv.get(r, c);
                        }
                    }
                    accumulate(&mut grads, *x, gx)?;
                    accumulate(&mut grads, *v, gv)?;
                }
                Op::Tanh(a) => {
                    let d = g.zip_map(&node.value, "tanh'", |g, y| g * (1.0 - y * y))?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_map(&node.value, "sigmoid'", |g, y| g * y * (1.0 - y))?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::GatherRows { x, index } => {
                    let (rows, cols) = self.nodes[*x].value.shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    for (i, &src) in index.iter().enumerate() {
                        for (d, s) in gx.row_mut(src).iter_mut().zip(g.row(i)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::ScatterMeanRows {
                    x,
                    index,
                    weights,
                    counts,
                } => {
                    let (rows, cols) = self.nodes[*x].value.shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    for (i, &o) in index.iter().enumerate() {
                        let c = weights.as_ref().map_or(1.0, |w| w[i]) / counts[o] as f64;
                        for (d, s) in gx.row_mut(i).iter_mut().zip(g.row(o)) {
                            *d += c * s;
                        }
                    }
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.nodes[*a].value.rows();
                    accumulate(&mut grads, *a, g.slice_rows(0, ra))?;
                    accumulate(&mut grads, *b, g.slice_rows(ra, g.rows()))?;
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose())?,
                Op::RowKron(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (m, n) = (av.cols(), bv.cols());
                    let mut ga = Matrix::zeros(av.rows(), m);
                    let mut gb = Matrix::zeros(bv.rows(), n);
                    for i in 0..av.rows() {
                        let gr = g.row(i);
                        for j in 0..m {
                            for k in 0..n {
                                let gi = gr[j * n + k];
                                ga.row_mut(i)[j] += gi * bv.get(i, k);
                                gb.row_mut(i)[k] += gi * av.get(i, j);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::RowSoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let upstream = g.item() / targets.len() as f64;
                    let mut gl = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        gl.row_mut(i)[t] -= 1.0;
                    }
                    accumulate(&mut grads, *logits, gl.scale(upstream))?;
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.nodes[*a].value.shape();
                    accumulate(&mut grads, *a, Matrix::filled(rows, cols, g.item()))?;
                }
            }
            grads[id] = Some(g);
        }
        let mut out = Gradients {
            grads,
            shapes: Vec::new(),
        };
        out.shapes = self.nodes[..=output.id]
            .iter()
            .map(|n| n.value.shape())
            .collect();
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: usize, g: Matrix) -> Result<()> {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Result of a backward sweep. Nodes the output does not depend on (or that
/// were recorded after it) report a zero gradient.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Matrix {
        match self.grads.get(v.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Matrix::zeros(v.rows, v.cols),
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads.get_mut(v.id).and_then(Option::take) {
            Some(g) => g,
            None => Matrix::zeros(v.rows, v.cols),
        }
    }

    /// Number of nodes covered by the sweep.
    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }
}

/// Per-coordinate comparison of an analytic gradient against central
/// differences. `f` returns the value and the analytic gradient at a point.
///
/// The relative error of coordinate `i` is
/// `|g_auto - g_fd| / max(1e-12, |g_auto| + |g_fd|)`.
pub fn grad_check_errors<F>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    grad_check_errors_with(f, x, eps, Stencil::TwoPoint)
}

/// Central finite-difference stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h^2).
    TwoPoint,
    /// `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, error O(h^4).
    FourPoint,
}

pub fn grad_check_errors_with<F>(mut f: F, x: &[f64], eps: f64, stencil: Stencil) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (fx, auto) = f(x)?;
    if !fx.is_finite() {
        return Err(Error::Numeric(format!("f(x) = {fx}")));
    }
    if auto.len() != x.len() {
        return Err(Error::dim(
            "grad_check",
            format!("{} gradient entries for {} coordinates", auto.len(), x.len()),
        ));
    }
    let mut probe = x.to_vec();
    let mut eval = |probe: &mut Vec<f64>, i: usize, step: f64| -> Result<f64> {
        probe[i] = x[i] + step;
        let (v, _) = f(probe)?;
        probe[i] = x[i];
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value while perturbing coordinate {i}"
            )));
        }
        Ok(v)
    };
    let mut errors = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let d1 = eval(&mut probe, i, eps)? - eval(&mut probe, i, -eps)?;
        let fd = match stencil {
            Stencil::TwoPoint => d1 / (2.0 * eps),
            Stencil::FourPoint => {
                let d2 = eval(&mut probe, i, 2.0 * eps)? - eval(&mut probe, i, -2.0 * eps)?;
                (8.0 * d1 - d2) / (12.0 * eps)
            }
        };
        let denom = (auto[i].abs() + fd.abs()).max(1e-12);
        errors.push((auto[i] - fd).abs() / denom);
    }
    Ok(errors)
}

/// Maximum coordinate-wise relative error; see [`grad_check_errors`].
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    Ok(grad_check_errors(f, x, eps)?
        .into_iter()
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows)
    }

    #[test]
    fn hadamard_tanh_matmul_values() {
        let mut t = Tape::new();
        let a = t.leaf(m(&[&[1.0, 2.0]]));
        let b = t.leaf(m(&[&[3.0, 4.0]]));
        let h = t.hadamard(a, b).unwrap();
        assert_eq!(t.value(h), &m(&[&[3.0, 8.0]]));

        let z = t.leaf(m(&[&[0.0]]));
        let th = t.tanh(z);
        assert_eq!(t.value(th), &m(&[&[0.0]]));

        let ones23 = t.leaf(Matrix::filled(2, 3, 1.0));
        let ones31 = t.leaf(Matrix::filled(3, 1, 1.0));
        let p = t.matmul(ones23, ones31).unwrap();
        assert_eq!(t.value(p), &m(&[&[3.0], &[3.0]]));
        assert_eq!(t.kind(p), OpKind::MatMul);
    }

    #[test]
    fn product_rule_and_tanh_slope() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[2.0]]));
        let y = t.leaf(m(&[&[5.0]]));
        let h = t.hadamard(x, y).unwrap();
        let l = t.sum(h);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x), m(&[&[5.0]]));
        assert_eq!(g.get(y), m(&[&[2.0]]));

        let mut t = Tape::new();
        let x = t.leaf(m(&[&[0.0]]));
        let th = t.tanh(x);
        let l = t.sum(th);
        assert_eq!(t.backward(l).unwrap().get(x), m(&[&[1.0]]));
    }

    #[test]
    fn shape_and_index_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 3));
        assert!(matches!(t.matmul(a, a), Err(Error::Dimension { .. })));
        assert!(matches!(t.gather_rows(a, &[5]), Err(Error::Index { .. })));
        assert!(matches!(
            t.scatter_mean_rows(a, &[0, 9], None, 3),
            Err(Error::Index { .. })
        ));
        assert!(matches!(t.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_nodes_get_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[1.0, 2.0]]));
        let unused = t.leaf(m(&[&[7.0]]));
        let l = t.sum(x);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(unused), m(&[&[0.0]]));
    }

    #[test]
    fn scatter_mean_splits_gradient_by_group_size() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[1.0], &[2.0], &[3.0]]));
        let s = t.scatter_mean_rows(x, &[0, 0, 1], None, 3).unwrap();
        assert_eq!(t.value(s), &m(&[&[1.5], &[3.0], &[0.0]]));
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x), m(&[&[0.5], &[0.5], &[1.0]]));
    }

    #[test]
    fn grad_check_square_and_constant() {
        let sq = |x: &[f64]| Ok((x[0] * x[0], vec![2.0 * x[0]]));
        assert!(grad_check(sq, &[3.0], 1e-6).unwrap() < 1e-8);
        let constant = |_: &[f64]| Ok((4.0, vec![0.0]));
        assert_eq!(grad_check(constant, &[1.0], 1e-6).unwrap(), 0.0);
        let bad = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        assert!(matches!(grad_check(bad, &[1.0], 1e-6), Err(Error::Numeric(_))));
    }

    #[test]
    fn linearity_of_two_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xv = Matrix::uniform(3, 3, 1.0, &mut rng);
        let wv = Matrix::uniform(3, 3, 1.0, &mut rng);
        let (a, b) = (0.7, -1.3);
        let grads_of = |coef: (f64, f64)| {
            let mut t = Tape::new();
            let x = t.leaf(xv.clone());
            let w = t.leaf(wv.clone());
            let p = t.matmul(x, w).unwrap();
            let th = t.tanh(p);
            let l1 = t.sum(th);
            let sg = t.sigmoid(x);
            let l2 = t.sum(sg);
            let s1 = t.scale(l1, coef.0);
            let s2 = t.scale(l2, coef.1);
            let l = t.add(s1, s2).unwrap();
            t.backward(l).unwrap().get(x)
        };
        let combined = grads_of((a, b));
        let g1 = grads_of((1.0, 0.0));
        let g2 = grads_of((0.0, 1.0));
        for i in 0..combined.len() {
            let lin = a * g1.as_slice()[i] + b * g2.as_slice()[i];
            assert!((combined.as_slice()[i] - lin).abs() < 1e-12);
        }
    }
}
