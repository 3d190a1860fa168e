//! Tape-based reverse mode over dense matrices.
//!
//! Every operation records its inputs and output value; [`Tape::backward`]
//! walks the tape in reverse from a scalar root. Activation slopes are
//! themselves differentiable nodes, which is what lets a loss built from
//! layer Jacobians be differentiated with respect to the weights.
//!
//! Shape mismatches panic: graphs are assembled by this crate from
//! already-validated networks and batches.

use crate::linalg::{gemm, Matrix, Trans};
use crate::network::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Slope(Var, Activation),
    RepeatRows(Var, usize),
    GroupSumRows(Var, usize),
    Reshape(Var),
    MulCol(Var, Var),
    Square(Var),
    Sum(Var),
    Softmax(Var),
    LogSoftmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints indexed by [`Var`]; `None` for nodes the root does not depend on
/// through any parameter.
#[derive(Debug)]
pub struct Grads(Vec<Option<Matrix>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.0[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.0[v.0].take()
    }
}

fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

fn log_softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

fn repeat_rows(m: &Matrix, times: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows() * times, m.cols());
    for r in 0..m.rows() {
        for t in 0..times {
            out.row_mut(r * times + t).copy_from_slice(m.row(r));
        }
    }
    out
}

fn group_sum_rows(m: &Matrix, group: usize) -> Matrix {
    assert_eq!(m.rows() % group, 0, "group_sum_rows: rows not divisible");
    let mut out = Matrix::zeros(m.rows() / group, m.cols());
    for r in 0..m.rows() {
        let dst = r / group;
        for (o, v) in out.row_mut(dst).iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

fn column_sums(m: &Matrix) -> Matrix {
    group_sum_rows(m, m.rows())
}

fn mul_col(m: &Matrix, col: &Matrix) -> Matrix {
    assert_eq!(col.shape(), (m.rows(), 1), "mul_col: column shape");
    let mut out = m.clone();
    for r in 0..out.rows() {
        let s = col[(r, 0)];
        out.row_mut(r).iter_mut().for_each(|v| *v *= s);
    }
    out
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.axpy(1.0, &g).expect("adjoint shape"),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar: node is not 1x1");
        m[(0, 0)]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = gemm(self.value(a), Trans::No, self.value(b), Trans::No);
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = gemm(self.value(a), Trans::No, self.value(b), Trans::Yes);
        self.push(v, Op::MatMulNT(a, b), &[a, b])
    }

    /// Adds the `1 x c` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row: bias must be a row");
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(r.row(0)) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b)).expect("add shape");
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b)).expect("sub shape");
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).hadamard(self.value(b)).expect("mul shape");
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let v = self.value(a).map(|z| act.apply(z));
        self.push(v, Op::Act(a, act), &[a])
    }

    /// Elementwise activation derivative `phi'(a)`.
    pub fn slope(&mut self, a: Var, act: Activation) -> Var {
        let v = self.value(a).map(|z| act.derivative(z));
        self.push(v, Op::Slope(a, act), &[a])
    }

    /// Repeats each row `times` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let v = repeat_rows(self.value(a), times);
        self.push(v, Op::RepeatRows(a, times), &[a])
    }

    /// Sums each run of `group` consecutive rows.
    pub fn group_sum_rows(&mut self, a: Var, group: usize) -> Var {
        let v = group_sum_rows(self.value(a), group);
        self.push(v, Op::GroupSumRows(a, group), &[a])
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = Matrix::from_vec(rows, cols, self.value(a).data().to_vec()).expect("reshape size");
        self.push(v, Op::Reshape(a), &[a])
    }

    /// Scales row `i` of `a` by `col[i]`, `col` being `rows x 1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let v = mul_col(self.value(a), self.value(col));
        self.push(v, Op::MulCol(a, col), &[a, col])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::filled(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::Softmax(a), &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        self.push(v, Op::LogSoftmax(a), &[a])
    }

    /// Adjoints of every node with respect to the scalar `root`.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(
            self.value(root).shape(),
            (1, 1),
            "backward: root is not scalar"
        );
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let wants = |v: Var| self.nodes[v.0].needs_grad;
            let val = |v: Var| &self.nodes[v.0].value;
            match node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], gemm(&g, Trans::No, val(b), Trans::Yes));
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], gemm(val(a), Trans::Yes, &g, Trans::No));
                    }
                }
                Op::MatMulNT(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], gemm(&g, Trans::No, val(b), Trans::No));
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], gemm(&g, Trans::Yes, val(a), Trans::No));
                    }
                }
                Op::AddRow(a, row) => {
                    if wants(row) {
                        accumulate(&mut grads[row.0], column_sums(&g));
                    }
                    if wants(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(b) {
                        accumulate(&mut grads[b.0], g.scale(-1.0));
                    }
                    if wants(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.hadamard(val(b)).expect("shape"));
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], g.hadamard(val(a)).expect("shape"));
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads[a.0], g.scale(s)),
                Op::Act(a, act) => {
                    let d = g
                        .zip_map(val(a), |gv, z| gv * act.derivative(z))
                        .expect("shape");
                    accumulate(&mut grads[a.0], d);
                }
                Op::Slope(a, act) => {
                    let d = g
                        .zip_map(val(a), |gv, z| gv * act.second_derivative(z))
                        .expect("shape");
                    accumulate(&mut grads[a.0], d);
                }
                Op::RepeatRows(a, times) => accumulate(&mut grads[a.0], group_sum_rows(&g, times)),
                Op::GroupSumRows(a, group) => accumulate(&mut grads[a.0], repeat_rows(&g, group)),
                Op::Reshape(a) => {
                    let (r, c) = val(a).shape();
                    accumulate(
                        &mut grads[a.0],
                        Matrix::from_vec(r, c, g.into_data()).expect("reshape size"),
                    );
                }
                Op::MulCol(a, col) => {
                    if wants(col) {
                        let av = val(a);
                        let mut dc = Matrix::zeros(av.rows(), 1);
                        for r in 0..av.rows() {
                            dc[(r, 0)] = crate::linalg::dot(g.row(r), av.row(r));
                        }
                        accumulate(&mut grads[col.0], dc);
                    }
                    if wants(a) {
                        accumulate(&mut grads[a.0], mul_col(&g, val(col)));
                    }
                }
                Op::Square(a) => {
                    let d = g.zip_map(val(a), |gv, x| 2.0 * gv * x).expect("shape");
                    accumulate(&mut grads[a.0], d);
                }
                Op::Sum(a) => {
                    let (r, c) = val(a).shape();
                    accumulate(&mut grads[a.0], Matrix::filled(r, c, g[(0, 0)]));
                }
                Op::Softmax(a) => {
                    let s = &node.value;
                    let mut d = Matrix::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let inner = crate::linalg::dot(g.row(r), s.row(r));
                        for ((o, gv), sv) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(s.row(r)) {
                            *o = sv * (gv - inner);
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::LogSoftmax(a) => {
                    let p = softmax_rows(val(a));
                    let mut d = Matrix::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for ((o, gv), pv) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(p.row(r)) {
                            *o = gv - pv * total;
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
            }
        }
        Grads(grads)
    }
}
