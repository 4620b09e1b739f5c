//! Tape-based reverse-mode automatic differentiation over dense `f64`
//! matrices.
//!
//! Every operation appends a node to a [`Tape`]. Adjoints are themselves
//! expressed with tape operations, so [`Tape::grad`] with
//! `create_graph = true` records the gradient computation and a later
//! backward pass can differentiate through it. That is what lets the
//! condenser differentiate a matching loss through unrolled SGD steps.
//!
//! ```
//! use geom_core::autodiff::Tape;
//! use ndarray::array;
//!
//! let tape = Tape::new();
//! let x = tape.param(array![[2.0]]);
//! let cube = x.mul(x).unwrap().mul(x).unwrap();
//! let dx = tape.grad(cube, &[x], true).unwrap()[0];
//! let ddx = tape.grad(dx.sum(), &[x], false).unwrap()[0];
//! assert_eq!(dx.scalar(), 12.0);
//! assert_eq!(ddx.scalar(), 12.0);
//! ```

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use thiserror::Error;

use crate::sparse::CsrMatrix;

pub type Matrix = Array2<f64>;

pub type Shape = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Shape, rhs: Shape },
    #[error("{op}: entry {value} at ({row}, {col}) is outside the domain")]
    Domain {
        op: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("backward needs a 1x1 loss, got shape {0:?}")]
    NonScalarLoss(Shape),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// A constant sparse left operand together with its transpose.
#[derive(Debug)]
pub struct SparseOperand {
    forward: CsrMatrix,
    transpose: CsrMatrix,
}

impl SparseOperand {
    pub fn new(matrix: CsrMatrix) -> Arc<Self> {
        let transpose = matrix.transpose();
        Arc::new(Self {
            forward: matrix,
            transpose,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.forward
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// Sparse (constant) times dense; the flag selects the transpose.
    SpMM(Arc<SparseOperand>, bool, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Recip(usize),
    Transpose(usize),
    AddRow(usize, usize),
    BroadcastRows(usize),
    BroadcastCols(usize),
    BroadcastScalar(usize),
    SumRows(usize),
    SumCols(usize),
    SumAll(usize),
    LogSoftmax(usize),
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of operations. Confined to one thread.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that gradients flow into.
    pub fn param(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_param(&self, value: f64) -> Var<'_> {
        self.param(Array2::from_elem((1, 1), value))
    }

    /// Runs `f` with recording disabled: every value created inside is a
    /// constant.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = self.recording.replace(false);
        let out = f();
        self.recording.set(prev);
        out
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    fn value_of(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Records the result of an operation; inputs decide whether it is
    /// differentiable.
    fn record(&self, value: Matrix, op: Op, inputs: &[usize]) -> Var<'_> {
        let requires = self.recording.get() && inputs.iter().any(|&i| self.requires(i));
        if requires {
            self.push(value, op, true)
        } else {
            self.push(value, Op::Leaf, false)
        }
    }

    /// Gradients of the scalar `loss` with respect to `wrt`.
    ///
    /// With `create_graph` the returned gradients are differentiable tape
    /// values; otherwise they are constants. Inputs that `loss` does not
    /// depend on receive zeros.
    pub fn grad<'t>(&'t self, loss: Var<'t>, wrt: &[Var<'t>], create_graph: bool) -> Result<Vec<Var<'t>>> {
        let shape = loss.shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let adjoints = if create_graph {
            self.propagate(loss)
        } else {
            self.no_grad(|| self.propagate(loss))
        };
        Ok(wrt
            .iter()
            .map(|v| match adjoints[v.id] {
                Some(g) => g,
                None => self.constant(Array2::zeros(v.shape())),
            })
            .collect())
    }

    /// First-order gradients of every differentiable leaf reachable from
    /// `loss`.
    pub fn backward<'t>(&'t self, loss: Var<'t>) -> Result<Gradients> {
        let shape = loss.shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let adjoints = self.no_grad(|| self.propagate(loss));
        let nodes = self.nodes.borrow();
        let grads = adjoints
            .iter()
            .enumerate()
            .map(|(id, adj)| match (adj, &nodes[id].op) {
                (Some(g), Op::Leaf) if nodes[id].requires_grad => Some(Rc::clone(&nodes[g.id].value)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate<'t>(&'t self, loss: Var<'t>) -> Vec<Option<Var<'t>>> {
        let mut adjoints: Vec<Option<Var<'t>>> = vec![None; loss.id + 1];
        if !self.requires(loss.id) {
            return adjoints;
        }
        adjoints[loss.id] = Some(self.constant(Array2::ones((1, 1))));
        for id in (0..=loss.id).rev() {
            let Some(g) = adjoints[id] else { continue };
            let (op, requires) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].requires_grad)
            };
            if !requires {
                continue;
            }
            let out = Var { tape: self, id };
            for (input, contribution) in self.adjoint(&op, out, g) {
                if !self.requires(input) {
                    continue;
                }
                adjoints[input] = Some(match adjoints[input] {
                    Some(acc) => acc.add(contribution).expect("adjoint shapes agree"),
                    None => contribution,
                });
            }
        }
        adjoints
    }

    /// Vector-Jacobian products of one node, as tape operations.
    fn adjoint<'t>(&'t self, op: &Op, out: Var<'t>, g: Var<'t>) -> Vec<(usize, Var<'t>)> {
        let var = |id| Var { tape: self, id };
        let ok = |r: Result<Var<'t>>| r.expect("adjoint shapes agree");
        match *op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut v = Vec::with_capacity(2);
                if self.requires(a) {
                    v.push((a, ok(g.matmul(var(b).t()))));
                }
                if self.requires(b) {
                    v.push((b, ok(var(a).t().matmul(g))));
                }
                v
            }
            Op::SpMM(ref s, transposed, x) => {
                vec![(x, ok(g.sparse_product(Arc::clone(s), !transposed)))]
            }
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => vec![(a, g), (b, g.scale(-1.0))],
            Op::Mul(a, b) => {
                let mut v = Vec::with_capacity(2);
                if self.requires(a) {
                    v.push((a, ok(g.mul(var(b)))));
                }
                if self.requires(b) {
                    v.push((b, ok(g.mul(var(a)))));
                }
                v
            }
            Op::Scale(a, c) => vec![(a, g.scale(c))],
            Op::Relu(a) => {
                let mask = self.value_of(a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                vec![(a, ok(g.mul(self.constant(mask))))]
            }
            Op::Exp(a) => vec![(a, ok(g.mul(out)))],
            Op::Log(a) => {
                let inv = var(a).recip().expect("log input is positive");
                vec![(a, ok(g.mul(inv)))]
            }
            Op::Recip(a) => vec![(a, ok(ok(g.mul(out)).mul(out)).scale(-1.0))],
            Op::Transpose(a) => vec![(a, g.t())],
            Op::AddRow(a, row) => vec![(a, g), (row, g.sum_rows())],
            Op::BroadcastRows(a) => vec![(a, g.sum_rows())],
            Op::BroadcastCols(a) => vec![(a, g.sum_cols())],
            Op::BroadcastScalar(a) => vec![(a, g.sum())],
            Op::SumRows(a) => {
                let rows = var(a).shape().0;
                vec![(a, ok(g.broadcast_rows(rows)))]
            }
            Op::SumCols(a) => {
                let cols = var(a).shape().1;
                vec![(a, ok(g.broadcast_cols(cols)))]
            }
            Op::SumAll(a) => {
                let shape = var(a).shape();
                vec![(a, ok(g.broadcast_scalar(shape)))]
            }
            Op::LogSoftmax(a) => {
                // d/da = g - softmax * rowsum(g)
                let cols = out.shape().1;
                let softmax = out.exp();
                let spread = ok(g.sum_cols().broadcast_cols(cols));
                vec![(a, ok(g.sub(ok(softmax.mul(spread)))))]
            }
        }
    }
}

/// First-order gradients keyed by leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Rc<Matrix>>>,
}

impl Gradients {
    /// Gradient of a differentiable leaf, or `None` if the loss does not
    /// depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Matrix> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`] but returns zeros for untouched leaves.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Matrix {
        self.get(var).cloned().unwrap_or_else(|| Array2::zeros(var.shape()))
    }
}

fn same_shape(op: &'static str, a: Var<'_>, b: Var<'_>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        Ok(())
    } else {
        Err(AutodiffError::Shape { op, lhs: sa, rhs: sb })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Shape {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    /// The single entry of a 1x1 value.
    pub fn scalar(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "scalar() on a non-scalar value");
        v[[0, 0]]
    }

    fn unary(self, value: Matrix, op: Op) -> Var<'t> {
        self.tape.record(value, op, &[self.id])
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        if a.ncols() != b.nrows() {
            return Err(AutodiffError::Shape {
                op: "matmul",
                lhs: a.dim(),
                rhs: b.dim(),
            });
        }
        let value = a.dot(&*b);
        Ok(self.tape.record(value, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    /// `S · self` for a constant sparse `S` (or `Sᵀ · self`).
    pub fn sparse_product(self, sparse: Arc<SparseOperand>, transposed: bool) -> Result<Var<'t>> {
        let m = if transposed { &sparse.transpose } else { &sparse.forward };
        let x = self.value();
        if m.cols() != x.nrows() {
            return Err(AutodiffError::Shape {
                op: "sparse_product",
                lhs: (m.rows(), m.cols()),
                rhs: x.dim(),
            });
        }
        let value = m.matmul_dense(&x);
        Ok(self.unary(value, Op::SpMM(sparse, transposed, self.id)))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        same_shape("add", self, rhs)?;
        let value = &*self.value() + &*rhs.value();
        Ok(self.tape.record(value, Op::Add(self.id, rhs.id), &[self.id, rhs.id]))
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        same_shape("sub", self, rhs)?;
        let value = &*self.value() - &*rhs.value();
        Ok(self.tape.record(value, Op::Sub(self.id, rhs.id), &[self.id, rhs.id]))
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        same_shape("mul", self, rhs)?;
        let value = &*self.value() * &*rhs.value();
        Ok(self.tape.record(value, Op::Mul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        let value = &*self.value() * factor;
        self.unary(value, Op::Scale(self.id, factor))
    }

    pub fn relu(self) -> Var<'t> {
        let value = self.value().mapv(|x| x.max(0.0));
        self.unary(value, Op::Relu(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        let value = self.value().mapv(f64::exp);
        self.unary(value, Op::Exp(self.id))
    }

    pub fn log(self) -> Result<Var<'t>> {
        let v = self.value();
        if let Some(((row, col), &value)) = v.indexed_iter().find(|(_, &x)| !(x > 0.0)) {
            return Err(AutodiffError::Domain {
                op: "log",
                row,
                col,
                value,
            });
        }
        let value = v.mapv(f64::ln);
        Ok(self.unary(value, Op::Log(self.id)))
    }

    pub fn recip(self) -> Result<Var<'t>> {
        let v = self.value();
        if let Some(((row, col), &value)) = v.indexed_iter().find(|(_, &x)| x == 0.0) {
            return Err(AutodiffError::Domain {
                op: "recip",
                row,
                col,
                value,
            });
        }
        let value = v.mapv(f64::recip);
        Ok(self.unary(value, Op::Recip(self.id)))
    }

    pub fn t(self) -> Var<'t> {
        let value = self.value().t().to_owned();
        self.unary(value, Op::Transpose(self.id))
    }

    /// Adds a `1 × cols` row to every row of `self`.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (a, r) = (self.value(), row.value());
        if r.nrows() != 1 || r.ncols() != a.ncols() {
            return Err(AutodiffError::Shape {
                op: "add_row",
                lhs: a.dim(),
                rhs: r.dim(),
            });
        }
        let value = &*a + &*r;
        Ok(self.tape.record(value, Op::AddRow(self.id, row.id), &[self.id, row.id]))
    }

    /// Repeats a `1 × cols` row `rows` times.
    pub fn broadcast_rows(self, rows: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.nrows() != 1 {
            return Err(AutodiffError::Shape {
                op: "broadcast_rows",
                lhs: v.dim(),
                rhs: (rows, v.ncols()),
            });
        }
        let value = v.broadcast((rows, v.ncols())).unwrap().to_owned();
        Ok(self.unary(value, Op::BroadcastRows(self.id)))
    }

    /// Repeats a `rows × 1` column `cols` times.
    pub fn broadcast_cols(self, cols: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.ncols() != 1 {
            return Err(AutodiffError::Shape {
                op: "broadcast_cols",
                lhs: v.dim(),
                rhs: (v.nrows(), cols),
            });
        }
        let value = v.broadcast((v.nrows(), cols)).unwrap().to_owned();
        Ok(self.unary(value, Op::BroadcastCols(self.id)))
    }

    /// Fills a matrix of `shape` with a 1x1 value.
    pub fn broadcast_scalar(self, shape: Shape) -> Result<Var<'t>> {
        let v = self.value();
        if v.dim() != (1, 1) {
            return Err(AutodiffError::Shape {
                op: "broadcast_scalar",
                lhs: v.dim(),
                rhs: shape,
            });
        }
        let value = Array2::from_elem(shape, v[[0, 0]]);
        Ok(self.unary(value, Op::BroadcastScalar(self.id)))
    }

    /// Column-wise sums: `rows × cols → 1 × cols`.
    pub fn sum_rows(self) -> Var<'t> {
        let value = self.value().sum_axis(Axis(0)).insert_axis(Axis(0));
        self.unary(value, Op::SumRows(self.id))
    }

    /// Row-wise sums: `rows × cols → rows × 1`.
    pub fn sum_cols(self) -> Var<'t> {
        let value = self.value().sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(value, Op::SumCols(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let value = Array2::from_elem((1, 1), self.value().sum());
        self.unary(value, Op::SumAll(self.id))
    }

    /// Numerically stable log-softmax over each row.
    pub fn log_softmax(self) -> Result<Var<'t>> {
        let v = self.value();
        if v.ncols() == 0 {
            return Err(AutodiffError::Shape {
                op: "log_softmax",
                lhs: v.dim(),
                rhs: (v.nrows(), 1),
            });
        }
        let mut value = (*v).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - max - lse);
        }
        Ok(self.unary(value, Op::LogSoftmax(self.id)))
    }
}
