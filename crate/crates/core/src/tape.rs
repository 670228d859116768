//! Reverse-mode differentiation over matrix-valued primitives.
//!
//! A [`Tape`] records one forward computation as a sequence of nodes, each a
//! matrix with the operation that produced it. Replaying the record in
//! reverse accumulates adjoints, giving the gradient of a scalar output with
//! respect to every leaf. Primitives are matrix-level (matmul, Cholesky,
//! elementwise maps, Gaussian log-density blocks) so tapes stay short even
//! for full training batches.

use crate::error::{CoreError, Result};
use crate::func::{sigmoid, softplus};
use crate::linalg::{tril_index, tril_len, Matrix};

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Unary {
    Softplus,
    Ln,
    Exp,
    Sqrt,
    Recip,
    LeakyRelu(f64),
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Softplus => softplus(x),
            Unary::Ln => x.ln(),
            Unary::Exp => x.exp(),
            Unary::Sqrt => x.sqrt(),
            Unary::Recip => 1.0 / x,
            Unary::LeakyRelu(slope) => crate::func::leaky_relu(x, slope),
        }
    }

    /// Derivative given the input and the already-computed output.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Softplus => sigmoid(x),
            Unary::Ln => 1.0 / x,
            Unary::Exp => y,
            Unary::Sqrt => 0.5 / y,
            Unary::Recip => -y * y,
            Unary::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Scale(usize, f64),
    AddScalar(usize),
    HadamardConst(usize, Matrix),
    /// Elementwise product of a matrix node with a 1x1 scalar node.
    ScalarMul(usize, usize),
    Map(usize, Unary),
    Sum(usize),
    /// Add a 1xC row vector to every row of a BxC matrix.
    BroadcastRowAdd(usize, usize),
    /// Stack K row vectors (each 1xC) into a KxC matrix.
    StackRows(Vec<usize>),
    /// One row segment of a matrix as a 1x(c1-c0) vector.
    RowSlice { src: usize, row: usize, col0: usize, col1: usize },
    /// Lower-triangular n x n factor from a packed 1 x n(n+1)/2 row:
    /// off-diagonal entries pass through, diagonal is softplus(x) + floor.
    TrilFromRaw { src: usize, n: usize },
    Cholesky(usize),
    /// Negative log density of N(mean, C C^T) at a fixed target, as a 1x1.
    NllMeanChol { mean: usize, chol: usize, target: Vec<f64> },
    /// Per-example Gaussian negative log density from raw head rows
    /// [mean_0..mean_{n-1}, packed lower triangle], optionally with the
    /// covariance multiplied by a positive 1x1 scalar node. Output is Bx1.
    NllFromRaw { raw: usize, targets: Matrix, dim: usize, scale: Option<usize> },
    /// Column-wise (1/alpha) * ln mean_k exp(alpha * x_kj) of a KxB input,
    /// output 1xB.
    PowerLogMeanExp { src: usize, alpha: f64 },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the backward output with respect to `v`; zero matrix if
    /// `v` did not influence the output.
    pub fn wrt(&self, v: Var) -> Result<Matrix> {
        if v.0 >= self.shapes.len() {
            return Err(CoreError::MissingNode { index: v.0, len: self.shapes.len() });
        }
        Ok(match &self.adjoints[v.0] {
            Some(m) => m.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        })
    }
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
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            Err(CoreError::MissingNode { index: v.0, len: self.nodes.len() })
        } else {
            Ok(())
        }
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Non-differentiable input; adjoints are not tracked for it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> Var {
        self.leaf(Matrix::from_vec(1, 1, vec![value]).unwrap())
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Matrix::from_vec(1, 1, vec![value]).unwrap())
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, context: &'static str) -> Result<(usize, usize)> {
        self.check(a)?;
        self.check(b)?;
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(CoreError::ShapeMismatch {
                context,
                expected: format!("{}x{}", sa.0, sa.1),
                got: format!("{}x{}", sb.0, sb.1),
            });
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "tape add")?;
        let value = self.value(a).add(self.value(b));
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "tape sub")?;
        let value = self.value(a).sub(self.value(b));
        Ok(self.push(value, Op::Sub(a.0, b.0)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "tape hadamard")?;
        let value = self.value(a).hadamard(self.value(b));
        Ok(self.push(value, Op::Hadamard(a.0, b.0)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if self.value(a).cols() != self.value(b).rows() {
            return Err(CoreError::ShapeMismatch {
                context: "tape matmul",
                expected: format!("inner dim {}", self.value(a).cols()),
                got: format!("{}", self.value(b).rows()),
            });
        }
        let value = self.value(a).matmul(self.value(b));
        Ok(self.push(value, Op::MatMul(a.0, b.0)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).transpose();
        Ok(self.push(value, Op::Transpose(a.0)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).scale(c);
        Ok(self.push(value, Op::Scale(a.0, c)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).map(|v| v + c);
        Ok(self.push(value, Op::AddScalar(a.0)))
    }

    pub fn hadamard_const(&mut self, a: Var, m: &Matrix) -> Result<Var> {
        self.check(a)?;
        if self.value(a).shape() != m.shape() {
            return Err(CoreError::ShapeMismatch {
                context: "tape hadamard_const",
                expected: format!("{:?}", self.value(a).shape()),
                got: format!("{:?}", m.shape()),
            });
        }
        let value = self.value(a).hadamard(m);
        Ok(self.push(value, Op::HadamardConst(a.0, m.clone())))
    }

    /// Multiply every entry of `a` by the 1x1 node `s`.
    pub fn scalar_mul(&mut self, a: Var, s: Var) -> Result<Var> {
        self.check(a)?;
        self.check(s)?;
        if self.value(s).shape() != (1, 1) {
            return Err(CoreError::ShapeMismatch {
                context: "tape scalar_mul",
                expected: "1x1".to_string(),
                got: format!("{:?}", self.value(s).shape()),
            });
        }
        let c = self.value(s).at(0, 0);
        let value = self.value(a).scale(c);
        Ok(self.push(value, Op::ScalarMul(a.0, s.0)))
    }

    fn map(&mut self, a: Var, u: Unary) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).map(|x| u.apply(x));
        Ok(self.push(value, Op::Map(a.0, u)))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map(a, Unary::Softplus)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.map(a, Unary::Ln)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, Unary::Exp)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.map(a, Unary::Sqrt)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.map(a, Unary::Recip)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.map(a, Unary::LeakyRelu(slope))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = Matrix::from_vec(1, 1, vec![self.value(a).sum()]).unwrap();
        Ok(self.push(value, Op::Sum(a.0)))
    }

    pub fn broadcast_row_add(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check(a)?;
        self.check(row)?;
        let (b, c) = self.value(a).shape();
        if self.value(row).shape() != (1, c) {
            return Err(CoreError::ShapeMismatch {
                context: "tape broadcast_row_add",
                expected: format!("1x{c}"),
                got: format!("{:?}", self.value(row).shape()),
            });
        }
        let rv = self.value(row).clone();
        let av = self.value(a);
        let mut value = Matrix::zeros(b, c);
        for i in 0..b {
            for j in 0..c {
                value.set(i, j, av.at(i, j) + rv.at(0, j));
            }
        }
        Ok(self.push(value, Op::BroadcastRowAdd(a.0, row.0)))
    }

    /// Stack 1xC row nodes into a KxC node.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(CoreError::EmptyInput("stack_rows"));
        }
        let mut c = None;
        for &r in rows {
            self.check(r)?;
            let shape = self.value(r).shape();
            if shape.0 != 1 || *c.get_or_insert(shape.1) != shape.1 {
                return Err(CoreError::ShapeMismatch {
                    context: "tape stack_rows",
                    expected: format!("1x{}", c.unwrap()),
                    got: format!("{:?}", shape),
                });
            }
        }
        let c = c.unwrap();
        let mut value = Matrix::zeros(rows.len(), c);
        for (i, &r) in rows.iter().enumerate() {
            for j in 0..c {
                value.set(i, j, self.value(r).at(0, j));
            }
        }
        Ok(self.push(value, Op::StackRows(rows.iter().map(|v| v.0).collect())))
    }

    /// Columns [col0, col1) of one row, as a 1x(col1-col0) node.
    pub fn row_slice(&mut self, src: Var, row: usize, col0: usize, col1: usize) -> Result<Var> {
        self.check(src)?;
        let (r, c) = self.value(src).shape();
        if row >= r || col1 > c || col0 >= col1 {
            return Err(CoreError::ShapeMismatch {
                context: "tape row_slice",
                expected: format!("row < {r}, cols within {c}"),
                got: format!("row {row}, cols {col0}..{col1}"),
            });
        }
        let value = Matrix::row_vec(&self.value(src).row(row)[col0..col1]);
        Ok(self.push(value, Op::RowSlice { src: src.0, row, col0, col1 }))
    }

    /// Lower-triangular factor from a packed row: off-diagonals verbatim,
    /// diagonal softplus(x) + floor (keeps it strictly positive).
    pub fn tril_from_raw(&mut self, src: Var, n: usize, floor: f64) -> Result<Var> {
        self.check(src)?;
        if self.value(src).shape() != (1, tril_len(n)) {
            return Err(CoreError::ShapeMismatch {
                context: "tape tril_from_raw",
                expected: format!("1x{}", tril_len(n)),
                got: format!("{:?}", self.value(src).shape()),
            });
        }
        let raw = self.value(src).clone();
        let mut value = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let x = raw.at(0, tril_index(i, j));
                value.set(i, j, if i == j { softplus(x) + floor } else { x });
            }
        }
        Ok(self.push(value, Op::TrilFromRaw { src: src.0, n }))
    }

    /// Differentiable lower Cholesky factor of a symmetric positive-definite
    /// node. The backward pass assumes symmetric upstream perturbations, which
    /// holds whenever the input is built as X * S * X^T with S symmetric.
    pub fn cholesky(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).cholesky()?;
        Ok(self.push(value, Op::Cholesky(a.0)))
    }

    /// Gaussian negative log density -ln N(target; mean, C C^T) as a 1x1
    /// node, with `mean` a 1xN node and `chol` an NxN lower-triangular node.
    pub fn nll_mean_chol(&mut self, mean: Var, chol: Var, target: &[f64]) -> Result<Var> {
        self.check(mean)?;
        self.check(chol)?;
        let n = target.len();
        if self.value(mean).shape() != (1, n) || self.value(chol).shape() != (n, n) {
            return Err(CoreError::ShapeMismatch {
                context: "tape nll_mean_chol",
                expected: format!("mean 1x{n}, chol {n}x{n}"),
                got: format!("{:?} and {:?}", self.value(mean).shape(), self.value(chol).shape()),
            });
        }
        let (nll, _, _) = nll_pieces(self.value(mean).row(0), self.value(chol), target, 1.0);
        let value = Matrix::from_vec(1, 1, vec![nll]).unwrap();
        Ok(self.push(value, Op::NllMeanChol { mean: mean.0, chol: chol.0, target: target.to_vec() }))
    }

    /// Per-example Gaussian negative log densities from raw head rows.
    ///
    /// `raw` is Bx(N + N(N+1)/2): N means then the packed lower triangle,
    /// whose diagonal goes through softplus + 1e-6 exactly as the prediction
    /// head does. `scale`, when given, multiplies every covariance by a
    /// positive 1x1 node. Output is Bx1.
    pub fn nll_from_raw(
        &mut self,
        raw: Var,
        targets: &Matrix,
        dim: usize,
        floor: f64,
        scale: Option<Var>,
    ) -> Result<Var> {
        self.check(raw)?;
        if let Some(s) = scale {
            self.check(s)?;
            if self.value(s).shape() != (1, 1) {
                return Err(CoreError::ShapeMismatch {
                    context: "tape nll_from_raw scale",
                    expected: "1x1".to_string(),
                    got: format!("{:?}", self.value(s).shape()),
                });
            }
        }
        let width = dim + tril_len(dim);
        let (b, c) = self.value(raw).shape();
        if c != width || targets.shape() != (b, dim) {
            return Err(CoreError::ShapeMismatch {
                context: "tape nll_from_raw",
                expected: format!("raw Bx{width}, targets Bx{dim}"),
                got: format!("{:?} and {:?}", self.value(raw).shape(), targets.shape()),
            });
        }
        let s = scale.map_or(1.0, |v| self.value(v).at(0, 0));
        let mut value = Matrix::zeros(b, 1);
        for i in 0..b {
            let (l, _) = head_factor(self.value(raw).row(i), dim, floor);
            let (nll, _, _) = nll_pieces(&self.value(raw).row(i)[..dim], &l, targets.row(i), s);
            value.set(i, 0, nll);
        }
        Ok(self.push(
            value,
            Op::NllFromRaw { raw: raw.0, targets: targets.clone(), dim, scale: scale.map(|v| v.0) },
        ))
    }

    /// Column-wise power mean of log values: out_j = (1/alpha) ln mean_k
    /// exp(alpha * x_kj), computed with a max shift. alpha must be nonzero.
    pub fn power_logmeanexp(&mut self, src: Var, alpha: f64) -> Result<Var> {
        self.check(src)?;
        if alpha == 0.0 {
            return Err(CoreError::Domain("power_logmeanexp requires alpha != 0".to_string()));
        }
        let (k, b) = self.value(src).shape();
        let mut value = Matrix::zeros(1, b);
        for j in 0..b {
            let col: Vec<f64> = (0..k).map(|i| alpha * self.value(src).at(i, j)).collect();
            value.set(0, j, crate::func::logmeanexp(&col) / alpha);
        }
        Ok(self.push(value, Op::PowerLogMeanExp { src: src.0, alpha }))
    }

    /// Reverse pass from a 1x1 output node; returns gradients for every node,
    /// with the convention that the output's own gradient is 1.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        self.check(out)?;
        if self.value(out).shape() != (1, 1) {
            return Err(CoreError::ShapeMismatch {
                context: "tape backward",
                expected: "1x1 output".to_string(),
                got: format!("{:?}", self.value(out).shape()),
            });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[out.0] = Some(Matrix::from_vec(1, 1, vec![1.0]).unwrap());

        for idx in (0..=out.0).rev() {
            let Some(up) = adj[idx].take() else { continue };
            self.push_adjoints(idx, &up, &mut adj);
            adj[idx] = Some(up);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { adjoints: adj, shapes })
    }

    fn accumulate(&self, adj: &mut [Option<Matrix>], target: usize, delta: Matrix) {
        if matches!(self.nodes[target].op, Op::Constant) {
            return;
        }
        match &mut adj[target] {
            Some(m) => *m = m.add(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn push_adjoints(&self, idx: usize, up: &Matrix, adj: &mut [Option<Matrix>]) {
        match &self.nodes[idx].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate(adj, *a, up.clone());
                self.accumulate(adj, *b, up.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, up.clone());
                self.accumulate(adj, *b, up.scale(-1.0));
            }
            Op::Hadamard(a, b) => {
                self.accumulate(adj, *a, up.hadamard(&self.nodes[*b].value));
                self.accumulate(adj, *b, up.hadamard(&self.nodes[*a].value));
            }
            Op::MatMul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                self.accumulate(adj, *a, up.matmul(&bv.transpose()));
                self.accumulate(adj, *b, av.transpose().matmul(up));
            }
            Op::Transpose(a) => {
                self.accumulate(adj, *a, up.transpose());
            }
            Op::Scale(a, c) => {
                self.accumulate(adj, *a, up.scale(*c));
            }
            Op::AddScalar(a) => {
                self.accumulate(adj, *a, up.clone());
            }
            Op::HadamardConst(a, m) => {
                self.accumulate(adj, *a, up.hadamard(m));
            }
            Op::ScalarMul(a, s) => {
                let sv = self.nodes[*s].value.at(0, 0);
                self.accumulate(adj, *a, up.scale(sv));
                let ds = up.hadamard(&self.nodes[*a].value).sum();
                self.accumulate(adj, *s, Matrix::from_vec(1, 1, vec![ds]).unwrap());
            }
            Op::Map(a, u) => {
                let input = &self.nodes[*a].value;
                let output = &self.nodes[idx].value;
                let mut delta = up.clone();
                for (i, d) in delta.data_mut().iter_mut().enumerate() {
                    *d *= u.derivative(input.data()[i], output.data()[i]);
                }
                self.accumulate(adj, *a, delta);
            }
            Op::Sum(a) => {
                let (r, c) = self.nodes[*a].value.shape();
                let g = up.at(0, 0);
                self.accumulate(adj, *a, Matrix::from_fn(r, c, |_, _| g));
            }
            Op::BroadcastRowAdd(a, row) => {
                self.accumulate(adj, *a, up.clone());
                let (b, c) = up.shape();
                let mut row_grad = Matrix::zeros(1, c);
                for i in 0..b {
                    for j in 0..c {
                        row_grad.set(0, j, row_grad.at(0, j) + up.at(i, j));
                    }
                }
                self.accumulate(adj, *row, row_grad);
            }
            Op::StackRows(rows) => {
                for (i, &r) in rows.iter().enumerate() {
                    self.accumulate(adj, r, Matrix::row_vec(up.row(i)));
                }
            }
            Op::RowSlice { src, row, col0, col1 } => {
                let (r, c) = self.nodes[*src].value.shape();
                let mut delta = Matrix::zeros(r, c);
                for j in *col0..*col1 {
                    delta.set(*row, j, up.at(0, j - col0));
                }
                self.accumulate(adj, *src, delta);
            }
            Op::TrilFromRaw { src, n } => {
                let raw = &self.nodes[*src].value;
                let mut delta = Matrix::zeros(1, tril_len(*n));
                for i in 0..*n {
                    for j in 0..=i {
                        let k = tril_index(i, j);
                        let g = if i == j {
                            up.at(i, j) * sigmoid(raw.at(0, k))
                        } else {
                            up.at(i, j)
                        };
                        delta.set(0, k, g);
                    }
                }
                self.accumulate(adj, *src, delta);
            }
            Op::Cholesky(a) => {
                let l = &self.nodes[idx].value;
                self.accumulate(adj, *a, cholesky_backward(l, up));
            }
            Op::NllMeanChol { mean, chol, target } => {
                let g = up.at(0, 0);
                let mv = &self.nodes[*mean].value;
                let cv = &self.nodes[*chol].value;
                let (_, z, u) = nll_pieces(mv.row(0), cv, target, 1.0);
                let n = target.len();
                let mut mean_grad = Matrix::zeros(1, n);
                for j in 0..n {
                    mean_grad.set(0, j, -g * u[j]);
                }
                self.accumulate(adj, *mean, mean_grad);
                let mut chol_grad = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..=i {
                        let mut d = -u[i] * z[j];
                        if i == j {
                            d += 1.0 / cv.at(i, i);
                        }
                        chol_grad.set(i, j, g * d);
                    }
                }
                self.accumulate(adj, *chol, chol_grad);
            }
            Op::NllFromRaw { raw, targets, dim, scale } => {
                let n = *dim;
                let rv = &self.nodes[*raw].value;
                let s = scale.map_or(1.0, |v| self.nodes[v].value.at(0, 0));
                let b = rv.rows();
                let mut raw_grad = Matrix::zeros(b, rv.cols());
                let mut scale_grad = 0.0;
                for ex in 0..b {
                    let g = up.at(ex, 0);
                    if g == 0.0 {
                        continue;
                    }
                    let row = rv.row(ex);
                    let (l, diag_raw) = head_factor(row, n, crate::gaussian::DIAG_FLOOR);
                    let (_, z, u) = nll_pieces(&row[..n], &l, targets.row(ex), s);
                    for j in 0..n {
                        raw_grad.set(ex, j, -g * u[j] / s);
                    }
                    for i in 0..n {
                        for j in 0..=i {
                            let mut d = -u[i] * z[j] / s;
                            if i == j {
                                d += 1.0 / l.at(i, i);
                                d *= sigmoid(diag_raw[i]);
                            }
                            raw_grad.set(ex, n + tril_index(i, j), g * d);
                        }
                    }
                    if scale.is_some() {
                        let quad: f64 = z.iter().map(|v| v * v).sum();
                        scale_grad += g * (n as f64 / (2.0 * s) - quad / (2.0 * s * s));
                    }
                }
                self.accumulate(adj, *raw, raw_grad);
                if let Some(sv) = scale {
                    self.accumulate(adj, *sv, Matrix::from_vec(1, 1, vec![scale_grad]).unwrap());
                }
            }
            Op::PowerLogMeanExp { src, alpha } => {
                let xv = &self.nodes[*src].value;
                let (k, b) = xv.shape();
                let mut delta = Matrix::zeros(k, b);
                for j in 0..b {
                    let g = up.at(0, j);
                    if g == 0.0 {
                        continue;
                    }
                    let m = (0..k).map(|i| alpha * xv.at(i, j)).fold(f64::NEG_INFINITY, f64::max);
                    let weights: Vec<f64> = (0..k).map(|i| (alpha * xv.at(i, j) - m).exp()).collect();
                    let total: f64 = weights.iter().sum();
                    for i in 0..k {
                        delta.set(i, j, g * weights[i] / total);
                    }
                }
                self.accumulate(adj, *src, delta);
            }
        }
    }
}

/// Lower factor from a raw head row: off-diagonals verbatim, diagonal
/// softplus + floor. Also returns the raw diagonal entries for chain rules.
fn head_factor(row: &[f64], n: usize, floor: f64) -> (Matrix, Vec<f64>) {
    let mut l = Matrix::zeros(n, n);
    let mut diag_raw = vec![0.0; n];
    for i in 0..n {
        for j in 0..=i {
            let x = row[n + tril_index(i, j)];
            if i == j {
                diag_raw[i] = x;
                l.set(i, j, softplus(x) + floor);
            } else {
                l.set(i, j, x);
            }
        }
    }
    (l, diag_raw)
}

/// Negative log density of N(mean, s * L L^T) at target, plus the solves
/// z = L^{-1}(target - mean) and u = L^{-T} z reused by every adjoint.
fn nll_pieces(mean: &[f64], l: &Matrix, target: &[f64], s: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let n = mean.len();
    let resid = Matrix::col_vec(&target.iter().zip(mean).map(|(y, m)| y - m).collect::<Vec<_>>());
    let z = l.solve_lower(&resid);
    let u = l.solve_lower_transpose(&z);
    let log_det: f64 = (0..n).map(|i| l.at(i, i).ln()).sum();
    let quad: f64 = z.data().iter().map(|v| v * v).sum();
    let nll = log_det
        + 0.5 * (n as f64) * s.ln()
        + quad / (2.0 * s)
        + 0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln();
    (nll, z.data().to_vec(), u.data().to_vec())
}

/// Adjoint of the Cholesky factorization (symmetric-perturbation convention):
/// given L = chol(A) and the adjoint of L, returns the adjoint of A as
/// 0.5 * L^{-T} (Phi + Phi^T) L^{-1} with Phi the lower triangle of L^T Lbar,
/// diagonal halved.
fn cholesky_backward(l: &Matrix, l_bar: &Matrix) -> Matrix {
    let n = l.rows();
    let m = l.transpose().matmul(l_bar);
    let mut phi = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            phi.set(i, j, if i == j { 0.5 * m.at(i, j) } else { m.at(i, j) });
        }
    }
    let sym = phi.add(&phi.transpose());
    // 0.5 * L^{-T} sym L^{-1}: two triangular solves.
    let t = l.solve_lower_transpose(&sym);
    let a_bar_t = l.solve_lower_transpose(&t.transpose());
    a_bar_t.transpose().scale(0.5)
}
