//! f64 reverse-mode tape.
//!
//! Nodes are rows x cols matrices stored row-major. Ops are recorded as an
//! enum; `backward` runs a single reverse sweep and accumulates gradients
//! only into nodes that (transitively) depend on a gradient-tracked leaf.
//!
//! The op set is exactly what the communication layer, the recurrent agents
//! and the two training losses need — no broadcasting rules beyond the few
//! explicit broadcast ops.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MinElem(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    /// [m,n] + row vector [1,n]
    AddRow(NodeId, NodeId),
    /// [m,n] * column vector [m,1], row-wise
    MulCol(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Elu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Clamp(NodeId, f64, f64),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// sum over columns within each row -> [m,1]
    SumRows(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    GatherRows(NodeId, Vec<usize>),
    /// scatter a [k,1] vector into a zero [rows,cols] matrix at given coords
    Scatter(NodeId, Vec<(usize, usize)>),
    Reshape(NodeId),
    Transpose(NodeId),
    LogSoftmaxRows(NodeId),
    /// pick one column per row -> [m,1]
    GatherPerRow(NodeId, Vec<usize>),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    val: Vec<f64>,
    grad: Vec<f64>,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].val
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].val.len(), 1);
        self.nodes[id.0].val[0]
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, val: Vec<f64>, needs_grad: bool) -> NodeId {
        debug_assert_eq!(val.len(), rows * cols);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            val,
            grad: Vec::new(),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Gradient-free constant.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, rows, cols, data, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.constant(1, 1, vec![v])
    }

    /// Gradient-tracked leaf (parameters).
    pub fn param_leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, rows, cols, data, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a), self.value(b), m, k, n, &mut out);
        let g = self.ng(a) || self.ng(b);
        self.push(Op::MatMul(a, b), m, n, out, g)
    }

    fn zip2(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let g = self.ng(a) || self.ng(b);
        self.push(op, m, n, out, g)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip2(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip2(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip2(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn min_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip2(a, b, f64::min, Op::MinElem(a, b))
    }

    fn map1(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let g = self.ng(a);
        self.push(op, m, n, out, g)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map1(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map1(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let (rm, rn) = self.shape(row);
        assert!(rm == 1 && rn == n, "add_row wants [1,{n}], got [{rm},{rn}]");
        let rv = self.value(row).to_vec();
        let out: Vec<f64> = self
            .value(a)
            .chunks(n)
            .flat_map(|r| r.iter().zip(&rv).map(|(&x, &y)| x + y).collect::<Vec<_>>())
            .collect();
        let g = self.ng(a) || self.ng(row);
        self.push(Op::AddRow(a, row), m, n, out, g)
    }

    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let (cm, cn) = self.shape(col);
        assert!(cm == m && cn == 1, "mul_col wants [{m},1], got [{cm},{cn}]");
        let cv = self.value(col).to_vec();
        let mut out = Vec::with_capacity(m * n);
        for (i, r) in self.value(a).chunks(n).enumerate() {
            out.extend(r.iter().map(|&x| x * cv[i]));
        }
        let g = self.ng(a) || self.ng(col);
        self.push(Op::MulCol(a, col), m, n, out, g)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map1(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map1(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map1(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn elu(&mut self, a: NodeId) -> NodeId {
        self.map1(a, |x| if x > 0.0 { x } else { x.exp() - 1.0 }, Op::Elu(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.map1(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map1(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.map1(a, f64::ln, Op::Ln(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.map1(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.map1(a, f64::abs, Op::Abs(a))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.map1(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).iter().sum();
        let g = self.ng(a);
        self.push(Op::SumAll(a), 1, 1, vec![s], g)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s: f64 = v.iter().sum::<f64>() / v.len() as f64;
        let g = self.ng(a);
        self.push(Op::MeanAll(a), 1, 1, vec![s], g)
    }

    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.value(a).chunks(n).map(|r| r.iter().sum()).collect();
        let g = self.ng(a);
        self.push(Op::SumRows(a), m, 1, out, g)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let m = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let (pm, pn) = self.shape(p);
                assert_eq!(pm, m, "concat_cols row mismatch");
                out.extend_from_slice(&self.value(p)[i * pn..(i + 1) * pn]);
            }
        }
        let g = parts.iter().any(|&p| self.ng(p));
        self.push(Op::ConcatCols(parts.to_vec()), m, total, out, g)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let n = self.shape(parts[0]).1;
        let total: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut out = Vec::with_capacity(total * n);
        for &p in parts {
            assert_eq!(self.shape(p).1, n, "concat_rows col mismatch");
            out.extend_from_slice(self.value(p));
        }
        let g = parts.iter().any(|&p| self.ng(p));
        self.push(Op::ConcatRows(parts.to_vec()), total, n, out, g)
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        let (m, n) = self.shape(a);
        assert!(lo < hi && hi <= n);
        let w = hi - lo;
        let mut out = Vec::with_capacity(m * w);
        for r in self.value(a).chunks(n) {
            out.extend_from_slice(&r[lo..hi]);
        }
        let g = self.ng(a);
        self.push(Op::SliceCols(a, lo, hi), m, w, out, g)
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let (m, n) = self.shape(a);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            assert!(i < m, "gather_rows index {i} out of {m}");
            out.extend_from_slice(&self.value(a)[i * n..(i + 1) * n]);
        }
        let g = self.ng(a);
        self.push(Op::GatherRows(a, idx.to_vec()), idx.len(), n, out, g)
    }

    /// Scatter a [k,1] column into a fresh zero matrix at the given coords.
    pub fn scatter(&mut self, vals: NodeId, coords: &[(usize, usize)], rows: usize, cols: usize) -> NodeId {
        let (k, one) = self.shape(vals);
        assert_eq!(one, 1, "scatter wants a column vector");
        assert_eq!(k, coords.len());
        let mut out = vec![0.0; rows * cols];
        for (i, &(r, c)) in coords.iter().enumerate() {
            assert!(r < rows && c < cols);
            out[r * cols + c] = self.value(vals)[i];
        }
        let g = self.ng(vals);
        self.push(Op::Scatter(vals, coords.to_vec()), rows, cols, out, g)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let (m, n) = self.shape(a);
        assert_eq!(m * n, rows * cols, "reshape size mismatch");
        let out = self.value(a).to_vec();
        let g = self.ng(a);
        self.push(Op::Reshape(a), rows, cols, out, g)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let v = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        let g = self.ng(a);
        self.push(Op::Transpose(a), n, m, out, g)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let mut out = Vec::with_capacity(m * n);
        for r in self.value(a).chunks(n) {
            let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + r.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            out.extend(r.iter().map(|&x| x - lse));
        }
        let g = self.ng(a);
        self.push(Op::LogSoftmaxRows(a), m, n, out, g)
    }

    pub fn gather_per_row(&mut self, a: NodeId, cols: &[usize]) -> NodeId {
        let (m, n) = self.shape(a);
        assert_eq!(cols.len(), m);
        let out: Vec<f64> = cols
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                assert!(c < n);
                self.value(a)[i * n + c]
            })
            .collect();
        let g = self.ng(a);
        self.push(Op::GatherPerRow(a, cols.to_vec()), m, 1, out, g)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.nodes[loss.0].val.len(), 1, "backward needs a scalar loss");
        for n in self.nodes.iter_mut() {
            if n.needs_grad {
                n.grad.clear();
                n.grad.resize(n.val.len(), 0.0);
            }
        }
        if !self.nodes[loss.0].needs_grad {
            return;
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_empty() {
                continue;
            }
            // Take the node's gradient out to appease the borrow checker;
            // ops never reference their own output.
            let grad = std::mem::take(&mut self.nodes[i].grad);
            let op = self.nodes[i].op.clone();
            self.accumulate(i, &op, &grad);
            self.nodes[i].grad = grad;
        }
    }

    fn add_grad(&mut self, id: NodeId, f: impl Fn(usize, &mut [f64])) {
        if self.nodes[id.0].needs_grad {
            let mut g = std::mem::take(&mut self.nodes[id.0].grad);
            f(id.0, &mut g);
            self.nodes[id.0].grad = g;
        }
    }

    fn accumulate(&mut self, out_idx: usize, op: &Op, gout: &[f64]) {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(a);
                let n = self.shape(b).1;
                if self.ng(a) {
                    // dA = dC * B^T
                    let bval = &self.nodes[b.0].val;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &gout[i * n..(i + 1) * n];
                        let darow = &mut da[i * k..(i + 1) * k];
                        for l in 0..k {
                            let brow = &bval[l * n..(l + 1) * n];
                            let mut acc = 0.0;
                            for (gv, bv) in grow.iter().zip(brow) {
                                acc += gv * bv;
                            }
                            darow[l] += acc;
                        }
                    }
                    self.add_grad(a, |_, g| {
                        for (gi, di) in g.iter_mut().zip(&da) {
                            *gi += di;
                        }
                    });
                }
                if self.ng(b) {
                    // dB = A^T * dC
                    let aval = &self.nodes[a.0].val;
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let arow = &aval[i * k..(i + 1) * k];
                        let grow = &gout[i * n..(i + 1) * n];
                        for (l, &av) in arow.iter().enumerate() {
                            if av != 0.0 {
                                let dbrow = &mut db[l * n..(l + 1) * n];
                                for (dv, gv) in dbrow.iter_mut().zip(grow) {
                                    *dv += av * gv;
                                }
                            }
                        }
                    }
                    self.add_grad(b, |_, g| {
                        for (gi, di) in g.iter_mut().zip(&db) {
                            *gi += di;
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.add_grad(a, |_, g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                self.add_grad(b, |_, g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
            }
            Op::Sub(a, b) => {
                self.add_grad(a, |_, g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                self.add_grad(b, |_, g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi -= go;
                    }
                });
            }
            Op::Mul(a, b) => {
                if self.ng(a) {
                    let bv = self.nodes[b.0].val.clone();
                    self.add_grad(a, |_, g| {
                        for ((gi, &go), &y) in g.iter_mut().zip(gout).zip(&bv) {
                            *gi += go * y;
                        }
                    });
                }
                if self.ng(b) {
                    let av = self.nodes[a.0].val.clone();
                    self.add_grad(b, |_, g| {
                        for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(&av) {
                            *gi += go * x;
                        }
                    });
                }
            }
            Op::MinElem(a, b) => {
                let av = self.nodes[a.0].val.clone();
                let bv = self.nodes[b.0].val.clone();
                self.add_grad(a, |_, g| {
                    for i in 0..g.len() {
                        if av[i] <= bv[i] {
                            g[i] += gout[i];
                        }
                    }
                });
                self.add_grad(b, |_, g| {
                    for i in 0..g.len() {
                        if bv[i] < av[i] {
                            g[i] += gout[i];
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                self.add_grad(a, |_, g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += c * go;
                    }
                });
            }
            Op::AddScalar(a) => {
                self.add_grad(a, |_, g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
            }
            Op::AddRow(a, row) => {
                let n = self.shape(row).1;
                self.add_grad(a, |_, g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                self.add_grad(row, |_, g| {
                    for chunk in gout.chunks(n) {
                        for (gi, &go) in g.iter_mut().zip(chunk) {
                            *gi += go;
                        }
                    }
                });
            }
            Op::MulCol(a, col) => {
                let (m, n) = self.shape(a);
                if self.ng(a) {
                    let cv = self.nodes[col.0].val.clone();
                    self.add_grad(a, |_, g| {
                        for i in 0..m {
                            for j in 0..n {
                                g[i * n + j] += gout[i * n + j] * cv[i];
                            }
                        }
                    });
                }
                if self.ng(col) {
                    let av = self.nodes[a.0].val.clone();
                    self.add_grad(col, |_, g| {
                        for i in 0..m {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += gout[i * n + j] * av[i * n + j];
                            }
                            g[i] += acc;
                        }
                    });
                }
            }
            Op::Sigmoid(a) => {
                let yv = self.nodes[out_idx].val.clone();
                self.add_grad(a, |_, g| {
                    for ((gi, &go), &y) in g.iter_mut().zip(gout).zip(&yv) {
                        *gi += go * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                let yv = self.nodes[out_idx].val.clone();
                self.add_grad(a, |_, g| {
                    for ((gi, &go), &y) in g.iter_mut().zip(gout).zip(&yv) {
                        *gi += go * (1.0 - y * y);
                    }
                });
            }
            Op::Relu(a) => {
                let xv = self.nodes[a.0].val.clone();
                self.add_grad(a, |_, g| {
                    for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(&xv) {
                        if x > 0.0 {
                            *gi += go;
                        }
                    }
                });
            }
            Op::Elu(a) => {
                let xv = self.nodes[a.0].val.clone();
                let yv = self.nodes[out_idx].val.clone();
                self.add_grad(a, |_, g| {
                    for (i, (gi, &go)) in g.iter_mut().zip(gout).enumerate() {
                        *gi += go * if xv[i] > 0.0 { 1.0 } else { yv[i] + 1.0 };
                    }
                });
            }
            Op::Softplus(a) => {
                let xv = self.nodes[a.0].val.clone();
                self.add_grad(a, |_, g| {
                    for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(&xv) {
                        *gi += go * sigmoid(x);
                    }
                });
            }
            Op::Exp(a) => {
                let yv = self.nodes[out_idx].val.clone();
                self.add_grad(a, |_, g| {
                    for ((gi, &go), &y) in g.iter_mut().zip(gout).zip(&yv) {
                        *gi += go * y;
                    }
                });
            }
            Op::Ln(a) => {
                let xv = self.nodes[a.0].val.clone();
                self.add_grad(a, |_, g| {
                    for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(&xv) {
                        *gi += go / x;
                    }
                });
            }
            Op::Square(a) => {
                let xv = self.nodes[a.0].val.clone();
                self.add_grad(a, |_, g| {
                    for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(&xv) {
                        *gi += go * 2.0 * x;
                    }
                });
            }
            Op::Abs(a) => {
                let xv = self.nodes[a.0].val.clone();
                self.add_grad(a, |_, g| {
                    for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(&xv) {
                        *gi += go * if x >= 0.0 { 1.0 } else { -1.0 };
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let xv = self.nodes[a.0].val.clone();
                self.add_grad(a, |_, g| {
                    for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(&xv) {
                        if x > lo && x < hi {
                            *gi += go;
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let go = gout[0];
                self.add_grad(a, |_, g| {
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                });
            }
            Op::MeanAll(a) => {
                let len = self.nodes[a.0].val.len() as f64;
                let go = gout[0] / len;
                self.add_grad(a, |_, g| {
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                });
            }
            Op::SumRows(a) => {
                let n = self.shape(a).1;
                self.add_grad(a, |_, g| {
                    for (i, row) in g.chunks_mut(n).enumerate() {
                        for gi in row.iter_mut() {
                            *gi += gout[i];
                        }
                    }
                });
            }
            Op::ConcatCols(ref parts) => {
                let m = self.shape(NodeId(out_idx)).0;
                let total = self.shape(NodeId(out_idx)).1;
                let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
                let mut off = 0;
                for (pi, &p) in parts.iter().enumerate() {
                    let w = widths[pi];
                    self.add_grad(p, |_, g| {
                        for i in 0..m {
                            let src = &gout[i * total + off..i * total + off + w];
                            for (gi, &go) in g[i * w..(i + 1) * w].iter_mut().zip(src) {
                                *gi += go;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(ref parts) => {
                let n = self.shape(NodeId(out_idx)).1;
                let mut off = 0;
                for &p in parts {
                    let pm = self.shape(p).0;
                    self.add_grad(p, |_, g| {
                        for (gi, &go) in g.iter_mut().zip(&gout[off * n..(off + pm) * n]) {
                            *gi += go;
                        }
                    });
                    off += pm;
                }
            }
            Op::SliceCols(a, lo, hi) => {
                let n = self.shape(a).1;
                let w = hi - lo;
                self.add_grad(a, |_, g| {
                    for (i, chunk) in gout.chunks(w).enumerate() {
                        for (j, &go) in chunk.iter().enumerate() {
                            g[i * n + lo + j] += go;
                        }
                    }
                });
            }
            Op::GatherRows(a, ref idx) => {
                let n = self.shape(a).1;
                self.add_grad(a, |_, g| {
                    for (k, &i) in idx.iter().enumerate() {
                        for (gi, &go) in g[i * n..(i + 1) * n].iter_mut().zip(&gout[k * n..(k + 1) * n]) {
                            *gi += go;
                        }
                    }
                });
            }
            Op::Scatter(vals, ref coords) => {
                let cols = self.shape(NodeId(out_idx)).1;
                self.add_grad(vals, |_, g| {
                    for (i, &(r, c)) in coords.iter().enumerate() {
                        g[i] += gout[r * cols + c];
                    }
                });
            }
            Op::Reshape(a) => {
                self.add_grad(a, |_, g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = self.shape(a);
                self.add_grad(a, |_, g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += gout[j * m + i];
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                let (m, n) = self.shape(a);
                let yv = self.nodes[out_idx].val.clone();
                self.add_grad(a, |_, g| {
                    for i in 0..m {
                        let grow = &gout[i * n..(i + 1) * n];
                        let gsum: f64 = grow.iter().sum();
                        for j in 0..n {
                            let p = yv[i * n + j].exp();
                            g[i * n + j] += grow[j] - p * gsum;
                        }
                    }
                });
            }
            Op::GatherPerRow(a, ref cols) => {
                let n = self.shape(a).1;
                self.add_grad(a, |_, g| {
                    for (i, &c) in cols.iter().enumerate() {
                        g[i * n + c] += gout[i];
                    }
                });
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            // one-hot heavy inputs make the zero-skip worthwhile
            if av != 0.0 {
                let brow = &b[l * n..(l + 1) * n];
                for (ov, &bv) in orow.iter_mut().zip(brow) {
                    *ov += av * bv;
                }
            }
        }
    }
}
