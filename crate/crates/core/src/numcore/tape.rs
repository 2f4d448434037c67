//! Minimal reverse-mode tape over dense matrices.
//!
//! Every node holds a row-major matrix value. Parameters enter as leaves
//! that request gradients; constants do not, and no gradient work is done
//! for subgraphs that only depend on constants. Operations panic on shape
//! mismatch; public encoder APIs validate shapes before recording.

use std::borrow::Cow;

use super::matrix::{dot, matmul_into, matmul_nt_into, matmul_tn_into, DenseMatrix};
use super::ops::{leaky, softmax_in_place};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Borrowed view of a node value.
#[derive(Clone, Copy, Debug)]
pub struct View<'t> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'t [f64],
}

impl View<'_> {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_raw(self.rows, self.cols, self.data.to_vec())
    }

    pub fn scalar(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "not a scalar node");
        self.data[0]
    }
}

/// One contiguous group of rows pooled into a single output row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Relu(Var),
    LeakyRelu(Var, f64),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterRows {
        src: Var,
        index: Vec<usize>,
        weights: Option<Vec<f64>>,
    },
    SegmentSoftmax(Var, Vec<Vec<usize>>),
    SoftmaxRows(Var),
    ScaleRows(Var, Var),
    NormalizeRows(Var),
    SortPool {
        x: Var,
        logits: Var,
        segments: Vec<Segment>,
        thetas: Vec<Vec<f64>>,
        // per segment, per output column, source rows in descending order
        orders: Vec<Vec<usize>>,
    },
    Scalar(Vec<(Var, Vec<f64>)>),
}

struct Node<'a> {
    rows: usize,
    cols: usize,
    data: Cow<'a, [f64]>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Cow<'a, [f64]>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            data,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.push(rows, cols, Cow::Owned(data), op, needs_grad)
    }

    /// Trainable leaf borrowing its storage.
    pub fn param(&mut self, rows: usize, cols: usize, data: &'a [f64]) -> Var {
        self.push(rows, cols, Cow::Borrowed(data), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, data: &'a [f64]) -> Var {
        self.push(rows, cols, Cow::Borrowed(data), Op::Leaf, false)
    }

    pub fn constant_owned(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        self.owned(rows, cols, data, Op::Leaf, false)
    }

    pub fn matrix_param(&mut self, m: &'a DenseMatrix) -> Var {
        self.param(m.rows(), m.cols(), m.as_slice())
    }

    pub fn matrix_constant(&mut self, m: &'a DenseMatrix) -> Var {
        self.constant(m.rows(), m.cols(), m.as_slice())
    }

    pub fn view(&self, v: Var) -> View<'_> {
        let n = &self.nodes[v.0];
        View {
            rows: n.rows,
            cols: n.cols,
            data: &n.data,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = vec![0.0; m * n];
        matmul_into(self.view(a).data, self.view(b).data, &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        self.owned(m, n, out, Op::MatMul(a, b), ng)
    }

    /// `a * bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_nt inner dims");
        let mut out = vec![0.0; m * n];
        matmul_nt_into(self.view(a).data, self.view(b).data, &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        self.owned(m, n, out, Op::MatMulNt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let (r, c) = self.shape(a);
        let out = self
            .view(a)
            .data
            .iter()
            .zip(self.view(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.owned(r, c, out, Op::Add(a, b), ng)
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(bias), (1, c), "bias shape");
        let b = self.view(bias).data;
        let out = self
            .view(a)
            .data
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let ng = self.needs(a) || self.needs(bias);
        self.owned(r, c, out, Op::AddRow(a, bias), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.view(a).data.iter().map(|x| k * x).collect();
        let ng = self.needs(a);
        self.owned(r, c, out, Op::Scale(a, k), ng)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, k: Vec<f64>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(k.len(), r * c, "mul_const: constant has wrong length");
        let out = self.view(a).data.iter().zip(&k).map(|(x, y)| x * y).collect();
        let ng = self.needs(a);
        self.owned(r, c, out, Op::MulConst(a, k), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.view(a).data.iter().map(|&x| x.max(0.0)).collect();
        let ng = self.needs(a);
        self.owned(r, c, out, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.view(a).data.iter().map(|&x| leaky(x, slope)).collect();
        let ng = self.needs(a);
        self.owned(r, c, out, Op::LeakyRelu(a, slope), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= c, "column slice out of range");
        let v = self.view(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v.row(i)[start..start + len]);
        }
        let ng = self.needs(a);
        self.owned(r, len, out, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, rows, "concat_cols rows");
                self.shape(p).1
            })
            .sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.view(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.owned(rows, cols, out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            assert_eq!(self.shape(p).1, cols, "concat_rows cols");
            rows += self.shape(p).0;
            out.extend_from_slice(self.view(p).data);
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.owned(rows, cols, out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Var {
        let (r, c) = self.shape(a);
        let v = self.view(a);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            assert!(i < r, "gather index {i} out of {r} rows");
            out.extend_from_slice(v.row(i));
        }
        let ng = self.needs(a);
        self.owned(index.len(), c, out, Op::GatherRows(a, index.to_vec()), ng)
    }

    /// `out[index[e]] += weights[e] * src[e]` into a fresh `rows × c` matrix.
    pub fn scatter_rows(&mut self, src: Var, index: &[usize], weights: Option<&[f64]>, rows: usize) -> Var {
        let (r, c) = self.shape(src);
        assert_eq!(r, index.len(), "scatter index length");
        if let Some(w) = weights {
            assert_eq!(w.len(), r, "scatter weight length");
        }
        let v = self.view(src);
        let mut out = vec![0.0; rows * c];
        for (e, &dst) in index.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[e]);
            for (o, x) in out[dst * c..(dst + 1) * c].iter_mut().zip(v.row(e)) {
                *o += w * x;
            }
        }
        let ng = self.needs(src);
        let op = Op::ScatterRows {
            src,
            index: index.to_vec(),
            weights: weights.map(<[f64]>::to_vec),
        };
        self.owned(rows, c, out, op, ng)
    }

    /// Softmax of an `E×1` column within each group of row indices.
    pub fn segment_softmax(&mut self, a: Var, groups: Vec<Vec<usize>>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(c, 1, "segment softmax expects a column");
        let src = self.view(a).data;
        let mut out = vec![0.0; r];
        for g in &groups {
            let mut vals: Vec<f64> = g.iter().map(|&i| src[i]).collect();
            softmax_in_place(&mut vals);
            for (&i, p) in g.iter().zip(vals) {
                out[i] = p;
            }
        }
        let ng = self.needs(a);
        self.owned(r, 1, out, Op::SegmentSoftmax(a, groups), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.view(a).data.to_vec();
        for row in out.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        let ng = self.needs(a);
        self.owned(r, c, out, Op::SoftmaxRows(a), ng)
    }

    /// Multiplies row `i` of `a` by `s[i]` where `s` is `r×1`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(s), (r, 1), "row scale shape");
        let sv = self.view(s).data;
        let out = self
            .view(a)
            .data
            .chunks(c.max(1))
            .zip(sv)
            .flat_map(|(row, &k)| row.iter().map(move |x| k * x))
            .collect();
        let ng = self.needs(a) || self.needs(s);
        self.owned(r, c, out, Op::ScaleRows(a, s), ng)
    }

    /// L2-normalizes each row; all-zero rows stay zero and pass no gradient.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.view(a).data.to_vec();
        for row in out.chunks_mut(c.max(1)) {
            let n = dot(row, row).sqrt();
            if n > 0.0 {
                for x in row.iter_mut() {
                    *x /= n;
                }
            }
        }
        let ng = self.needs(a);
        self.owned(r, c, out, Op::NormalizeRows(a), ng)
    }

    /// Rank-coefficient pooling of each row segment of `x` into one row.
    ///
    /// `logits` is an `M×1` column; for a segment of `n ≤ M` rows the
    /// coefficients are the softmax of the logits linearly resampled to `n`
    /// positions, applied per column to the values sorted descending.
    pub fn sort_pool(&mut self, x: Var, logits: Var, segments: &[Segment]) -> Var {
        let (_, d) = self.shape(x);
        let (m, one) = self.shape(logits);
        assert_eq!(one, 1, "rank logits must be a column");
        let xv = self.view(x);
        let lv = self.view(logits).data;
        let mut out = Vec::with_capacity(segments.len() * d);
        let mut thetas = Vec::with_capacity(segments.len());
        let mut orders = Vec::with_capacity(segments.len());
        for seg in segments {
            assert!(seg.len >= 1 && seg.len <= m, "segment size {} vs max rank {m}", seg.len);
            let theta = rank_coefficients(lv, seg.len);
            let mut order = Vec::with_capacity(seg.len * d);
            let mut col: Vec<usize> = Vec::with_capacity(seg.len);
            for j in 0..d {
                col.clear();
                col.extend(seg.start..seg.start + seg.len);
                col.sort_by(|&p, &q| xv.row(q)[j].total_cmp(&xv.row(p)[j]).then(p.cmp(&q)));
                let mut acc = 0.0;
                for (k, &row) in col.iter().enumerate() {
                    acc += theta[k] * xv.row(row)[j];
                }
                out.push(acc);
                order.extend_from_slice(&col);
            }
            thetas.push(theta);
            orders.push(order);
        }
        let ng = self.needs(x) || self.needs(logits);
        let op = Op::SortPool {
            x,
            logits,
            segments: segments.to_vec(),
            thetas,
            orders,
        };
        self.owned(segments.len(), d, out, op, ng)
    }

    /// Scalar node whose gradient with respect to each input was computed
    /// alongside its value.
    pub fn scalar_with_grads(&mut self, value: f64, inputs: Vec<(Var, Vec<f64>)>) -> Var {
        for (v, g) in &inputs {
            let (r, c) = self.shape(*v);
            assert_eq!(g.len(), r * c, "scalar gradient length");
        }
        let ng = inputs.iter().any(|(v, _)| self.needs(*v));
        self.owned(1, 1, vec![value], Op::Scalar(inputs), ng)
    }

    /// Back-propagates from a `1×1` node.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                if self.needs(*a) {
                    let bv = self.view(*b).data;
                    accumulate(grads, self, *a, |da| matmul_nt_into(g, bv, da, m, n, k));
                }
                if self.needs(*b) {
                    let av = self.view(*a).data;
                    accumulate(grads, self, *b, |db| matmul_tn_into(av, g, db, m, k, n));
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                if self.needs(*a) {
                    let bv = self.view(*b).data;
                    accumulate(grads, self, *a, |da| matmul_into(g, bv, da, m, n, k));
                }
                if self.needs(*b) {
                    let av = self.view(*a).data;
                    accumulate(grads, self, *b, |db| matmul_tn_into(g, av, db, m, n, k));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        accumulate(grads, self, v, |dv| add_assign(dv, g));
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if self.needs(*a) {
                    accumulate(grads, self, *a, |da| add_assign(da, g));
                }
                if self.needs(*bias) {
                    accumulate(grads, self, *bias, |db| {
                        for row in g.chunks(cols.max(1)) {
                            add_assign(db, row);
                        }
                    });
                }
            }
            Op::Scale(a, k) => {
                accumulate(grads, self, *a, |da| {
                    for (d, x) in da.iter_mut().zip(g) {
                        *d += k * x;
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.view(*a).data;
                accumulate(grads, self, *a, |da| {
                    for ((d, x), gi) in da.iter_mut().zip(av).zip(g) {
                        if *x > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            Op::MulConst(a, k) => {
                accumulate(grads, self, *a, |da| {
                    for ((d, ki), gi) in da.iter_mut().zip(k).zip(g) {
                        *d += ki * gi;
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.view(*a).data;
                accumulate(grads, self, *a, |da| {
                    for ((d, x), gi) in da.iter_mut().zip(av).zip(g) {
                        *d += if *x >= 0.0 { *gi } else { slope * gi };
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let src_cols = self.shape(*a).1;
                accumulate(grads, self, *a, |da| {
                    for i in 0..rows {
                        let dst = &mut da[i * src_cols + start..i * src_cols + start + cols];
                        add_assign(dst, &g[i * cols..(i + 1) * cols]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).1;
                    if self.needs(p) {
                        accumulate(grads, self, p, |dp| {
                            for i in 0..rows {
                                let src = &g[i * cols + offset..i * cols + offset + pc];
                                add_assign(&mut dp[i * pc..(i + 1) * pc], src);
                            }
                        });
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p).0 * cols;
                    if self.needs(p) {
                        accumulate(grads, self, p, |dp| add_assign(dp, &g[offset..offset + len]));
                    }
                    offset += len;
                }
            }
            Op::GatherRows(a, index) => {
                accumulate(grads, self, *a, |da| {
                    for (e, &i) in index.iter().enumerate() {
                        add_assign(&mut da[i * cols..(i + 1) * cols], &g[e * cols..(e + 1) * cols]);
                    }
                });
            }
            Op::ScatterRows { src, index, weights } => {
                accumulate(grads, self, *src, |ds| {
                    for (e, &dst) in index.iter().enumerate() {
                        let w = weights.as_ref().map_or(1.0, |w| w[e]);
                        let gr = &g[dst * cols..(dst + 1) * cols];
                        for (d, x) in ds[e * cols..(e + 1) * cols].iter_mut().zip(gr) {
                            *d += w * x;
                        }
                    }
                });
            }
            Op::SegmentSoftmax(a, groups) => {
                let p = &node.data;
                accumulate(grads, self, *a, |da| {
                    for grp in groups {
                        let inner: f64 = grp.iter().map(|&i| p[i] * g[i]).sum();
                        for &i in grp {
                            da[i] += p[i] * (g[i] - inner);
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let p = &node.data;
                accumulate(grads, self, *a, |da| {
                    for i in 0..rows {
                        let r = i * cols..(i + 1) * cols;
                        let inner = dot(&p[r.clone()], &g[r.clone()]);
                        for j in r {
                            da[j] += p[j] * (g[j] - inner);
                        }
                    }
                });
            }
            Op::ScaleRows(a, s) => {
                let av = self.view(*a).data;
                let sv = self.view(*s).data;
                if self.needs(*a) {
                    accumulate(grads, self, *a, |da| {
                        for i in 0..rows {
                            for j in 0..cols {
                                da[i * cols + j] += sv[i] * g[i * cols + j];
                            }
                        }
                    });
                }
                if self.needs(*s) {
                    accumulate(grads, self, *s, |ds| {
                        for i in 0..rows {
                            let r = i * cols..(i + 1) * cols;
                            ds[i] += dot(&av[r.clone()], &g[r]);
                        }
                    });
                }
            }
            Op::NormalizeRows(a) => {
                let av = self.view(*a).data;
                let y = &node.data;
                accumulate(grads, self, *a, |da| {
                    for i in 0..rows {
                        let r = i * cols..(i + 1) * cols;
                        let n = dot(&av[r.clone()], &av[r.clone()]).sqrt();
                        if n == 0.0 {
                            continue;
                        }
                        let yg = dot(&y[r.clone()], &g[r.clone()]);
                        for j in r {
                            da[j] += (g[j] - y[j] * yg) / n;
                        }
                    }
                });
            }
            Op::SortPool {
                x,
                logits,
                segments,
                thetas,
                orders,
            } => {
                let d = cols;
                let xv = self.view(*x);
                if self.needs(*x) {
                    accumulate(grads, self, *x, |dx| {
                        for (s, seg) in segments.iter().enumerate() {
                            for j in 0..d {
                                let gj = g[s * d + j];
                                let col = &orders[s][j * seg.len..(j + 1) * seg.len];
                                for (k, &row) in col.iter().enumerate() {
                                    dx[row * d + j] += thetas[s][k] * gj;
                                }
                            }
                        }
                    });
                }
                if self.needs(*logits) {
                    let m = self.shape(*logits).0;
                    accumulate(grads, self, *logits, |dl| {
                        for (s, seg) in segments.iter().enumerate() {
                            let theta = &thetas[s];
                            let mut dtheta = vec![0.0; seg.len];
                            for j in 0..d {
                                let gj = g[s * d + j];
                                let col = &orders[s][j * seg.len..(j + 1) * seg.len];
                                for (k, &row) in col.iter().enumerate() {
                                    dtheta[k] += gj * xv.row(row)[j];
                                }
                            }
                            let inner = dot(theta, &dtheta);
                            for (k, w) in resample_weights(seg.len, m).into_iter().enumerate() {
                                let dz = theta[k] * (dtheta[k] - inner);
                                dl[w.lo] += w.w_lo * dz;
                                dl[w.hi] += w.w_hi * dz;
                            }
                        }
                    });
                }
            }
            Op::Scalar(inputs) => {
                for (v, local) in inputs {
                    if self.needs(*v) {
                        accumulate(grads, self, *v, |dv| {
                            for (d, l) in dv.iter_mut().zip(local) {
                                *d += g[0] * l;
                            }
                        });
                    }
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], tape: &Tape<'_>, v: Var, f: impl FnOnce(&mut [f64])) {
    if !tape.needs(v) {
        return;
    }
    let n = tape.nodes[v.0].data.len();
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
    f(slot);
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients of a scalar with respect to every leaf that requested one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Linear interpolation weights mapping `m` rank positions onto `n`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Resample {
    pub lo: usize,
    pub hi: usize,
    pub w_lo: f64,
    pub w_hi: f64,
}

pub(crate) fn resample_weights(n: usize, m: usize) -> Vec<Resample> {
    if n == 1 || m == 1 {
        return vec![
            Resample {
                lo: 0,
                hi: 0,
                w_lo: 1.0,
                w_hi: 0.0,
            };
            n
        ];
    }
    (0..n)
        .map(|k| {
            let pos = k as f64 * (m - 1) as f64 / (n - 1) as f64;
            let lo = (pos.floor() as usize).min(m - 1);
            let frac = pos - lo as f64;
            let hi = (lo + 1).min(m - 1);
            Resample {
                lo,
                hi,
                w_lo: 1.0 - frac,
                w_hi: frac,
            }
        })
        .collect()
}

/// Softmax of the rank logits resampled to `n` positions.
pub(crate) fn rank_coefficients(logits: &[f64], n: usize) -> Vec<f64> {
    let mut z: Vec<f64> = resample_weights(n, logits.len())
        .into_iter()
        .map(|w| w.w_lo * logits[w.lo] + w.w_hi * logits[w.hi])
        .collect();
    softmax_in_place(&mut z);
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Tape<'_>, Var) -> Var, rows: usize, cols: usize, x0: Vec<f64>) {
        let eps = 1e-6;
        let mut tape = Tape::new();
        let x = tape.param(rows, cols, &x0);
        let y = build(&mut tape, x);
        let grads = tape.backward(y);
        let analytic = grads.get(x).map(<[f64]>::to_vec).unwrap_or(vec![0.0; x0.len()]);
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xs = x0.clone();
                xs[i] += delta;
                let mut t = Tape::new();
                let xv = t.param(rows, cols, &xs);
                let out = build(&mut t, xv);
                t.view(out).scalar()
            };
            let num = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let err = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-8);
            assert!(err < 1e-6, "entry {i}: analytic {} numeric {num}", analytic[i]);
        }
    }

    fn sum_all(t: &mut Tape<'_>, v: Var) -> Var {
        let (r, c) = t.shape(v);
        let w: Vec<f64> = (0..r * c).map(|i| 0.3 + 0.1 * i as f64).collect();
        let grads = w.clone();
        let value = dot(t.view(v).data, &w);
        t.scalar_with_grads(value, vec![(v, grads)])
    }

    fn init(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 * 1.37).sin() * 1.7) + 0.05).collect()
    }

    #[test]
    fn matmul_family_gradients() {
        fd_check(
            |t, x| {
                let c = t.constant_owned(3, 2, init(6));
                let y = t.matmul(x, c);
                let z = t.matmul_nt(y, y);
                let w = t.matmul_nt(x, x);
                let s = t.add(z, w);
                sum_all(t, s)
            },
            2,
            3,
            init(6),
        );
    }

    #[test]
    fn elementwise_and_structural_gradients() {
        fd_check(
            |t, x| {
                let a = t.leaky_relu(x, 0.2);
                let b = t.relu(x);
                let s = t.slice_cols(a, 1, 2);
                let c = t.concat_cols(&[s, b]);
                let r = t.concat_rows(&[c, c]);
                let g = t.gather_rows(r, &[0, 3, 3, 1]);
                let w = [0.5, -1.0, 2.0, 0.25];
                let sc = t.scatter_rows(g, &[1, 0, 1, 1], Some(&w), 2);
                let bias = t.slice_cols(x, 0, 1);
                let bias_row = t.gather_rows(bias, &[0]);
                let cols = t.shape(sc).1;
                let padded = t.concat_cols(&vec![bias_row; cols]);
                let ps = t.slice_cols(padded, 0, cols);
                let o = t.add_row(sc, ps);
                let o = t.scale(o, 1.5);
                let len = t.view(o).data.len();
                let o = t.mul_const(o, (0..len).map(|k| k as f64 - 2.5).collect());
                sum_all(t, o)
            },
            2,
            3,
            init(6),
        );
    }

    #[test]
    fn softmax_and_normalization_gradients() {
        fd_check(
            |t, x| {
                let sm = t.softmax_rows(x);
                let n = t.normalize_rows(x);
                let s = t.add(sm, n);
                let col = t.slice_cols(s, 0, 1);
                let seg = t.segment_softmax(col, vec![vec![0, 2], vec![1]]);
                let scaled = t.scale_rows(s, seg);
                sum_all(t, scaled)
            },
            3,
            4,
            init(12),
        );
    }

    #[test]
    fn sort_pool_gradients() {
        let logits = vec![0.3, -0.4, 0.9, 0.1, -0.2];
        fd_check(
            |t, x| {
                let l = t.constant_owned(5, 1, logits.clone());
                let segs = [Segment { start: 0, len: 3 }, Segment { start: 3, len: 2 }];
                let y = t.sort_pool(x, l, &segs);
                sum_all(t, y)
            },
            5,
            3,
            init(15),
        );
        let xs = init(15);
        fd_check(
            |t, l| {
                let x = t.constant_owned(5, 3, xs.clone());
                let segs = [Segment { start: 0, len: 4 }, Segment { start: 4, len: 1 }];
                let y = t.sort_pool(x, l, &segs);
                sum_all(t, y)
            },
            5,
            1,
            logits.clone(),
        );
    }

    #[test]
    fn constants_get_no_gradient() {
        let c = vec![1.0, 2.0];
        let p = vec![3.0, 4.0];
        let mut t = Tape::new();
        let cv = t.constant(1, 2, &c);
        let pv = t.param(1, 2, &p);
        let s = t.add(cv, pv);
        let y = sum_all(&mut t, s);
        let g = t.backward(y);
        assert!(g.get(cv).is_none());
        assert_eq!(g.get(pv).unwrap(), &[0.3, 0.4]);
    }

    #[test]
    fn resampling_endpoints() {
        let w = resample_weights(3, 5);
        assert_eq!((w[0].lo, w[0].w_lo), (0, 1.0));
        assert_eq!((w[1].lo, w[1].w_lo), (2, 1.0));
        assert_eq!((w[2].lo, w[2].w_lo), (4, 1.0));
        let theta = rank_coefficients(&[0.0; 8], 4);
        assert!(theta.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert_eq!(rank_coefficients(&[2.0, 1.0], 1), vec![1.0]);
    }
}
