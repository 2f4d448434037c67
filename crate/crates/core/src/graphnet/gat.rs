use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, DenseVector, Tape, Var, LEAKY_SLOPE};

/// One single-head GATv2 layer over `d`-dim node features.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams {
    /// `d × 2d`; the left block multiplies the receiving node, the right block
    /// the neighbour and also serves as the message transform.
    pub w: DenseMatrix,
    pub a: DenseVector,
    pub slope: f64,
}

const MESSAGE_INIT_NOISE: f64 = 0.3;

impl GatLayerParams {
    /// Message block starts near the identity (`I + 0.3·N(0, 1/D)`) so stacked
    /// layers begin close to pass-through; the rest is `N(0, 1/D)`.
    pub fn init(dim: usize, rng: &mut impl Rng) -> Self {
        let mut w = DenseMatrix::random_normal(dim, 2 * dim, (1.0 / dim as f64).sqrt(), rng);
        for r in 0..dim {
            for c in 0..dim {
                let x = MESSAGE_INIT_NOISE * w.get(r, dim + c) + if r == c { 1.0 } else { 0.0 };
                w.set(r, dim + c, x);
            }
        }
        Self {
            w,
            a: DenseVector::random_normal(dim, (1.0 / dim as f64).sqrt(), rng),
            slope: LEAKY_SLOPE,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub(crate) fn check(&self) -> Result<()> {
        let d = self.dim();
        if self.w.shape() != (d, 2 * d) {
            return Err(Error::shape(format!(
                "GAT weight is {:?}, expected ({d}, {})",
                self.w.shape(),
                2 * d
            )));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::invalid(format!("leaky slope {} outside (0,1)", self.slope)));
        }
        Ok(())
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> GatVars {
        let d = self.dim();
        let (w, a) = if trainable {
            (tape.param(d, 2 * d, self.w.as_slice()), tape.param(d, 1, self.a.as_slice()))
        } else {
            (tape.constant(d, 2 * d, self.w.as_slice()), tape.constant(d, 1, self.a.as_slice()))
        };
        GatVars { w, a, slope: self.slope }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GatVars {
    pub w: Var,
    pub a: Var,
    pub slope: f64,
}

/// Directed edge list grouped by receiving node. Nodes without neighbours
/// receive a single self edge.
pub(crate) struct EdgeList {
    pub dst: Vec<usize>,
    pub src: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

impl EdgeList {
    pub fn new(adjacency: &[Vec<usize>]) -> Self {
        let mut dst = Vec::new();
        let mut src = Vec::new();
        let mut groups = Vec::with_capacity(adjacency.len());
        for (i, nbrs) in adjacency.iter().enumerate() {
            let start = dst.len();
            if nbrs.is_empty() {
                dst.push(i);
                src.push(i);
            } else {
                for &j in nbrs {
                    dst.push(i);
                    src.push(j);
                }
            }
            groups.push((start..dst.len()).collect());
        }
        Self { dst, src, groups }
    }
}

/// Records one GAT layer; returns the updated features and the attention
/// coefficients (one per edge, grouped as in `EdgeList`).
///
/// With `W = [W_l | W_r]` the score of edge `i ← j` is
/// `aᵀ LeakyReLU(W_l h_i + W_r h_j)`. Each score is recorded minus the
/// receiver-only part of its group's first edge; the shift leaves the
/// softmax unchanged, and rows whose LeakyReLU branch agrees across a group
/// then cancel exactly instead of contributing rounding noise.
pub(crate) fn gat_record(tape: &mut Tape<'_>, v: GatVars, h: Var, edges: &EdgeList) -> (Var, Var) {
    let (n, d) = tape.shape(h);
    let w_left = tape.slice_cols(v.w, 0, d);
    let w_right = tape.slice_cols(v.w, d, d);
    let recv = tape.matmul_nt(h, w_left);
    let msg = tape.matmul_nt(h, w_right);
    let ad = tape.gather_rows(recv, &edges.dst);
    let bs = tape.gather_rows(msg, &edges.src);

    let slope = v.slope;
    let (av, bv) = (tape.view(ad).data, tape.view(bs).data);
    let branch: Vec<f64> = av
        .iter()
        .zip(bv)
        .map(|(x, y)| if x + y > 0.0 { 1.0 } else { slope })
        .collect();
    let mut relative = vec![0.0; branch.len()];
    for group in &edges.groups {
        let first = group[0] * d;
        for &e in group {
            for r in 0..d {
                relative[e * d + r] = branch[e * d + r] - branch[first + r];
            }
        }
    }
    let ad = tape.mul_const(ad, relative);
    let bs_scaled = tape.mul_const(bs, branch);
    let u = tape.add(ad, bs_scaled);
    let e = tape.matmul(u, v.a);
    let alpha = tape.segment_softmax(e, edges.groups.clone());

    let msg = tape.scale_rows(bs, alpha);
    let agg = tape.scatter_rows(msg, &edges.dst, None, n);
    (tape.relu(agg), alpha)
}

pub fn gat_forward(tape: &mut Tape<'_>, v: GatVars, h: Var, adjacency: &[Vec<usize>]) -> Var {
    gat_record(tape, v, h, &EdgeList::new(adjacency)).0
}

fn check_inputs(h: &DenseMatrix, adjacency: &[Vec<usize>], p: &GatLayerParams) -> Result<()> {
    p.check()?;
    if h.cols() != p.dim() {
        return Err(Error::shape(format!("node features have dim {}, layer expects {}", h.cols(), p.dim())));
    }
    if adjacency.len() != h.rows() {
        return Err(Error::shape(format!(
            "{} adjacency lists for {} nodes",
            adjacency.len(),
            h.rows()
        )));
    }
    if adjacency.iter().flatten().any(|&j| j >= h.rows()) {
        return Err(Error::invalid("adjacency refers to a missing node"));
    }
    Ok(())
}

/// Applies one GAT layer. `adjacency[i]` lists the nodes whose messages
/// node `i` receives; an empty list means a self edge.
pub fn gat_layer(h: &DenseMatrix, adjacency: &[Vec<usize>], p: &GatLayerParams) -> Result<DenseMatrix> {
    check_inputs(h, adjacency, p)?;
    let mut tape = Tape::new();
    let v = p.bind(&mut tape, false);
    let x = tape.matrix_constant(h);
    let out = gat_forward(&mut tape, v, x, adjacency);
    Ok(tape.view(out).to_matrix())
}

/// Normalized attention coefficients of every node over its neighbours,
/// aligned with `adjacency` (a single `1.0` for nodes without neighbours).
pub fn attention_coefficients(h: &DenseMatrix, adjacency: &[Vec<usize>], p: &GatLayerParams) -> Result<Vec<Vec<f64>>> {
    check_inputs(h, adjacency, p)?;
    let edges = EdgeList::new(adjacency);
    let mut tape = Tape::new();
    let v = p.bind(&mut tape, false);
    let x = tape.matrix_constant(h);
    let (_, alpha) = gat_record(&mut tape, v, x, &edges);
    let a = tape.view(alpha).data;
    Ok(edges.groups.iter().map(|g| g.iter().map(|&e| a[e]).collect()).collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn singleton_and_symmetric_neighbours() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GatLayerParams::init(4, &mut rng);
        let mut h = DenseMatrix::random_normal(3, 4, 1.0, &mut rng);
        let row = h.row(1).to_vec();
        h.row_mut(2).copy_from_slice(&row);
        let adj = vec![vec![1], vec![], vec![1, 2]];
        let alpha = attention_coefficients(&h, &adj, &p).unwrap();
        assert_eq!(alpha[0], vec![1.0]);
        assert_eq!(alpha[1], vec![1.0]);
        assert_eq!(alpha[2], vec![0.5, 0.5]);
    }

    #[test]
    fn self_fallback() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GatLayerParams::init(3, &mut rng);
        let h = DenseMatrix::random_normal(2, 3, 1.0, &mut rng);
        let out = gat_layer(&h, &[vec![], vec![1]], &p).unwrap();
        for i in 0..2 {
            for r in 0..3 {
                let want: f64 = (0..3).map(|c| p.w.get(r, 3 + c) * h.get(i, c)).sum::<f64>().max(0.0);
                assert!((out.get(i, r) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = GatLayerParams::init(3, &mut rng);
        let h = DenseMatrix::zeros(2, 4);
        assert!(gat_layer(&h, &[vec![], vec![]], &p).is_err());
        let h = DenseMatrix::zeros(2, 3);
        assert!(gat_layer(&h, &[vec![]], &p).is_err());
        assert!(gat_layer(&h, &[vec![5], vec![]], &p).is_err());
    }
}
