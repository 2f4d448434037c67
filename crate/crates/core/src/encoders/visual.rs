use rand::Rng;

use super::instrument;
use super::pool::PoolParams;
use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, DenseVector, Segment, Tape, Var};

pub const REGION_DIM: usize = 2048;
pub const DEFAULT_HEADS: usize = 4;

/// Region MLP, one multi-head self-attention layer and a pooling head.
///
/// The MLP is `h = x·W1 + b1; out = h + ReLU(h)·W2 + b2`. Attention heads
/// use consecutive column blocks of the shared `D×D` projections.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualEncoderParams {
    pub fc1: DenseMatrix,
    pub fc1_bias: DenseVector,
    pub fc2: DenseMatrix,
    pub fc2_bias: DenseVector,
    pub heads: usize,
    pub query: DenseMatrix,
    pub key: DenseMatrix,
    pub value: DenseMatrix,
    pub output: DenseMatrix,
    pub pool: PoolParams,
}

impl VisualEncoderParams {
    pub fn init(in_dim: usize, dim: usize, heads: usize, max_rank: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::invalid(format!("{heads} heads do not divide D = {dim}")));
        }
        let s_in = (1.0 / in_dim as f64).sqrt();
        let s_d = (1.0 / dim as f64).sqrt();
        Ok(Self {
            fc1: DenseMatrix::random_normal(in_dim, dim, s_in, rng),
            fc1_bias: DenseVector::zeros(dim),
            fc2: DenseMatrix::random_normal(dim, dim, s_d, rng),
            fc2_bias: DenseVector::zeros(dim),
            heads,
            query: DenseMatrix::random_normal(dim, dim, s_d, rng),
            key: DenseMatrix::random_normal(dim, dim, s_d, rng),
            value: DenseMatrix::random_normal(dim, dim, s_d, rng),
            output: DenseMatrix::random_normal(dim, dim, s_d, rng),
            pool: PoolParams::new(max_rank),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.fc1.rows()
    }

    pub fn dim(&self) -> usize {
        self.fc1.cols()
    }

    pub(crate) fn check(&self) -> Result<()> {
        let d = self.dim();
        let square = [&self.fc2, &self.query, &self.key, &self.value, &self.output];
        if square.iter().any(|m| m.shape() != (d, d)) || self.fc1_bias.dim() != d || self.fc2_bias.dim() != d {
            return Err(Error::shape(format!("visual encoder weights inconsistent with D = {d}")));
        }
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::invalid(format!("{} heads do not divide D = {d}", self.heads)));
        }
        Ok(())
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> VisualVars {
        let mut leaf = |m: &'a [f64], r: usize, c: usize| {
            if trainable {
                tape.param(r, c, m)
            } else {
                tape.constant(r, c, m)
            }
        };
        let (i, d) = (self.in_dim(), self.dim());
        VisualVars {
            fc1: leaf(self.fc1.as_slice(), i, d),
            fc1_bias: leaf(self.fc1_bias.as_slice(), 1, d),
            fc2: leaf(self.fc2.as_slice(), d, d),
            fc2_bias: leaf(self.fc2_bias.as_slice(), 1, d),
            query: leaf(self.query.as_slice(), d, d),
            key: leaf(self.key.as_slice(), d, d),
            value: leaf(self.value.as_slice(), d, d),
            output: leaf(self.output.as_slice(), d, d),
            rank_logits: leaf(self.pool.rank_logits.as_slice(), self.pool.max_rank(), 1),
            heads: self.heads,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VisualVars {
    pub fc1: Var,
    pub fc1_bias: Var,
    pub fc2: Var,
    pub fc2_bias: Var,
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub output: Var,
    pub rank_logits: Var,
    pub heads: usize,
}

pub fn region_mlp(tape: &mut Tape<'_>, v: &VisualVars, x: Var) -> Var {
    let h = tape.matmul(x, v.fc1);
    let h = tape.add_row(h, v.fc1_bias);
    let r = tape.relu(h);
    let r = tape.matmul(r, v.fc2);
    let r = tape.add_row(r, v.fc2_bias);
    tape.add(h, r)
}

/// Self-attention applied independently within each row segment.
pub fn segment_attention(tape: &mut Tape<'_>, v: &VisualVars, x: Var, segments: &[Segment]) -> Var {
    let (_, d) = tape.shape(x);
    let dh = d / v.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = tape.matmul(x, v.query);
    let k = tape.matmul(x, v.key);
    let val = tape.matmul(x, v.value);
    let mut per_segment = Vec::with_capacity(segments.len());
    for seg in segments {
        let rows: Vec<usize> = (seg.start..seg.start + seg.len).collect();
        let (qs, ks, vs) = if segments.len() == 1 {
            (q, k, val)
        } else {
            (
                tape.gather_rows(q, &rows),
                tape.gather_rows(k, &rows),
                tape.gather_rows(val, &rows),
            )
        };
        let mut heads = Vec::with_capacity(v.heads);
        for hd in 0..v.heads {
            let qh = tape.slice_cols(qs, hd * dh, dh);
            let kh = tape.slice_cols(ks, hd * dh, dh);
            let vh = tape.slice_cols(vs, hd * dh, dh);
            let logits = tape.matmul_nt(qh, kh);
            let logits = tape.scale(logits, scale);
            let att = tape.softmax_rows(logits);
            heads.push(tape.matmul(att, vh));
        }
        per_segment.push(if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) });
    }
    let mixed = if per_segment.len() == 1 {
        per_segment[0]
    } else {
        tape.concat_rows(&per_segment)
    };
    let out = tape.matmul(mixed, v.output);
    tape.add(x, out)
}

/// Encodes stacked region sets (one segment per image) into a `B×D` node.
pub fn encode_region_sets(tape: &mut Tape<'_>, v: &VisualVars, regions: Var, segments: &[Segment]) -> Var {
    let h = region_mlp(tape, v, regions);
    let h = segment_attention(tape, v, h, segments);
    tape.sort_pool(h, v.rank_logits, segments)
}

/// Multi-head self-attention with residual over one set of `D`-dim rows.
pub fn self_attention(features: &DenseMatrix, p: &VisualEncoderParams) -> Result<DenseMatrix> {
    p.check()?;
    if features.rows() == 0 {
        return Err(Error::Empty("attention input"));
    }
    if features.cols() != p.dim() {
        return Err(Error::shape(format!(
            "attention input has {} columns, expected {}",
            features.cols(),
            p.dim()
        )));
    }
    let mut tape = Tape::new();
    let v = p.bind(&mut tape, false);
    let x = tape.matrix_constant(features);
    let seg = [Segment {
        start: 0,
        len: features.rows(),
    }];
    let out = segment_attention(&mut tape, &v, x, &seg);
    Ok(tape.view(out).to_matrix())
}

/// Embeds one image from its `N × in_dim` region features.
pub fn encode_image(regions: &DenseMatrix, p: &VisualEncoderParams) -> Result<DenseVector> {
    p.check()?;
    p.pool.check_size(regions.rows())?;
    if regions.cols() != p.in_dim() {
        return Err(Error::shape(format!(
            "regions have {} features, expected {}",
            regions.cols(),
            p.in_dim()
        )));
    }
    instrument::record_images(1);
    let mut tape = Tape::new();
    let v = p.bind(&mut tape, false);
    let x = tape.matrix_constant(regions);
    let seg = [Segment {
        start: 0,
        len: regions.rows(),
    }];
    let out = encode_region_sets(&mut tape, &v, x, &seg);
    Ok(DenseVector::from_raw(tape.view(out).data.to_vec()))
}

/// Keeps each region with probability `1 − drop_rate`, never dropping all.
pub fn augment_regions(regions: &DenseMatrix, drop_rate: f64, rng: &mut impl Rng) -> Result<DenseMatrix> {
    if regions.rows() == 0 {
        return Err(Error::Empty("regions"));
    }
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::invalid(format!("region drop rate {drop_rate} outside [0,1)")));
    }
    let mut kept: Vec<usize> = (0..regions.rows()).filter(|_| rng.random::<f64>() >= drop_rate).collect();
    if kept.is_empty() {
        kept.push(rng.random_range(0..regions.rows()));
    }
    if kept.len() == regions.rows() {
        return Ok(regions.clone());
    }
    let mut data = Vec::with_capacity(kept.len() * regions.cols());
    for &i in &kept {
        data.extend_from_slice(regions.row(i));
    }
    Ok(DenseMatrix::from_raw(kept.len(), regions.cols(), data))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::encoders::pool::pool_set;

    fn params(in_dim: usize, dim: usize, heads: usize, seed: u64) -> VisualEncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = VisualEncoderParams::init(in_dim, dim, heads, 16, &mut rng).unwrap();
        p.fc1_bias = DenseVector::random_normal(dim, 0.1, &mut rng);
        p.fc2_bias = DenseVector::random_normal(dim, 0.1, &mut rng);
        p.pool.rank_logits = DenseVector::random_normal(16, 1.0, &mut rng);
        p
    }

    /// Dense multi-head attention written out entry by entry.
    fn attention_oracle(x: &DenseMatrix, p: &VisualEncoderParams) -> DenseMatrix {
        let (n, d) = x.shape();
        let dh = d / p.heads;
        let q = x.matmul(&p.query).unwrap();
        let k = x.matmul(&p.key).unwrap();
        let v = x.matmul(&p.value).unwrap();
        let mut mixed = DenseMatrix::zeros(n, d);
        for h in 0..p.heads {
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| (0..dh).map(|c| q.get(i, h * dh + c) * k.get(j, h * dh + c)).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
                for c in 0..dh {
                    let val: f64 = (0..n).map(|j| (scores[j] - mx).exp() / z * v.get(j, h * dh + c)).sum();
                    mixed.set(i, h * dh + c, val);
                }
            }
        }
        let o = mixed.matmul(&p.output).unwrap();
        DenseMatrix::from_fn(n, d, |i, j| x.get(i, j) + o.get(i, j))
    }

    fn mlp_oracle(x: &DenseMatrix, p: &VisualEncoderParams) -> DenseMatrix {
        let mut h = x.matmul(&p.fc1).unwrap();
        for i in 0..h.rows() {
            for j in 0..h.cols() {
                h.set(i, j, h.get(i, j) + p.fc1_bias[j]);
            }
        }
        let r = DenseMatrix::from_fn(h.rows(), h.cols(), |i, j| h.get(i, j).max(0.0));
        let r = r.matmul(&p.fc2).unwrap();
        DenseMatrix::from_fn(h.rows(), h.cols(), |i, j| h.get(i, j) + r.get(i, j) + p.fc2_bias[j])
    }

    #[test]
    fn attention_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (seed, heads) in [(1, 1), (2, 2), (3, 4)] {
            let p = params(8, 4, heads, seed);
            let x = DenseMatrix::random_normal(3, 4, 1.0, &mut rng);
            let got = self_attention(&x, &p).unwrap();
            assert!(got.max_abs_diff(&attention_oracle(&x, &p)) < 1e-10);
        }
    }

    #[test]
    fn attention_trivial_cases() {
        let mut p = params(8, 4, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = DenseMatrix::random_normal(1, 4, 1.0, &mut rng);
        let vo = one.matmul(&p.value).unwrap().matmul(&p.output).unwrap();
        let want = DenseMatrix::from_fn(1, 4, |i, j| one.get(i, j) + vo.get(i, j));
        assert!(self_attention(&one, &p).unwrap().max_abs_diff(&want) < 1e-12);

        p.output = DenseMatrix::zeros(4, 4);
        let x = DenseMatrix::random_normal(5, 4, 1.0, &mut rng);
        assert_eq!(self_attention(&x, &p).unwrap(), x);
    }

    #[test]
    fn image_matches_composed_oracle() {
        let p = params(12, 8, 2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let regions = DenseMatrix::random_normal(5, 12, 1.0, &mut rng);
        let got = encode_image(&regions, &p).unwrap();
        let att = attention_oracle(&mlp_oracle(&regions, &p), &p);
        let rows: Vec<DenseVector> = (0..5).map(|i| att.row_vector(i)).collect();
        let want = pool_set(&rows, &p.pool).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-10);

        let mut rev = DenseMatrix::zeros(5, 12);
        for i in 0..5 {
            rev.row_mut(i).copy_from_slice(regions.row(4 - i));
        }
        assert!(encode_image(&rev, &p).unwrap().max_abs_diff(&got) < 1e-10);
        assert!(encode_image(&DenseMatrix::zeros(0, 12), &p).is_err());
    }

    #[test]
    fn single_region_without_attention_output_is_mlp() {
        let mut p = params(12, 8, 2, 7);
        p.output = DenseMatrix::zeros(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = DenseMatrix::random_normal(1, 12, 1.0, &mut rng);
        let got = encode_image(&r, &p).unwrap();
        assert!(got.max_abs_diff(&mlp_oracle(&r, &p).row_vector(0)) < 1e-12);
    }

    #[test]
    fn init_output_is_nonzero() {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = VisualEncoderParams::init(64, 16, 4, 16, &mut rng).unwrap();
            let r = DenseMatrix::random_normal(6, 64, 1.0, &mut rng);
            let n = encode_image(&r, &p).unwrap().norm();
            assert!(n.is_finite() && n > 1e-6);
        }
    }

    #[test]
    fn batched_segments_match_single_images() {
        let p = params(12, 8, 4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DenseMatrix::random_normal(3, 12, 1.0, &mut rng);
        let b = DenseMatrix::random_normal(5, 12, 1.0, &mut rng);
        let mut stacked = a.as_slice().to_vec();
        stacked.extend_from_slice(b.as_slice());
        let mut tape = Tape::new();
        let v = p.bind(&mut tape, false);
        let x = tape.constant_owned(8, 12, stacked);
        let segs = [Segment { start: 0, len: 3 }, Segment { start: 3, len: 5 }];
        let out = encode_region_sets(&mut tape, &v, x, &segs);
        let got = tape.view(out).to_matrix();
        assert!(got.row_vector(0).max_abs_diff(&encode_image(&a, &p).unwrap()) < 1e-12);
        assert!(got.row_vector(1).max_abs_diff(&encode_image(&b, &p).unwrap()) < 1e-12);
    }

    #[test]
    fn region_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let r = DenseMatrix::random_normal(36, 4, 1.0, &mut rng);
        assert_eq!(augment_regions(&r, 0.0, &mut rng).unwrap(), r);
        let one = DenseMatrix::random_normal(1, 4, 1.0, &mut rng);
        for _ in 0..100 {
            assert_eq!(augment_regions(&one, 0.99, &mut rng).unwrap(), one);
        }
        let trials = 10_000;
        let kept: usize = (0..trials).map(|_| augment_regions(&r, 0.35, &mut rng).unwrap().rows()).sum();
        let mean = kept as f64 / trials as f64;
        assert!((mean - 23.4).abs() < 0.5, "{mean}");
    }
}
