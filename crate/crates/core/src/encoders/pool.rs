use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, DenseVector, Segment, Tape};

pub const DEFAULT_MAX_RANK: usize = 64;

/// Learned rank coefficients for sorted set pooling.
///
/// For a set of `N` vectors the coefficient of rank `k` is the softmax of the
/// rank logits linearly resampled from `max_rank` positions to `N`. Zero
/// logits give mean pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolParams {
    pub rank_logits: DenseVector,
}

impl PoolParams {
    pub fn new(max_rank: usize) -> Self {
        Self {
            rank_logits: DenseVector::zeros(max_rank),
        }
    }

    pub fn max_rank(&self) -> usize {
        self.rank_logits.dim()
    }

    pub(crate) fn check_size(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Empty("set to pool"));
        }
        if n > self.max_rank() {
            return Err(Error::invalid(format!(
                "set of {n} exceeds max rank {}",
                self.max_rank()
            )));
        }
        Ok(())
    }
}

impl Default for PoolParams {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_RANK)
    }
}

/// Pools a set of equal-length vectors into one, independently per dimension.
pub fn pool_set(features: &[DenseVector], p: &PoolParams) -> Result<DenseVector> {
    p.check_size(features.len())?;
    let d = features[0].dim();
    if features.iter().any(|f| f.dim() != d) {
        return Err(Error::shape("pooled vectors differ in dimension"));
    }
    let x = DenseMatrix::from_rows(&features.iter().map(DenseVector::as_slice).collect::<Vec<_>>())?;
    let mut tape = Tape::new();
    let xv = tape.matrix_constant(&x);
    let lv = tape.constant(p.max_rank(), 1, p.rank_logits.as_slice());
    let out = tape.sort_pool(
        xv,
        lv,
        &[Segment {
            start: 0,
            len: features.len(),
        }],
    );
    Ok(DenseVector::from_raw(tape.view(out).data.to_vec()))
}
