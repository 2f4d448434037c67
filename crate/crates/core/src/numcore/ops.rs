use super::matrix::{dot, norm, DenseVector};
use crate::error::{Error, Result};

/// Default negative slope, following the GATv2 convention.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &DenseVector, slope: f64) -> Result<DenseVector> {
    if !(slope > 0.0 && slope < 1.0) {
        return Err(Error::invalid(format!("leaky slope {slope} outside (0,1)")));
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("leaky_relu input".into()));
    }
    Ok(DenseVector::from_raw(
        x.as_slice().iter().map(|&v| leaky(v, slope)).collect(),
    ))
}

#[inline]
pub(crate) fn leaky(v: f64, slope: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

pub fn softmax(x: &DenseVector) -> Result<DenseVector> {
    if x.dim() == 0 {
        return Err(Error::Empty("softmax input"));
    }
    let mut out = x.as_slice().to_vec();
    softmax_in_place(&mut out);
    Ok(DenseVector::from_raw(out))
}

/// Max-shifted softmax over a non-empty slice.
pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

pub fn cosine_sim(u: &DenseVector, v: &DenseVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::shape(format!("cosine of {} and {} dims", u.dim(), v.dim())));
    }
    cosine_slices(u.as_slice(), v.as_slice())
}

pub(crate) fn cosine_slices(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("zero-norm vector in cosine similarity".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}
