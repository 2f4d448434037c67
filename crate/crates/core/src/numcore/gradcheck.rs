//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

use super::matrix::DenseMatrix;

/// Read access to one named parameter tensor.
#[derive(Debug, Clone, Copy)]
pub struct ParamBlock<'a> {
    pub name: &'a str,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

/// A set of named parameter tensors in a fixed canonical order.
pub trait ParamSet {
    fn blocks(&self) -> Vec<ParamBlock<'_>>;
    fn blocks_mut(&mut self) -> Vec<(&str, &mut [f64])>;

    fn num_scalars(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }
}

/// Simple owned list of named matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedTensors {
    pub tensors: Vec<(String, DenseMatrix)>,
}

impl NamedTensors {
    pub fn new(tensors: Vec<(String, DenseMatrix)>) -> Self {
        Self { tensors }
    }
}

impl ParamSet for NamedTensors {
    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        self.tensors
            .iter()
            .map(|(n, m)| ParamBlock {
                name: n,
                shape: m.shape(),
                data: m.as_slice(),
            })
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<(&str, &mut [f64])> {
        self.tensors
            .iter_mut()
            .map(|(n, m)| (n.as_str(), m.as_mut_slice()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_block: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub scalars_checked: usize,
}

/// Relative error with a `1e-8` floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `grad_fn` against `(L(θ+eps) − L(θ−eps)) / 2eps` for every scalar
/// of every block. `grad_fn` returns one flat gradient per block, in
/// [`ParamSet::blocks`] order.
pub fn grad_check<P, L, G>(params: &P, eps: f64, loss_fn: L, grad_fn: G) -> Result<GradCheckReport>
where
    P: ParamSet + Clone,
    L: Fn(&P) -> Result<f64>,
    G: FnOnce(&P) -> Result<Vec<Vec<f64>>>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let analytic = grad_fn(params)?;
    let blocks = params.blocks();
    if analytic.len() != blocks.len() {
        return Err(Error::shape(format!(
            "{} gradient blocks for {} parameter blocks",
            analytic.len(),
            blocks.len()
        )));
    }
    for (g, b) in analytic.iter().zip(&blocks) {
        if g.len() != b.data.len() {
            return Err(Error::shape(format!("gradient for {} has wrong length", b.name)));
        }
    }
    let names: Vec<String> = blocks.iter().map(|b| b.name.to_string()).collect();

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_block: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        scalars_checked: 0,
    };
    for (b, name) in names.iter().enumerate() {
        for i in 0..analytic[b].len() {
            let original = probe.blocks_mut()[b].1[i];
            probe.blocks_mut()[b].1[i] = original + eps;
            let up = finite_loss(&loss_fn, &probe, name)?;
            probe.blocks_mut()[b].1[i] = original - eps;
            let down = finite_loss(&loss_fn, &probe, name)?;
            probe.blocks_mut()[b].1[i] = original;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[b][i];
            let err = relative_error(a, numeric);
            report.scalars_checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_block = name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn finite_loss<P>(loss_fn: &impl Fn(&P) -> Result<f64>, p: &P, block: &str) -> Result<f64> {
    let l = loss_fn(p)?;
    if !l.is_finite() {
        return Err(Error::NonFinite(format!("loss while perturbing {block}")));
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numcore::matrix::dot;

    fn quad_params(seed: u64) -> NamedTensors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NamedTensors::new(vec![("w".into(), DenseMatrix::random_normal(2, 2, 1.0, &mut rng))])
    }

    // ‖W x‖² with analytic gradient 2 (W x) xᵀ
    fn quad_loss(p: &NamedTensors, x: &[f64]) -> f64 {
        let w = &p.tensors[0].1;
        w.iter_rows().map(|r| dot(r, x).powi(2)).sum()
    }

    fn quad_grad(p: &NamedTensors, x: &[f64]) -> Vec<Vec<f64>> {
        let w = &p.tensors[0].1;
        let wx: Vec<f64> = w.iter_rows().map(|r| dot(r, x)).collect();
        vec![(0..4).map(|k| 2.0 * wx[k / 2] * x[k % 2]).collect()]
    }

    #[test]
    fn quadratic_form_passes() {
        for seed in 0..20 {
            let p = quad_params(seed);
            let x = [0.7, -1.3];
            let r = grad_check(&p, 1e-5, |p| Ok(quad_loss(p, &x)), |p| Ok(quad_grad(p, &x))).unwrap();
            assert!(r.max_relative_error < 1e-7, "seed {seed}: {r:?}");
            assert_eq!(r.scalars_checked, 4);
        }
    }

    #[test]
    fn constant_loss_has_zero_numeric_gradient() {
        let p = quad_params(3);
        let r = grad_check(&p, 1e-5, |_| Ok(4.2), |_| Ok(vec![vec![0.0; 4]])).unwrap();
        assert!(r.max_relative_error == 0.0);
        assert!(r.numeric.abs() < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let p = quad_params(1);
        let x = [0.7, -1.3];
        let r = grad_check(
            &p,
            1e-5,
            |p| Ok(quad_loss(p, &x)),
            |p| {
                let mut g = quad_grad(p, &x);
                g[0][2] *= 1.01;
                Ok(g)
            },
        )
        .unwrap();
        assert!(r.max_relative_error > 1e-3);
        assert_eq!(r.worst_index, 2);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let p = quad_params(1);
        let res = grad_check(&p, 1e-5, |_| Ok(f64::NAN), |_| Ok(vec![vec![0.0; 4]]));
        assert!(matches!(res, Err(Error::NonFinite(_))));
        assert!(grad_check(&p, 0.0, |_| Ok(1.0), |_| Ok(vec![vec![0.0; 4]])).is_err());
    }
}
