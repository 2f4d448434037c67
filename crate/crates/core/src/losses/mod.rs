//! Hardest-negative triplet, contrastive and specificity objectives.
//!
//! Every loss is computed from one cosine-similarity matrix `S` whose rows
//! are images and whose columns are the captions followed by all entities.
//! Each term returns its value together with `∂L/∂S`, which lets the tape
//! treat the whole objective as a single node.

use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, DenseVector, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub temperature: f64,
    pub lambda_con: f64,
    pub lambda_spec: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.4,
            temperature: 0.01,
            lambda_con: 0.25,
            lambda_spec: 3.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::invalid(format!("margin {} must be positive", self.margin)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

/// Matched image and caption embeddings plus entities tagged with the index
/// of their caption.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEmbeddings {
    pub images: DenseMatrix,
    pub captions: DenseMatrix,
    pub entities: Vec<(usize, DenseVector)>,
    pub config: LossConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub hard: f64,
    pub contrastive: f64,
    pub specificity: f64,
    pub total: f64,
}

/// Cosine similarities of `n` images against `n` captions then the entities.
pub(crate) struct Similarities<'s> {
    pub s: &'s [f64],
    pub n: usize,
    pub cols: usize,
    /// owning image of every column
    pub owner: Vec<usize>,
}

impl Similarities<'_> {
    fn at(&self, i: usize, c: usize) -> f64 {
        self.s[i * self.cols + c]
    }
}

pub(crate) struct Term {
    pub value: f64,
    pub grad: Vec<f64>,
}

pub(crate) fn hard_term(sim: &Similarities<'_>, margin: f64) -> Term {
    let (n, cols) = (sim.n, sim.cols);
    let mut grad = vec![0.0; n * cols];
    let mut value = 0.0;
    for i in 0..n {
        let pos = sim.at(i, i);
        let argmax = |score: &dyn Fn(usize) -> f64| {
            let mut best = usize::MAX;
            let mut best_s = f64::NEG_INFINITY;
            for j in (0..n).filter(|&j| j != i) {
                if score(j) > best_s {
                    best = j;
                    best_s = score(j);
                }
            }
            (best, best_s)
        };
        let (j, sj) = argmax(&|j| sim.at(i, j));
        let h = margin + sj - pos;
        if h > 0.0 {
            value += h;
            grad[i * cols + j] += 1.0;
            grad[i * cols + i] -= 1.0;
        }
        let (j, sj) = argmax(&|j| sim.at(j, i));
        let h = margin + sj - pos;
        if h > 0.0 {
            value += h;
            grad[j * cols + i] += 1.0;
            grad[i * cols + i] -= 1.0;
        }
    }
    Term { value, grad }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
    mx + values.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

pub(crate) fn contrastive_term(sim: &Similarities<'_>, tau: f64) -> Term {
    let (n, cols) = (sim.n, sim.cols);
    let z = |i: usize, c: usize| sim.at(i, c) / tau;
    let mut dz = vec![0.0; n * cols];
    let mut value = 0.0;
    for i in 0..n {
        let negatives: Vec<usize> = (0..cols).filter(|&c| sim.owner[c] != i).collect();
        for u in (0..cols).filter(|&c| sim.owner[c] == i) {
            // unit u against the units of other captions
            let zu = z(i, u);
            let lse = log_sum_exp(std::iter::once(zu).chain(negatives.iter().map(|&c| z(i, c))));
            value += lse - zu;
            dz[i * cols + u] += (zu - lse).exp() - 1.0;
            for &c in &negatives {
                dz[i * cols + c] += (z(i, c) - lse).exp();
            }
            // image i against all other images for unit u
            let lse = log_sum_exp((0..n).map(|r| z(r, u)));
            value += lse - zu;
            dz[i * cols + u] -= 1.0;
            for r in 0..n {
                dz[r * cols + u] += (z(r, u) - lse).exp();
            }
        }
    }
    let grad = dz.into_iter().map(|g| g / tau).collect();
    Term { value, grad }
}

pub(crate) fn specificity_term(sim: &Similarities<'_>, margin: f64) -> Term {
    let (n, cols) = (sim.n, sim.cols);
    let mut grad = vec![0.0; n * cols];
    let mut value = 0.0;
    for c in n..cols {
        let i = sim.owner[c];
        let h = margin + sim.at(i, c) - sim.at(i, i);
        if h > 0.0 {
            value += h;
            grad[i * cols + c] += 1.0;
            grad[i * cols + i] -= 1.0;
        }
    }
    Term { value, grad }
}

fn unit_rows(m: &DenseMatrix, what: &str) -> Result<Vec<f64>> {
    let mut out = m.as_slice().to_vec();
    let c = m.cols();
    for (i, row) in out.chunks_mut(c.max(1)).enumerate() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Degenerate(format!("{what} {i} has norm {norm}")));
        }
        row.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(out)
}

impl BatchEmbeddings {
    fn check(&self) -> Result<()> {
        self.config.validate()?;
        let (n, d) = self.images.shape();
        if self.captions.shape() != (n, d) {
            return Err(Error::shape(format!(
                "{:?} images vs {:?} captions",
                self.images.shape(),
                self.captions.shape()
            )));
        }
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        for (owner, e) in &self.entities {
            if *owner >= n || e.dim() != d {
                return Err(Error::invalid(format!("entity for caption {owner} does not fit the batch")));
            }
        }
        Ok(())
    }

    /// Cosine matrix `n × (n + entities)` and the column owners.
    fn similarities(&self) -> Result<(Vec<f64>, usize, Vec<usize>)> {
        self.check()?;
        let (n, d) = self.images.shape();
        let v = unit_rows(&self.images, "image")?;
        let mut units = self.captions.as_slice().to_vec();
        for (_, e) in &self.entities {
            units.extend_from_slice(e.as_slice());
        }
        let cols = n + self.entities.len();
        let u = unit_rows(&DenseMatrix::new(cols, d, units)?, "text unit")?;
        let mut s = vec![0.0; n * cols];
        for i in 0..n {
            for c in 0..cols {
                s[i * cols + c] = (0..d).map(|k| v[i * d + k] * u[c * d + k]).sum();
            }
        }
        let owner = (0..n).chain(self.entities.iter().map(|(o, _)| *o)).collect();
        Ok((s, cols, owner))
    }

    fn with_sim<T>(&self, f: impl FnOnce(&Similarities<'_>) -> T) -> Result<T> {
        let (s, cols, owner) = self.similarities()?;
        Ok(f(&Similarities {
            s: &s,
            n: self.images.rows(),
            cols,
            owner,
        }))
    }
}

fn need_negative(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("hardest-negative loss needs at least 2 pairs"));
    }
    Ok(())
}

/// Sum over matched pairs of the hinge against the hardest caption and the
/// hardest image negative.
pub fn triplet_hardest(b: &BatchEmbeddings) -> Result<f64> {
    need_negative(b.images.rows())?;
    b.with_sim(|s| hard_term(s, b.config.margin).value)
}

/// Two-way InfoNCE between each image and its caption and entities.
pub fn contrastive(b: &BatchEmbeddings) -> Result<f64> {
    b.with_sim(|s| contrastive_term(s, b.config.temperature).value)
}

/// Hinge keeping each caption closer to its image than any of its entities.
pub fn specificity(b: &BatchEmbeddings) -> Result<f64> {
    b.with_sim(|s| specificity_term(s, b.config.margin).value)
}

pub fn loss_components(b: &BatchEmbeddings) -> Result<LossComponents> {
    need_negative(b.images.rows())?;
    b.with_sim(|s| combine(s, &b.config).0)
}

pub fn total_loss(b: &BatchEmbeddings) -> Result<f64> {
    Ok(loss_components(b)?.total)
}

fn combine(sim: &Similarities<'_>, cfg: &LossConfig) -> (LossComponents, Vec<f64>) {
    let hard = hard_term(sim, cfg.margin);
    let con = contrastive_term(sim, cfg.temperature);
    let spec = specificity_term(sim, cfg.margin);
    let grad = hard
        .grad
        .iter()
        .zip(&con.grad)
        .zip(&spec.grad)
        .map(|((h, c), s)| h + cfg.lambda_con * c + cfg.lambda_spec * s)
        .collect();
    let parts = LossComponents {
        hard: hard.value,
        contrastive: con.value,
        specificity: spec.value,
        total: hard.value + cfg.lambda_con * con.value + cfg.lambda_spec * spec.value,
    };
    (parts, grad)
}

/// Records the total loss over tape embeddings: `images` and `captions` are
/// `N×D`, `entities` holds one row per entry of `entity_owner`.
pub fn total_loss_on_tape(
    tape: &mut Tape<'_>,
    images: Var,
    captions: Var,
    entities: Option<Var>,
    entity_owner: &[usize],
    cfg: &LossConfig,
) -> Result<(Var, LossComponents)> {
    cfg.validate()?;
    let (n, _) = tape.shape(images);
    need_negative(n)?;
    let units = match entities {
        Some(e) => tape.concat_rows(&[captions, e]),
        None => captions,
    };
    let v = tape.normalize_rows(images);
    let u = tape.normalize_rows(units);
    let s = tape.matmul_nt(v, u);
    let (_, cols) = tape.shape(s);
    if cols != n + entity_owner.len() || entity_owner.iter().any(|&o| o >= n) {
        return Err(Error::shape("entity owners do not match the batch"));
    }
    let owner = (0..n).chain(entity_owner.iter().copied()).collect();
    let sim = Similarities {
        s: tape.view(s).data,
        n,
        cols,
        owner,
    };
    let (parts, grad) = combine(&sim, cfg);
    let loss = tape.scalar_with_grads(parts.total, vec![(s, grad)]);
    Ok((loss, parts))
}
