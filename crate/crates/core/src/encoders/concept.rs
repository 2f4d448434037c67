use rand::Rng;

use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, DenseVector, Tape, Var};

pub const WORD_DIM: usize = 300;

/// Phrase encoder: mean of word-embedding rows followed by an affine map to D.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptEncoderParams {
    pub vocab: Vocab,
    /// `|vocab| × d_word`
    pub embedding_table: DenseMatrix,
    /// `d_word × D`
    pub projection: DenseMatrix,
    pub bias: DenseVector,
}

impl ConceptEncoderParams {
    pub fn init(vocab: Vocab, word_dim: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let embedding_table = DenseMatrix::random_normal(vocab.len(), word_dim, 1.0, rng);
        let projection = DenseMatrix::random_normal(word_dim, dim, (1.0 / word_dim as f64).sqrt(), rng);
        Self {
            vocab,
            embedding_table,
            projection,
            bias: DenseVector::zeros(dim),
        }
    }

    pub fn word_dim(&self) -> usize {
        self.embedding_table.cols()
    }

    pub fn dim(&self) -> usize {
        self.projection.cols()
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.embedding_table.rows() != self.vocab.len() {
            return Err(Error::shape(format!(
                "embedding table has {} rows for {} tokens",
                self.embedding_table.rows(),
                self.vocab.len()
            )));
        }
        if self.projection.rows() != self.word_dim() || self.bias.dim() != self.dim() {
            return Err(Error::shape("concept projection does not match word dim or D"));
        }
        Ok(())
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> ConceptVars {
        let leaf = |tape: &mut Tape<'a>, r, c, d: &'a [f64]| {
            if trainable {
                tape.param(r, c, d)
            } else {
                tape.constant(r, c, d)
            }
        };
        let (v, w) = self.embedding_table.shape();
        ConceptVars {
            table: leaf(tape, v, w, self.embedding_table.as_slice()),
            projection: leaf(tape, w, self.dim(), self.projection.as_slice()),
            bias: leaf(tape, 1, self.dim(), self.bias.as_slice()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConceptVars {
    pub table: Var,
    pub projection: Var,
    pub bias: Var,
}

/// Encodes token-id phrases into a `P×D` node, one row per phrase.
pub fn encode_phrases(tape: &mut Tape<'_>, vars: ConceptVars, phrases: &[Vec<usize>]) -> Var {
    let mut tokens = Vec::new();
    let mut owner = Vec::new();
    let mut weights = Vec::new();
    for (p, phrase) in phrases.iter().enumerate() {
        assert!(!phrase.is_empty(), "empty phrase reached the encoder");
        let w = 1.0 / phrase.len() as f64;
        for &t in phrase {
            tokens.push(t);
            owner.push(p);
            weights.push(w);
        }
    }
    let rows = tape.gather_rows(vars.table, &tokens);
    let mean = tape.scatter_rows(rows, &owner, Some(&weights), phrases.len());
    let proj = tape.matmul(mean, vars.projection);
    tape.add_row(proj, vars.bias)
}

/// Embeds one phrase given as tokens; unknown tokens use the `<unk>` row.
pub fn encode_concept(phrase: &[String], p: &ConceptEncoderParams) -> Result<DenseVector> {
    if phrase.is_empty() {
        return Err(Error::Empty("phrase"));
    }
    p.check()?;
    let ids = p.vocab.encode(phrase);
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape, false);
    let out = encode_phrases(&mut tape, vars, &[ids]);
    Ok(DenseVector::from_raw(tape.view(out).data.to_vec()))
}
