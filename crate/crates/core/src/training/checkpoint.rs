//! `CORK` checkpoints: magic, u32 version, u64 config hash, then named
//! tensors (u32 name length, UTF-8 name, u32 rank, u32 dims, f64 payload),
//! closed by a SHA-256 digest of everything before it. The vocabulary lives
//! next to the file in `<path>.vocab`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::binio::Reader;
use crate::encoders::Vocab;
use crate::error::{Error, Result};
use crate::numcore::ParamSet;

use super::model::{config_hash, ModelConfig, ModelParams};

const MAGIC: &[u8; 4] = b"CORK";
const VERSION: u32 = 1;
const HEADS: &str = "config.heads";
const SLOPE: &str = "config.leaky_slope";

pub fn vocab_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".vocab");
    PathBuf::from(s)
}

fn put_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f64]) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend((d as u32).to_le_bytes());
    }
    for x in data {
        out.extend(x.to_le_bytes());
    }
}

pub fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend(params.config_hash().to_le_bytes());
    put_tensor(&mut out, HEADS, &[], &[params.config.heads as f64]);
    put_tensor(&mut out, SLOPE, &[], &[params.config.leaky_slope]);
    for b in params.blocks() {
        put_tensor(&mut out, b.name, &[b.shape.0, b.shape.1], b.data);
    }
    let digest = Sha256::digest(&out);
    out.extend(digest);
    out
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(params))?;
    params.vocab().save(&vocab_path(path))
}

struct Tensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

const DIGEST_LEN: usize = 32;

fn read_tensors(bytes: &[u8]) -> Result<(u64, Vec<Tensor>)> {
    if bytes.len() < MAGIC.len() + DIGEST_LEN {
        return Err(Error::format("checkpoint is truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::format("checkpoint digest mismatch; the file is corrupt"));
    }
    let mut r = Reader::new(body);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let hash = r.u64()?;
    let mut tensors = Vec::new();
    while !r.done() {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::format("tensor name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        if rank > 2 {
            return Err(Error::format(format!("tensor {name} has rank {rank}")));
        }
        let dims = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::format("tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor { name, dims, data });
    }
    Ok((hash, tensors))
}

fn find<'a>(tensors: &'a [Tensor], name: &str) -> Result<&'a Tensor> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::format(format!("checkpoint lacks tensor {name}")))
}

fn dim(tensors: &[Tensor], name: &str, axis: usize) -> Result<usize> {
    find(tensors, name)?
        .dims
        .get(axis)
        .copied()
        .ok_or_else(|| Error::format(format!("tensor {name} has too few axes")))
}

fn scalar(tensors: &[Tensor], name: &str) -> Result<f64> {
    match find(tensors, name)? {
        Tensor { dims, data, .. } if dims.is_empty() => Ok(data[0]),
        _ => Err(Error::format(format!("{name} is not a scalar"))),
    }
}

fn count_layers(tensors: &[Tensor], stack: &str) -> usize {
    (0..)
        .take_while(|k| tensors.iter().any(|t| t.name == format!("scene.{stack}.{k}.w")))
        .count()
}

/// Decodes a checkpoint given its vocabulary.
pub fn checkpoint_from_bytes(bytes: &[u8], vocab: Vocab) -> Result<ModelParams> {
    let (hash, tensors) = read_tensors(bytes)?;
    let heads = scalar(&tensors, HEADS)?;
    if heads.fract() != 0.0 || heads < 1.0 {
        return Err(Error::format(format!("head count {heads} is not a positive integer")));
    }
    let config = ModelConfig {
        dim: dim(&tensors, "concept.projection", 1)?,
        word_dim: dim(&tensors, "concept.embedding_table", 1)?,
        region_dim: dim(&tensors, "visual.fc1", 0)?,
        heads: heads as usize,
        max_rank: dim(&tensors, "visual.rank_logits", 0)?,
        oa_layers: count_layers(&tensors, "oa"),
        oo_layers: count_layers(&tensors, "oo"),
        leaky_slope: scalar(&tensors, SLOPE)?,
    };
    config.validate().map_err(|e| Error::format(format!("implied config is invalid: {e}")))?;
    if dim(&tensors, "concept.embedding_table", 0)? != vocab.len() {
        return Err(Error::format("vocabulary size disagrees with the embedding table"));
    }
    if config_hash(&config, &vocab) != hash {
        return Err(Error::format("config hash does not match the stored tensors and vocabulary"));
    }
    let mut params = ModelParams::init(config, vocab, &mut ChaCha8Rng::seed_from_u64(0))?;
    let expected = tensors.len() - 2;
    let shapes: Vec<(usize, usize)> = params.blocks().iter().map(|b| b.shape).collect();
    if shapes.len() != expected {
        return Err(Error::format(format!(
            "checkpoint holds {expected} tensors, config implies {}",
            shapes.len()
        )));
    }
    for ((name, dst), (r, c)) in params.blocks_mut().into_iter().zip(shapes) {
        let t = find(&tensors, name)?;
        if t.dims != [r, c] {
            return Err(Error::shape(format!("tensor {name} stored as {:?}, expected [{r}, {c}]", t.dims)));
        }
        dst.copy_from_slice(&t.data);
    }
    Ok(params)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let vocab = Vocab::load(&vocab_path(path))?;
    checkpoint_from_bytes(&fs::read(path)?, vocab)
}

/// Loads a checkpoint and requires its architecture to equal `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<ModelParams> {
    let params = load_checkpoint(path)?;
    if &params.config != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint has {:?}, expected {:?}",
            params.config, expected
        )));
    }
    Ok(params)
}
