use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numcore::ParamSet;

use super::config::TrainConfig;
use super::data::{make_batches, Dataset, TrainBatch};
use super::model::{loss_and_gradients, ModelConfig, ModelParams};
use super::optim::OptimizerState;
use super::rng::{named_rng, AUGMENT, INIT, SAMPLER};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Forward, backward and one optimizer update; returns the loss measured
/// before the update.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    batch: &TrainBatch,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::invalid("a training batch needs at least two pairs"));
    }
    let (parts, grads) = loss_and_gradients(params, batch, &cfg.loss())?;
    let grads_finite = grads.iter().all(|g| g.iter().all(|x| x.is_finite()));
    if !parts.total.is_finite() || !grads_finite {
        return Err(Error::NonFinite(nonfinite_diagnostic(params, &grads, parts.total)));
    }
    opt.apply(params, &grads, lr)?;
    Ok(parts.total)
}

fn nonfinite_diagnostic(params: &ModelParams, grads: &[Vec<f64>], loss: f64) -> String {
    for (b, g) in params.blocks().iter().zip(grads) {
        if b.data.iter().any(|x| !x.is_finite()) {
            return format!("parameter block {} (loss {loss})", b.name);
        }
        if g.iter().any(|x| !x.is_finite()) {
            return format!("gradient of block {} (loss {loss})", b.name);
        }
    }
    format!("total loss {loss} with finite parameters and gradients")
}

/// Ensures every image and caption fits the pooling rank of the model.
pub fn check_fits(dataset: &Dataset, config: &ModelConfig) -> Result<()> {
    dataset.validate()?;
    for (k, m) in dataset.images.iter().enumerate() {
        if m.cols() != config.region_dim {
            return Err(Error::shape(format!(
                "image {k} has {}-d regions, model expects {}",
                m.cols(),
                config.region_dim
            )));
        }
        if m.rows() > config.max_rank {
            return Err(Error::invalid(format!(
                "image {k} has {} regions, pooling supports {}",
                m.rows(),
                config.max_rank
            )));
        }
    }
    if let Some(k) = dataset.captions.iter().position(|g| g.objects.len() > config.max_rank) {
        return Err(Error::invalid(format!("caption {k} has more objects than the pooling rank")));
    }
    Ok(())
}

/// Fresh parameters drawn from the run's init stream.
pub fn init_params(dataset: &Dataset, model: ModelConfig, seed: u64) -> Result<ModelParams> {
    ModelParams::init(model, dataset.vocab(), &mut named_rng(seed, INIT))
}

/// Runs `cfg.epochs` epochs, writing one JSON record per step to `log` and
/// returning the mean loss of each epoch.
pub fn train(
    params: &mut ModelParams,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_fits(dataset, &params.config)?;
    let mut opt = OptimizerState::new(params, cfg.weight_decay);
    let mut sampler = named_rng(cfg.seed, SAMPLER);
    let mut augment = named_rng(cfg.seed, AUGMENT);
    let vocab = params.vocab().clone();
    let mut means = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let batches = make_batches(dataset, &vocab, cfg, &mut sampler, &mut augment)?;
        let mut total = 0.0;
        for batch in &batches {
            let loss = train_step(params, &mut opt, batch, cfg, lr)?;
            total += loss;
            if let Some(w) = log.as_deref_mut() {
                let rec = StepRecord {
                    epoch: epoch + 1,
                    step: opt.step,
                    loss,
                    lr,
                };
                serde_json::to_writer(&mut *w, &rec)?;
                writeln!(w)?;
            }
        }
        means.push(total / batches.len() as f64);
    }
    Ok(means)
}
