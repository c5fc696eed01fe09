//! Mini-batch training with Adam and optional person-disjoint early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{lr_at_epoch, TrainConfig};
use super::optim::Adam;
use crate::autodiff::{Graph, Tensor};
use crate::biomech::JointLimits;
use crate::data::windows::{stack_inputs, stack_targets};
use crate::data::{Standardizer, WindowPair};
use crate::error::{Error, Result};
use crate::model::{loss, Dropout, ForwardCtx, Imp2Head};

/// Windows per gradient shard in parallel-batch mode.
const SHARD: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted means over the epoch's batches.
    pub loss: f64,
    pub mse: f64,
    pub bio: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct BatchResult {
    loss: f64,
    mse: f64,
    bio: f64,
    grads: Vec<Vec<f64>>,
}

fn batch_gradients(
    model: &Imp2Head,
    windows: &[&WindowPair],
    norm: &Standardizer,
    limits: &JointLimits,
    lambda: f64,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<BatchResult> {
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g);
    let x = g.constant(stack_inputs(windows, norm)?);
    let y = g.constant(stack_targets(windows)?);
    let mut ctx = ForwardCtx {
        dropout: dropout.map(|rng| Dropout {
            rate: model.config().dropout,
            rng,
        }),
    };
    let pred = model.forward(&mut g, &bound, &mut ctx, x)?;
    let l = loss(&mut g, pred, y, limits, lambda)?;
    let total = g.value(l.total).item()?;
    if !total.is_finite() {
        return Err(g
            .first_non_finite()
            .unwrap_or(Error::Numeric(format!("loss is {total}"))));
    }
    g.backward(l.total)?;
    let grads = bound.vars().iter().map(|v| g.grad_or_zeros(*v)).collect::<Vec<_>>();
    if grads.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(BatchResult {
        loss: total,
        mse: g.value(l.mse).item()?,
        bio: g.value(l.bio).item()?,
        grads,
    })
}

/// Splits the batch into fixed shards, evaluates them on the rayon pool and
/// reduces in shard order, so the result does not depend on scheduling.
fn sharded_gradients(
    model: &Imp2Head,
    windows: &[&WindowPair],
    norm: &Standardizer,
    limits: &JointLimits,
    lambda: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<BatchResult> {
    let seeds: Vec<Option<u64>> = match rng {
        Some(r) => windows.chunks(SHARD).map(|_| Some(rand::Rng::random(r))).collect(),
        None => vec![None; windows.len().div_ceil(SHARD)],
    };
    let parts: Vec<Result<(usize, BatchResult)>> = windows
        .par_chunks(SHARD)
        .zip(seeds)
        .map(|(chunk, seed)| {
            let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
            batch_gradients(model, chunk, norm, limits, lambda, rng.as_mut()).map(|r| (chunk.len(), r))
        })
        .collect();
    let n = windows.len() as f64;
    let mut acc: Option<BatchResult> = None;
    for part in parts {
        let (len, r) = part?;
        let w = len as f64 / n;
        match &mut acc {
            None => {
                acc = Some(BatchResult {
                    loss: w * r.loss,
                    mse: w * r.mse,
                    bio: w * r.bio,
                    grads: r
                        .grads
                        .into_iter()
                        .map(|g| g.into_iter().map(|v| w * v).collect())
                        .collect(),
                })
            }
            Some(a) => {
                a.loss += w * r.loss;
                a.mse += w * r.mse;
                a.bio += w * r.bio;
                for (ga, gr) in a.grads.iter_mut().zip(&r.grads) {
                    ga.iter_mut().zip(gr).for_each(|(x, y)| *x += w * y);
                }
            }
        }
    }
    acc.ok_or_else(|| Error::InvalidInput("empty batch".into()))
}

/// Mean squared error of the model's predictions over `windows`.
pub fn mean_squared_error(model: &Imp2Head, windows: &[WindowPair], norm: &Standardizer, batch: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    let refs: Vec<&WindowPair> = windows.iter().collect();
    for chunk in refs.chunks(batch.max(1)) {
        let pred = model.predict(&stack_inputs(chunk, norm)?)?;
        let target: Tensor = stack_targets(chunk)?;
        sum += pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
        count += target.numel();
    }
    if count == 0 {
        return Err(Error::InvalidInput("no windows to score".into()));
    }
    Ok(sum / count as f64)
}

/// Trains in place. With a non-empty `val` set and `patience > 0`, stops
/// once validation MSE has not improved for `patience` epochs and restores
/// the best parameters.
pub fn train(
    model: &mut Imp2Head,
    train_set: &[WindowPair],
    val: &[WindowPair],
    norm: &Standardizer,
    cfg: &TrainConfig,
    limits: &JointLimits,
    parallel_batch: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("no training windows".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0001);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0002);
    let use_dropout = model.config().dropout > 0.0;
    let mut adam = Adam::new(model.params(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let early = cfg.patience > 0 && !val.is_empty();
    let mut best: Option<(f64, usize, Vec<(String, Tensor)>)> = None;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut mse_sum, mut bio_sum) = (0.0, 0.0, 0.0);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let windows: Vec<&WindowPair> = idx.iter().map(|&i| &train_set[i]).collect();
            let rng = use_dropout.then_some(&mut dropout_rng);
            let r = if parallel_batch {
                sharded_gradients(model, &windows, norm, limits, cfg.lambda, rng)
            } else {
                batch_gradients(model, &windows, norm, limits, cfg.lambda, rng)
            }
            .map_err(|e| Error::Training {
                epoch,
                batch,
                source: Box::new(e),
            })?;
            adam.step(model.params_mut(), &r.grads, lr)?;
            let w = windows.len() as f64;
            loss_sum += w * r.loss;
            mse_sum += w * r.mse;
            bio_sum += w * r.bio;
        }
        let n = train_set.len() as f64;
        let val_mse = if early {
            Some(mean_squared_error(model, val, norm, cfg.batch_size)?)
        } else {
            None
        };
        history.push(EpochStats {
            epoch,
            lr,
            loss: loss_sum / n,
            mse: mse_sum / n,
            bio: bio_sum / n,
            val_mse,
        });
        log::debug!("epoch {epoch}: loss {:.6} val {:?}", loss_sum / n, val_mse);
        if let Some(v) = val_mse {
            match &best {
                Some((b, _, _)) if v >= *b => {}
                _ => best = Some((v, epoch, model.params().entries().to_vec())),
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if epoch - best_epoch >= cfg.patience {
                stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, e, params)) => {
            model.params_mut().load_from(&params)?;
            e
        }
        None => history.len() - 1,
    };
    Ok(TrainOutcome {
        history,
        best_epoch,
        stopped_early,
    })
}
