use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::error::{shape_err, Error, Result};
use crate::harness::mean_auc;
use crate::masks::AnatomyMasks;
use crate::nn::{Adam, Ctx, Mode, ParamStore};
use crate::tensor::Tensor;

use super::{bce_loss, Model};

/// Images `N x 1 x H x W`, their anatomy masks, and binary labels
/// `N x n_classes`.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    pub images: Tensor,
    pub masks: AnatomyMasks,
    pub labels: Tensor,
}

impl LabeledSet {
    pub fn new(images: Tensor, masks: AnatomyMasks, labels: Tensor) -> Result<Self> {
        let (n, c, _, _) = images.dims4()?;
        let (nl, _) = labels.dims2()?;
        if c != 1 || masks.batch() != n || nl != n {
            return shape_err(
                "labeled_set",
                format!(
                    "images {:?}, masks {:?}, labels {:?}",
                    images.shape(),
                    masks.lung().shape(),
                    labels.shape()
                ),
            );
        }
        if labels.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        Ok(Self {
            images,
            masks,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            images: self.images.select_batch(idx)?,
            masks: self.masks.select_batch(idx)?,
            labels: self.labels.select_batch(idx)?,
        })
    }

    /// Same samples with masks resized (nearest) to `size`.
    pub fn with_mask_size(&self, size: usize) -> Result<Self> {
        Ok(Self {
            masks: self.masks.resize((size, size))?,
            ..self.clone()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Drives the batch partition and its per-epoch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            lr: 3e-3,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean training BCE over the epoch.
    pub loss: f64,
    /// Mean per-class validation AUC in percent, when computable.
    pub val_auc: Option<f64>,
}

/// Adam training with fixed learning rate. Samples are partitioned into
/// batches once per run and the batch order is reshuffled every epoch. A
/// trailing batch of one sample joins its predecessor so batch statistics
/// always exist. A single-sample set is accepted; spatial normalization
/// still has statistics, while attention encoders then fail with a shape
/// error. With a validation set, the parameters of the epoch with
/// the best mean validation AUC are kept.
pub fn train(
    model: &mut Model,
    data: &LabeledSet,
    val: Option<&LabeledSet>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    let n = data.len();
    if n == 0 {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let (_, k) = data.labels.dims2()?;
    if k != model.config().n_classes {
        return shape_err(
            "train",
            format!("labels have {k} classes, model {}", model.config().n_classes),
        );
    }
    let ms = model.config().mask_size;
    let data = data.with_mask_size(ms)?;
    let val = val.map(|v| v.with_mask_size(ms)).transpose()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order
        .chunks(cfg.batch_size.max(2))
        .map(|c| c.to_vec())
        .collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    let batch_sets: Vec<LabeledSet> = batches.iter().map(|b| data.select(b)).collect::<Result<_>>()?;

    let mut adam = Adam::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ParamStore)> = None;
    let mut step = 0;
    let mut visit: Vec<usize> = (0..batch_sets.len()).collect();

    for epoch in 1..=cfg.epochs {
        visit.shuffle(&mut rng);
        let mut losses = vec![0.0; batch_sets.len()];
        for &bi in &visit {
            step += 1;
            let b = &batch_sets[bi];
            let mut g = Graph::new();
            let x = g.constant(b.images.clone());
            let y = g.constant(b.labels.clone());
            let mut ctx = Ctx::new(&mut g, &mut model.store, Mode::Train);
            let diverged = |e: Error| match e {
                Error::NonFinite { op } => Error::Diverged {
                    step,
                    detail: format!("non-finite value in {op}"),
                },
                other => other,
            };
            let out = super::forward_arch(&model.config, &model.arch, &mut ctx, x, &b.masks).map_err(diverged)?;
            let loss = bce_loss(ctx.graph, out.probs, y).map_err(diverged)?;
            let grads = ctx.graph.backward(loss).map_err(diverged)?;
            let pg = ctx.param_grads(&grads);
            let lv = ctx.graph.value(loss).data()[0];
            drop(ctx);
            adam.step(&mut model.store, &pg);
            losses[bi] = lv * b.len() as f64;
        }
        let loss = losses.iter().sum::<f64>() / n as f64;
        let val_auc = match &val {
            Some(v) => {
                let p = model.predict(&v.images, &v.masks)?;
                mean_auc(&p, &v.labels)?
            }
            None => None,
        };
        if let Some(a) = val_auc {
            if best.as_ref().is_none_or(|(b, _)| a > *b) {
                best = Some((a, model.store.clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            loss,
            val_auc,
        });
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok(history)
}

pub fn write_history<W: Write>(mut w: W, history: &[EpochRecord]) -> Result<()> {
    writeln!(w, "epoch,loss,val_auc")?;
    for r in history {
        match r.val_auc {
            Some(a) => writeln!(w, "{},{:.9},{:.6}", r.epoch, r.loss, a)?,
            None => writeln!(w, "{},{:.9},", r.epoch, r.loss)?,
        }
    }
    Ok(())
}
