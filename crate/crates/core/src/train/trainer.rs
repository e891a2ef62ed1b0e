use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::metrics::l1_loss;
use super::optim::{adamw_step, AdamState, AdamWConfig};
use crate::arch::{ArchProfile, Model};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::nn::NormMode;
use crate::seismic::{Dataset, Sample};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    /// Epochs at which the learning rate is divided by 10.
    pub decay_epochs: Vec<usize>,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub betas: (f64, f64),
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            weight_decay: 5e-4,
            warmup_epochs: 10,
            decay_epochs: vec![40, 60, 70],
            total_epochs: 80,
            batch_size: 4,
            seed: 0,
            betas: (0.9, 0.999),
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 || self.batch_size == 0 {
            return Err(arg_err!("epochs and batch size must be positive"));
        }
        if !(self.base_lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(arg_err!("learning rate and weight decay must be non-negative"));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(arg_err!("decay epochs {:?} must be increasing", self.decay_epochs));
        }
        if let Some(&first) = self.decay_epochs.first() {
            if self.warmup_epochs >= first || first > self.total_epochs {
                return Err(arg_err!(
                    "need warmup {} < first decay {first} <= total epochs {}",
                    self.warmup_epochs,
                    self.total_epochs
                ));
            }
        } else if self.warmup_epochs > self.total_epochs {
            return Err(arg_err!("warmup is longer than training"));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { betas: self.betas, epsilon: self.epsilon, weight_decay: self.weight_decay }
    }
}

/// Linear warmup `base·(epoch+1)/warmup`, then `base·10^-k` with `k` the
/// number of decay epochs already reached.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.total_epochs {
        return Err(arg_err!("epoch {epoch} outside 0..{}", cfg.total_epochs));
    }
    if epoch < cfg.warmup_epochs {
        return Ok(cfg.base_lr * (epoch + 1) as f64 / cfg.warmup_epochs as f64);
    }
    let k = cfg.decay_epochs.iter().filter(|&&d| d <= epoch).count();
    Ok(cfg.base_lr * 10f64.powi(-(k as i32)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_l1: f64,
    pub val_l1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Stacks samples along a new batch axis.
pub fn stack_batch(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let stack = |ts: Vec<&Tensor<f32>>| -> Result<Tensor<f32>> {
        let dims = ts[0].dims().to_vec();
        let mut data = Vec::with_capacity(ts.len() * ts[0].numel());
        for t in &ts {
            if t.dims() != dims {
                return Err(shape_err!("cannot batch {:?} with {dims:?}", t.dims()));
            }
            data.extend_from_slice(t.data());
        }
        let mut full = vec![ts.len()];
        full.extend(dims);
        Tensor::new(&full, data)
    };
    Ok((stack(samples.iter().map(|s| &s.input).collect())?, stack(samples.iter().map(|s| &s.target).collect())?))
}

/// Splits `order` into batches of `size`; a trailing single sample joins the
/// previous batch so batch statistics always see at least two samples.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = order.len() - size - 1;
        out.pop();
        out.push(&order[start..]);
    }
    out
}

pub fn check_geometry(model: &Model<f32>, data: &Dataset) -> Result<()> {
    let plan = model.plan();
    let i = plan.input;
    let want_in = [i.channels, i.dims[0], i.dims[1], i.dims[2]];
    let want_out = plan.output_shape();
    for s in &data.samples {
        if s.input.dims() != want_in || s.target.dims() != want_out {
            return Err(shape_err!(
                "sample {} has input {:?} and target {:?}; the model maps {want_in:?} to {want_out:?}",
                s.record.index,
                s.input.dims(),
                s.target.dims()
            ));
        }
    }
    Ok(())
}

/// Mean ℓ₁ of the model over `data` with running statistics.
pub fn eval_l1(model: &mut Model<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    let order: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for b in order.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = b.iter().map(|&i| &data.samples[i]).collect();
        let (x, y) = stack_batch(&refs)?;
        let pred = model.forward(&x, NormMode::Eval)?;
        total += l1_loss(&pred, &y)?.0 * b.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Where training writes its history and best checkpoint.
pub struct TrainOutput<'a> {
    pub dir: &'a Path,
    pub profile: &'a ArchProfile,
}

/// Epoch loop over seeded shuffles of `train_set`. Records the mean training
/// ℓ₁ of every epoch and, when a validation set is given, its ℓ₁ under
/// running statistics; the best epoch (by validation ℓ₁, else training ℓ₁)
/// is checkpointed when `out` is set.
pub fn train(
    model: &mut Model<f32>,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
    out: Option<&TrainOutput<'_>>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(arg_err!("training needs at least 2 samples, got {}", train_set.len()));
    }
    check_geometry(model, train_set)?;
    if let Some(v) = val_set {
        check_geometry(model, v)?;
    }
    let mut history_file = match out {
        Some(o) => {
            std::fs::create_dir_all(o.dir).map_err(|e| Error::io(o.dir, e))?;
            let p = o.dir.join("history.jsonl");
            Some((std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };
    let adamw = cfg.adamw();
    let mut state = AdamState::default();
    let mut rng = Rng::with_stream(cfg.seed, 1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best = f64::INFINITY;
    for epoch in 0..cfg.total_epochs {
        let lr = lr_at_epoch(cfg, epoch)?;
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &train_set.samples[i]).collect();
            let (x, y) = stack_batch(&refs)?;
            model.zero_grad();
            let (pred, tape) = model.forward_train(&x)?;
            let (loss, grad) = l1_loss(&pred, &y)?;
            drop(pred);
            model.backward(&grad, tape)?;
            adamw_step(&mut model.params_mut(), &mut state, &adamw, lr)?;
            sum += loss * batch.len() as f64;
        }
        let train_l1 = sum / train_set.len() as f64;
        if !train_l1.is_finite() {
            return Err(Error::Numeric(format!("training loss became {train_l1} at epoch {epoch}")));
        }
        let val_l1 = val_set.map(|v| eval_l1(model, v, cfg.batch_size)).transpose()?;
        let record = EpochRecord { epoch, lr, train_l1, val_l1 };
        if let Some((f, p)) = &mut history_file {
            writeln!(f, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(p.as_path(), e))?;
        }
        let score = val_l1.unwrap_or(train_l1);
        if score < best {
            best = score;
            history.best_epoch = Some(epoch);
            if let Some(o) = out {
                save_checkpoint(&o.dir.join("best"), model, o.profile, Some(&state))?;
            }
        }
        history.epochs.push(record);
    }
    if let Some(o) = out {
        save_checkpoint(&o.dir.join("last"), model, o.profile, Some(&state))?;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(&cfg, 4).unwrap(), 0.5 * cfg.base_lr);
        assert!((lr_at_epoch(&cfg, 45).unwrap() - cfg.base_lr / 10.0).abs() < 1e-20);
        assert!((lr_at_epoch(&cfg, 75).unwrap() - cfg.base_lr / 1000.0).abs() < 1e-20);
        assert!(lr_at_epoch(&cfg, 80).is_err());
        let lrs: Vec<f64> = (10..80).map(|e| lr_at_epoch(&cfg, e).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { warmup_epochs: 40, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { total_epochs: 30, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { decay_epochs: vec![], total_epochs: 5, warmup_epochs: 2, ..Default::default() }
            .validate()
            .is_ok());
    }

    #[test]
    fn batching_never_leaves_singletons() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 5]);
        assert_eq!(b.concat(), order);
        assert_eq!(batches(&order, 3).len(), 3);
    }
}
