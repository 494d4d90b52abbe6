//! Mini-batch training loop with validation cadence and best-checkpoint selection.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::patches::{augment, extract_patches, PatchPair};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, init_params, mse_loss, network_backward, network_forward, predict_residual, AdamConfig, ModelState,
    Mode, NetworkSpec,
};
use crate::recon::DwiCase;
use crate::seeds::split_seed;
use crate::tensor::Tensor;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub depth: usize,
    pub width: usize,
    pub guided: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub validate_every: usize,
    /// Patches whose reference maximum is below this fraction of the case
    /// reference maximum are dropped.
    pub background_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: 40,
            stride: 20,
            depth: 8,
            width: 32,
            guided: true,
            batch_size: 64,
            epochs: 10,
            lr_start: 1e-3,
            lr_end: 1e-5,
            weight_decay: 1e-4,
            beta1: 0.9,
            validate_every: 3,
            background_threshold: 0.02,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-size protocol: depth 20, width 64, 60x60 patches, batch 128,
    /// 25 epochs, learning rate 1e-1 down to 1e-4.
    pub fn full_scale() -> Self {
        TrainConfig {
            patch_size: 60,
            stride: 30,
            depth: 20,
            width: 64,
            batch_size: 128,
            epochs: 25,
            lr_start: 1e-1,
            lr_end: 1e-4,
            ..Default::default()
        }
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::new(self.depth, self.width, self.guided)
    }

    pub fn validate(&self) -> Result<()> {
        self.network_spec()?;
        if self.patch_size < 3 || self.stride == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "patch_size >= 3 and positive stride, batch_size and epochs are required".into(),
            ));
        }
        if self.validate_every == 0 {
            return Err(Error::Config("validate_every must be >= 1".into()));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return Err(Error::Config(format!(
                "need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::Config("weight_decay must be >= 0 and beta1 in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.background_threshold) {
            return Err(Error::Config("background_threshold must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Exponential decay from `lr_start` at epoch 0 to `lr_end` at the last epoch.
pub fn lr_schedule(epoch: usize, total_epochs: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total_epochs <= 1 {
        return lr_start;
    }
    lr_start * (lr_end / lr_start).powf(epoch as f64 / (total_epochs - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Patch-weighted mean training loss over the epoch.
    pub train_loss: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub n_patches: usize,
    /// Not part of any report; excluded from equality of logs across runs.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl TrainLog {
    pub fn validation_epochs(&self) -> Vec<usize> {
        self.epochs.iter().filter(|e| e.val_mse.is_some()).map(|e| e.epoch).collect()
    }
}

/// Build the training patch pool, dropping background-only windows.
pub fn patch_pool(cases: &[DwiCase], cfg: &TrainConfig) -> Result<Vec<PatchPair>> {
    let mut pool = Vec::new();
    for case in cases {
        let floor = cfg.background_threshold * case.reference_hb.max();
        pool.extend(
            extract_patches(case, cfg.patch_size, cfg.stride)?
                .into_iter()
                .filter(|p| p.reference.max() as f64 >= floor),
        );
    }
    Ok(pool)
}

struct Batch {
    noisy: Tensor<f32>,
    guidance: Option<Tensor<f32>>,
    reference: Tensor<f32>,
}

fn assemble_batch(pairs: &[PatchPair], guided: bool) -> Result<Batch> {
    let p = pairs[0].noisy.shape()[0];
    let stack = |f: fn(&PatchPair) -> &Tensor<f32>| -> Result<Tensor<f32>> {
        let items: Vec<&Tensor<f32>> = pairs.iter().map(f).collect();
        Tensor::stack(&items)?.reshape(&[pairs.len(), 1, p, p])
    };
    Ok(Batch {
        noisy: stack(|q| &q.noisy)?,
        guidance: if guided { Some(stack(|q| &q.guidance)?) } else { None },
        reference: stack(|q| &q.reference)?,
    })
}

fn as_nchw(img: &Tensor<f64>) -> Result<Tensor<f32>> {
    let (h, w) = img.dims2()?;
    img.cast::<f32>().reshape(&[1, 1, h, w])
}

/// Denoise a full case in eval mode; returns an `[H, W]` image.
pub fn denoise_case(model: &ModelState<f32>, case: &DwiCase) -> Result<Tensor<f64>> {
    let (h, w) = case.shape();
    let noisy = as_nchw(&case.noisy_hb)?;
    let guidance = if model.spec.is_guided() { Some(as_nchw(&case.guidance_lb)?) } else { None };
    let residual = predict_residual(&noisy, guidance.as_ref(), model)?;
    let out = noisy.sub(&residual)?.cast::<f64>();
    out.reshape(&[h, w])
}

/// Pixel-pooled MSE of the denoised validation images against their references.
pub fn validation_mse(model: &ModelState<f32>, cases: &[DwiCase]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for case in cases {
        let d = denoise_case(model, case)?;
        sum += d
            .data()
            .iter()
            .zip(case.reference_hb.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
        count += d.len();
    }
    Ok(sum / count as f64)
}

/// Train on `train_cases`, validating on `val_cases`; returns the checkpoint
/// with the lowest validation MSE.
pub fn train(train_cases: &[DwiCase], val_cases: &[DwiCase], cfg: &TrainConfig) -> Result<(ModelState<f32>, TrainLog)> {
    train_with_progress(train_cases, val_cases, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with_progress(
    train_cases: &[DwiCase],
    val_cases: &[DwiCase],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(ModelState<f32>, TrainLog)> {
    cfg.validate()?;
    if train_cases.is_empty() || val_cases.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    let train_ids: HashSet<u64> = train_cases.iter().map(|c| c.id).collect();
    if let Some(c) = val_cases.iter().find(|c| train_ids.contains(&c.id)) {
        return Err(Error::invalid(format!("case {} is in both training and validation sets", c.id)));
    }
    let started = Instant::now();
    let pool = patch_pool(train_cases, cfg)?;
    if pool.is_empty() {
        return Err(Error::invalid("no training patches survive the background filter"));
    }

    let mut model = init_params::<f32>(cfg.network_spec()?, split_seed(cfg.seed, INIT_STREAM))?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelState<f32>)> = None;

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end);
        let adam = AdamConfig {
            lr,
            beta1: cfg.beta1,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(split_seed(cfg.seed, SHUFFLE_STREAM), epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let pairs = chunk
                .iter()
                .map(|&i| augment(&pool[i], rng.random_range(0..8)))
                .collect::<Result<Vec<_>>>()?;
            let batch = assemble_batch(&pairs, cfg.guided)?;
            let (residual, cache) = network_forward(&batch.noisy, batch.guidance.as_ref(), &mut model, Mode::Train)?;
            let denoised = batch.noisy.sub(&residual)?;
            let (loss, grad) = mse_loss(&denoised, &batch.reference)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss is {loss} at epoch {epoch}, batch {b} (lr {lr:.3e})"
                )));
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            // denoised = noisy - residual
            let grad_residual = grad.map(|g| -g);
            let grads = network_backward(&grad_residual, cache.as_ref(), &model)?;
            adam_step(&mut model, &grads, &adam)?;
        }
        let val_mse = if epoch % cfg.validate_every == 0 {
            let v = validation_mse(&model, val_cases)?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("validation MSE is {v} at epoch {epoch}")));
            }
            if best.as_ref().is_none_or(|(m, _, _)| v < *m) {
                best = Some((v, epoch, model.clone()));
            }
            Some(v)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / pool.len() as f64,
            val_mse,
        };
        progress(&record);
        records.push(record);
    }

    let (best_val_mse, best_epoch, best_model) = best.expect("epoch 0 is always validated");
    let log = TrainLog {
        epochs: records,
        best_epoch,
        best_val_mse,
        n_patches: pool.len(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((best_model, log))
}

#[derive(Debug, Clone)]
pub struct DesignResult {
    pub name: String,
    pub config: TrainConfig,
    pub best_val_mse: f64,
    pub log: TrainLog,
    pub model: ModelState<f32>,
}

/// Train every named configuration on the same data.
pub fn compare_designs(
    train_cases: &[DwiCase],
    val_cases: &[DwiCase],
    configs: &[(String, TrainConfig)],
) -> Result<Vec<DesignResult>> {
    if configs.is_empty() {
        return Err(Error::invalid("no configurations to compare"));
    }
    configs
        .iter()
        .map(|(name, cfg)| {
            let (model, log) = train(train_cases, val_cases, cfg)?;
            Ok(DesignResult {
                name: name.clone(),
                config: *cfg,
                best_val_mse: log.best_val_mse,
                log,
                model,
            })
        })
        .collect()
}

/// Loss curves as CSV, one row per design per validation epoch.
pub fn loss_curve_csv(results: &[DesignResult]) -> String {
    let mut out = String::from("design,epoch,lr,train_loss,val_mse\n");
    for r in results {
        for e in r.log.epochs.iter().filter(|e| e.val_mse.is_some()) {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{:e}",
                r.name,
                e.epoch,
                e.lr,
                e.train_loss,
                e.val_mse.unwrap_or(f64::NAN)
            );
        }
    }
    out
}
