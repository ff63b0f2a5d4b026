//! SGD training, evaluation, pretext pretraining with head transfer, and
//! the feature-variant ablation.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dastrace::{SampleRecord, ThreatClass, ZoneTrace, SAMPLE_RATE_HZ, WINDOW_LEN};
use crate::featurize::{featurize_set, make_features, FeatureConfig, FeatureError, FeatureSample, FeatureVariant};
use crate::metrics::MetricsReport;
use crate::network::layers::{cross_entropy, softmax};
use crate::network::model::{Classifier, ModelSpec};
use crate::network::{for_each_param, zero_grad, Mode, Module, NetError, Real, Tensor};
use crate::simulate::record_seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("epoch {epoch} outside schedule of {epochs} epochs")]
    EpochOutOfRange { epoch: usize, epochs: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("empty {0}")]
    Empty(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    /// Checkpoint to initialise from instead of random weights.
    pub pretrained: Option<PathBuf>,
}

/// Epoch budget used for routine runs; [`TrainConfig::full_schedule`] has
/// the long schedule.
pub const DEFAULT_EPOCHS: usize = 30;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 8,
            epochs: DEFAULT_EPOCHS,
            lr_start: 0.01,
            lr_end: 0.001,
            seed: 0,
            pretrained: None,
        }
    }
}

impl TrainConfig {
    /// 100 epochs.
    pub fn full_schedule() -> Self {
        Self {
            epochs: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.lr_end <= self.lr_start) || self.lr_end < 0.0 {
            return bad(format!("need 0 <= lr_end <= lr_start, got {} and {}", self.lr_end, self.lr_start));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must be in [0, 1) and weight_decay >= 0".into());
        }
        Ok(())
    }
}

/// Cosine decay from `lr_start` at epoch 0 to `lr_end` at the last epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64, TrainError> {
    if epoch >= cfg.epochs {
        return Err(TrainError::EpochOutOfRange {
            epoch,
            epochs: cfg.epochs,
        });
    }
    if cfg.epochs == 1 {
        return Ok(cfg.lr_start);
    }
    let phase = std::f64::consts::PI * epoch as f64 / (cfg.epochs - 1) as f64;
    Ok(cfg.lr_end + (cfg.lr_start - cfg.lr_end) * (1.0 + phase.cos()) / 2.0)
}

/// Momentum SGD with L2 weight decay folded into the velocity:
/// `v = mu v + g + wd theta`, `theta -= lr v`.
pub struct Sgd<T: Real> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &mut dyn Module<T>, lr: f64) {
        let (mu, wd, lr) = (T::lit(self.momentum), T::lit(self.weight_decay), T::lit(lr));
        let mut i = 0;
        let velocity = &mut self.velocity;
        for_each_param(model, |_, p| {
            if velocity.len() <= i {
                velocity.push(vec![T::zero(); p.len()]);
            }
            let v = &mut velocity[i];
            let grads = p.grad.data().to_vec();
            for ((theta, g), vel) in p.value.data_mut().iter_mut().zip(grads).zip(v.iter_mut()) {
                *vel = mu * *vel + g + wd * *theta;
                *theta -= lr * *vel;
            }
            i += 1;
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training cross-entropy over the epoch.
    pub loss: f64,
    pub val_acc: Option<f64>,
}

/// `epoch,loss,val_acc` with a header line.
pub fn loss_curve_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loss,val_acc\n");
    for s in curve {
        let acc = s.val_acc.map_or(String::new(), |a| format!("{a:.6}"));
        out.push_str(&format!("{},{:.8},{acc}\n", s.epoch, s.loss));
    }
    out
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(record_seed(seed ^ 0x5EED_0F5A_u64, epoch as u64))
}

/// Generic mini-batch loop. `inputs` are single samples (no batch axis);
/// after every epoch `on_epoch` may report a validation accuracy and may
/// return `Ok(true)` in the second slot to stop early.
pub fn fit<T: Real>(
    model: &mut dyn Module<T>,
    inputs: &[&Tensor<T>],
    labels: &[usize],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &mut dyn Module<T>) -> Result<(Option<f64>, bool), TrainError>,
) -> Result<Vec<EpochStats>, TrainError> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(TrainError::Empty("training set"));
    }
    if inputs.len() != labels.len() {
        return Err(TrainError::InvalidConfig(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let mut opt = Sgd::<T>::new(cfg.momentum, cfg.weight_decay);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg)?;
        order.sort_unstable();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Tensor<T>> = chunk.iter().map(|&i| inputs[i]).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let x = Tensor::stack(&batch)?;
            zero_grad(model);
            let logits = model.forward(&x, Mode::Train)?;
            let (loss, grad) = cross_entropy(&logits, &targets)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b });
            }
            model.backward(&grad)?;
            opt.step(model, lr);
            total += loss * chunk.len() as f64;
        }
        let (val_acc, stop) = on_epoch(epoch, model)?;
        curve.push(EpochStats {
            epoch,
            lr,
            loss: total / inputs.len() as f64,
            val_acc,
        });
        if stop {
            break;
        }
    }
    Ok(curve)
}

const EVAL_BATCH: usize = 32;

/// Inference-mode class probabilities, one row per input.
pub fn predict_proba<T: Real>(model: &mut dyn Module<T>, inputs: &[&Tensor<T>]) -> Result<Vec<Vec<f64>>, TrainError> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_BATCH) {
        let x = Tensor::stack(chunk)?;
        let p = softmax(&model.forward(&x, Mode::Eval)?)?;
        let k = p.shape()[1];
        out.extend(p.data().chunks_exact(k).map(|r| r.iter().map(|v| v.as_f64()).collect::<Vec<f64>>()));
    }
    Ok(out)
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

pub fn accuracy<T: Real>(model: &mut dyn Module<T>, inputs: &[&Tensor<T>], labels: &[usize]) -> Result<f64, TrainError> {
    if inputs.is_empty() {
        return Err(TrainError::Empty("evaluation set"));
    }
    let probs = predict_proba(model, inputs)?;
    let hits = probs.iter().zip(labels).filter(|(p, &y)| argmax(p) == y).count();
    Ok(hits as f64 / inputs.len() as f64)
}

fn split_samples(samples: &[FeatureSample]) -> (Vec<&Tensor<f32>>, Vec<usize>) {
    (
        samples.iter().map(|s| &s.features).collect(),
        samples.iter().map(|s| s.label.index()).collect(),
    )
}

/// Trains `model` on `train_set`, reporting validation accuracy per epoch
/// when `val_set` is given.
pub fn train(
    model: &mut Classifier<f32>,
    train_set: &[FeatureSample],
    val_set: Option<&[FeatureSample]>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>, TrainError> {
    if let Some(s) = train_set.first() {
        model.check_input(&s.features.clone().reshape(&prepend_batch(s.features.shape()))?)?;
    }
    let (xs, ys) = split_samples(train_set);
    let val = val_set.map(split_samples);
    fit(model, &xs, &ys, cfg, |_, m| match &val {
        Some((vx, vy)) => Ok((Some(accuracy(m, vx, vy)?), false)),
        None => Ok((None, false)),
    })
}

fn prepend_batch(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1];
    s.extend_from_slice(shape);
    s
}

/// Confusion-matrix metrics on a labelled feature set.
pub fn evaluate(model: &mut Classifier<f32>, test_set: &[FeatureSample]) -> Result<MetricsReport, TrainError> {
    if test_set.is_empty() {
        return Err(TrainError::Empty("test set"));
    }
    let start = Instant::now();
    let (xs, _) = split_samples(test_set);
    let probs = predict_proba(model, &xs)?;
    let truth: Vec<ThreatClass> = test_set.iter().map(|s| s.label).collect();
    let pred: Vec<ThreatClass> = probs.iter().map(|p| ThreatClass::ALL[argmax(p)]).collect();
    Ok(MetricsReport::from_predictions(&truth, &pred, start.elapsed().as_secs_f64()))
}

/// One classified record.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: ThreatClass,
    pub probabilities: [f64; 3],
}

/// Featurizes and classifies raw records.
pub fn classify_records(
    model: &mut Classifier<f32>,
    records: &[SampleRecord],
    variant: FeatureVariant,
    cfg: &FeatureConfig,
) -> Result<Vec<Prediction>, TrainError> {
    let feats = records
        .iter()
        .map(|r| make_features(r, variant, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Tensor<f32>> = feats.iter().collect();
    Ok(predict_proba(model, &refs)?
        .into_iter()
        .map(|p| Prediction {
            class: ThreatClass::ALL[argmax(&p)],
            probabilities: [p[0], p[1], p[2]],
        })
        .collect())
}

/// Synthetic texture classification used for pretraining. Classes: one
/// stationary band, two stationary bands, rising chirp, falling chirp.
/// Images are rendered through the same stitched-spectrogram path as the
/// threat features.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextTask {
    pub n_samples: usize,
    pub classes: usize,
    pub seed: u64,
}

pub const PRETEXT_CLASSES: usize = 4;

impl PretextTask {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            classes: PRETEXT_CLASSES,
            seed,
        }
    }
}

fn pretext_record(class: usize, seed: u64) -> SampleRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = SAMPLE_RATE_HZ;
    let n = WINDOW_LEN;
    let nyq = fs / 2.0;
    // instantaneous-frequency tracks (Hz) per component
    let tracks: Vec<(f64, f64)> = match class {
        0 => {
            let f = rng.random_range(40.0..0.8 * nyq);
            vec![(f, f)]
        }
        1 => {
            let f1 = rng.random_range(40.0..0.4 * nyq);
            let f2 = f1 + rng.random_range(0.15 * nyq..0.4 * nyq);
            vec![(f1, f1), (f2, f2)]
        }
        _ => {
            let lo = rng.random_range(30.0..0.3 * nyq);
            let hi = rng.random_range(0.5 * nyq..0.9 * nyq);
            if class == 2 {
                vec![(lo, hi)]
            } else {
                vec![(hi, lo)]
            }
        }
    };
    let pulsed = rng.random_bool(0.5);
    let pulse_rate = rng.random_range(1.0..3.0);
    let tau = rng.random_range(0.05..0.2);
    let phases: Vec<f64> = tracks.iter().map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let mut source = vec![0.0f64; n];
    let duration = n as f64 / fs;
    for (k, &(f0, f1)) in tracks.iter().enumerate() {
        let slope = (f1 - f0) / duration;
        for (i, s) in source.iter_mut().enumerate() {
            let t = i as f64 / fs;
            *s += (std::f64::consts::TAU * (f0 * t + 0.5 * slope * t * t) + phases[k]).sin();
        }
    }
    if pulsed {
        let period = 1.0 / pulse_rate;
        let offset = rng.random_range(0.0..period);
        for (i, s) in source.iter_mut().enumerate() {
            let t = i as f64 / fs;
            let since = (t - offset).rem_euclid(period);
            *s *= (-since / tau).exp();
        }
    }
    let noise = Normal::new(0.0, 0.05).unwrap();
    let gains: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..1.0)).collect();
    let center = 1 + rng.random_range(0..1000u32);
    let traces = std::array::from_fn(|z| {
        let samples = source.iter().map(|&s| (gains[z] * s + noise.sample(&mut rng)) as f32).collect();
        ZoneTrace::new(center - 1 + z as u32, samples)
    });
    SampleRecord {
        center_zone: center,
        traces,
        // placeholder; pretext labels are carried separately
        label: ThreatClass::Alarm,
        radial_distance_m: 0.0,
    }
}

/// Balanced pretext images with their class indices.
pub fn pretext_samples(task: &PretextTask, cfg: &FeatureConfig) -> Result<Vec<(Tensor<f32>, usize)>, TrainError> {
    if task.classes != PRETEXT_CLASSES {
        return Err(TrainError::InvalidConfig(format!(
            "pretext task has {PRETEXT_CLASSES} classes, got {}",
            task.classes
        )));
    }
    (0..task.n_samples)
        .map(|i| {
            let class = i % PRETEXT_CLASSES;
            let rec = pretext_record(class, record_seed(task.seed, i as u64));
            Ok((make_features(&rec, FeatureVariant::Stff, cfg)?, class))
        })
        .collect()
}

/// Outcome of [`pretrain_then_finetune`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub pretext_val_acc: f64,
    /// Target validation accuracy right after the head swap.
    pub post_swap_acc: f64,
    pub epochs_to_threshold_scratch: usize,
    pub epochs_to_threshold_pretrained: usize,
    pub scratch_curve: Vec<EpochStats>,
    pub finetune_curve: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    pub pretext: PretextTask,
    pub pretext_epochs: usize,
    /// Validation accuracy that counts as converged.
    pub threshold: f64,
    pub model_seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            pretext: PretextTask::new(800, 17),
            pretext_epochs: 10,
            threshold: 0.90,
            model_seed: 0,
        }
    }
}

fn epochs_to_threshold(
    model: &mut Classifier<f32>,
    train_set: &[FeatureSample],
    val_set: &[FeatureSample],
    cfg: &TrainConfig,
    threshold: f64,
) -> Result<(usize, Vec<EpochStats>), TrainError> {
    let (xs, ys) = split_samples(train_set);
    let (vx, vy) = split_samples(val_set);
    let mut reached = None;
    let curve = fit(model, &xs, &ys, cfg, |epoch, m| {
        let acc = accuracy(m, &vx, &vy)?;
        if acc >= threshold && reached.is_none() {
            reached = Some(epoch + 1);
        }
        Ok((Some(acc), reached.is_some()))
    })?;
    Ok((reached.unwrap_or(cfg.epochs + 1), curve))
}

/// Pretrains on the pretext task, swaps the head for a fresh 3-class one
/// and fine-tunes; separately trains the same architecture from scratch.
/// Reports epochs needed to reach `threshold` validation accuracy
/// (`cfg.epochs + 1` when never reached).
pub fn pretrain_then_finetune(
    transfer: &TransferConfig,
    feature_cfg: &FeatureConfig,
    target_train: &[FeatureSample],
    target_val: &[FeatureSample],
    cfg: &TrainConfig,
) -> Result<TransferReport, TrainError> {
    if target_val.is_empty() {
        return Err(TrainError::Empty("validation set"));
    }
    let pretext = pretext_samples(&transfer.pretext, feature_cfg)?;
    let n_val = (pretext.len() / 5).max(1);
    let (p_val, p_train) = pretext.split_at(n_val);
    let spec = ModelSpec {
        classes: transfer.pretext.classes,
        ..ModelSpec::default()
    };
    let spec = ModelSpec {
        base_resolution: feature_cfg.resolution,
        ..spec
    };
    let mut model = Classifier::<f32>::new(spec.clone(), transfer.model_seed)?;
    let pcfg = TrainConfig {
        epochs: transfer.pretext_epochs,
        ..cfg.clone()
    };
    let px: Vec<&Tensor<f32>> = p_train.iter().map(|(t, _)| t).collect();
    let py: Vec<usize> = p_train.iter().map(|(_, c)| *c).collect();
    fit(&mut model, &px, &py, &pcfg, |_, _| Ok((None, false)))?;
    let vx: Vec<&Tensor<f32>> = p_val.iter().map(|(t, _)| t).collect();
    let vy: Vec<usize> = p_val.iter().map(|(_, c)| *c).collect();
    let pretext_val_acc = accuracy(&mut model, &vx, &vy)?;

    model.reset_head(3, transfer.model_seed ^ 0x4EAD);
    let (tx, ty) = split_samples(target_val);
    let post_swap_acc = accuracy(&mut model, &tx, &ty)?;
    let (epochs_pre, finetune_curve) = epochs_to_threshold(&mut model, target_train, target_val, cfg, transfer.threshold)?;

    let scratch_spec = ModelSpec { classes: 3, ..spec };
    let mut scratch = Classifier::<f32>::new(scratch_spec, transfer.model_seed)?;
    let (epochs_scratch, scratch_curve) =
        epochs_to_threshold(&mut scratch, target_train, target_val, cfg, transfer.threshold)?;
    Ok(TransferReport {
        pretext_val_acc,
        post_swap_acc,
        epochs_to_threshold_scratch: epochs_scratch,
        epochs_to_threshold_pretrained: epochs_pre,
        scratch_curve,
        finetune_curve,
    })
}

/// One ablation arm.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: FeatureVariant,
    pub report: MetricsReport,
    pub curve: Vec<EpochStats>,
}

/// Trains and evaluates one freshly initialised model per variant, all
/// from the same model seed and training configuration. `wall_time_s`
/// covers featurization, training and evaluation of the arm.
pub fn ablation_run(
    train_records: &[SampleRecord],
    test_records: &[SampleRecord],
    variants: &[FeatureVariant],
    feature_cfg: &FeatureConfig,
    cfg: &TrainConfig,
    model_seed: u64,
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let start = Instant::now();
        let train_set = featurize_set(train_records, variant, feature_cfg, true)?;
        let test_set = featurize_set(test_records, variant, feature_cfg, false)?;
        let spec = ModelSpec {
            base_resolution: feature_cfg.resolution,
            ..ModelSpec::default()
        };
        let mut model = Classifier::<f32>::new(spec, model_seed)?;
        let curve = train(&mut model, &train_set, None, cfg)?;
        let mut report = evaluate(&mut model, &test_set)?;
        report.wall_time_s = start.elapsed().as_secs_f64();
        rows.push(AblationRow { variant, report, curve });
    }
    Ok(rows)
}
