//! SGD training loop, learning-rate schedule and mask-free evaluation.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{batch_from_images, Model};
use crate::checkpoint;
use crate::domain::RotationClass;
use crate::error::{Error, Result};
use crate::losses::{stack_masks, total_loss_with_grad, LossBreakdown, LossConfig};
use crate::mask::{pyramid_from_boxes, Downscale, MaskPyramid};
use crate::metrics::{self, EvalReport};
use crate::synth::AnnotatedSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    StepDecay,
    Constant,
}

impl std::str::FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step_decay" => Ok(LrSchedule::StepDecay),
            "constant" => Ok(LrSchedule::Constant),
            other => Err(Error::invalid(format!("unknown lr schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    /// Fractions of `epochs` at which the rate is multiplied by `decay_factor`.
    pub decay_milestones: Vec<f64>,
    pub decay_factor: f64,
    pub momentum: f64,
    pub loss: LossConfig,
    pub mask_downscale: Downscale,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-4,
            epochs: 30,
            batch_size: 32,
            lr_schedule: LrSchedule::StepDecay,
            decay_milestones: vec![0.6, 0.85],
            decay_factor: 0.1,
            momentum: 0.9,
            loss: LossConfig::default(),
            mask_downscale: Downscale::Max,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::invalid("initial_lr must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self
            .decay_milestones
            .iter()
            .any(|m| !(*m > 0.0 && *m < 1.0))
            || self.decay_milestones.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid(
                "decay milestones must be strictly increasing within (0, 1)",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.loss.mse_weight.is_nan() || self.loss.mse_weight < 0.0 {
            return Err(Error::invalid("mse_weight must be nonnegative"));
        }
        Ok(())
    }
}

/// Learning rate in effect during `epoch` (0-based).
pub fn lr_at(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} outside 0..{}",
            config.epochs
        )));
    }
    Ok(match config.lr_schedule {
        LrSchedule::Constant => config.initial_lr,
        LrSchedule::StepDecay => {
            let passed = config
                .decay_milestones
                .iter()
                .filter(|m| epoch >= (*m * config.epochs as f64).round() as usize)
                .count();
            config.initial_lr * config.decay_factor.powi(passed as i32)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub train_accuracy: f64,
    pub val_hmean: Option<f64>,
    pub wall_time: f64,
}

impl TrainLogRecord {
    /// Same record with the wall-clock field cleared, for reproducibility
    /// comparisons.
    pub fn without_timing(&self) -> TrainLogRecord {
        TrainLogRecord {
            wall_time: 0.0,
            ..self.clone()
        }
    }
}

/// Training samples with their mask pyramids computed once up front.
pub struct TrainingSet<'a> {
    samples: &'a [AnnotatedSample],
    pyramids: Vec<MaskPyramid>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(samples: &'a [AnnotatedSample], downscale: Downscale) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let pyramids = samples
            .iter()
            .map(|s| {
                if s.boxes.is_empty() {
                    return Err(Error::invalid(format!(
                        "training sample {} has no boxes to build a mask from",
                        s.id
                    )));
                }
                pyramid_from_boxes(&s.boxes, s.image.height(), s.image.width(), downscale)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSet { samples, pyramids })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub model: Model<f32>,
    /// Parameters at the best validation Hmean (the final model when no
    /// validation set is given).
    pub best_model: Model<f32>,
    pub best_epoch: usize,
    pub log: Vec<TrainLogRecord>,
}

/// Momentum SGD over the total loss. The validation pass sees images only.
pub fn train(
    mut model: Model<f32>,
    data: &TrainingSet<'_>,
    val: Option<&[AnnotatedSample]>,
    config: &TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity: Vec<Vec<f32>> = Vec::new();
    model.visit_params(&mut |_, p| velocity.push(vec![0.0; p.len()]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model<f32>)> = None;
    let mut step = 0usize;
    let start = Instant::now();

    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch)?;
        order.shuffle(&mut rng);
        let mut parts = Vec::new();
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let x = batch_from_images::<f32>(batch.iter().map(|&i| &data.samples[i].image))?;
            let labels: Vec<RotationClass> = batch.iter().map(|&i| data.samples[i].cls).collect();
            let masks = if config.loss.stages.is_empty() {
                None
            } else {
                let pyr: Vec<&MaskPyramid> = batch.iter().map(|&i| &data.pyramids[i]).collect();
                Some(stack_masks::<f32>(&pyr)?)
            };
            model.zero_grad();
            let (out, tape) = model.forward_train(&x, &mut rng)?;
            let (breakdown, grads) =
                total_loss_with_grad(&out, &labels, masks.as_ref(), &config.loss)?;
            if !breakdown.is_finite() {
                return Err(Error::TrainingDiverged {
                    step,
                    loss: breakdown.total,
                });
            }
            correct += labels
                .iter()
                .enumerate()
                .filter(|(i, y)| predicted_class(out.probs_row(*i)) == **y)
                .count();
            model.backward(&tape, &grads.dlogits, &grads.dfeatures);
            let (lr32, mom) = (lr as f32, config.momentum as f32);
            let mut k = 0;
            model.visit_params(&mut |_, p| {
                for ((w, g), v) in p.value.iter_mut().zip(&p.grad).zip(velocity[k].iter_mut()) {
                    *v = mom * *v + *g;
                    *w -= lr32 * *v;
                }
                k += 1;
            });
            parts.push((breakdown, batch.len()));
            step += 1;
        }
        let train = LossBreakdown::weighted_mean(&parts).expect("at least one batch");
        let val_hmean = match val {
            Some(v) if !v.is_empty() => Some(evaluate(&model, v, config.batch_size)?.macro_hmean),
            _ => None,
        };
        let improved = match (&best, val_hmean) {
            (None, _) => true,
            (Some((b, _, _)), Some(h)) => h > *b,
            (Some(_), None) => true,
        };
        if improved {
            best = Some((val_hmean.unwrap_or(f64::NEG_INFINITY), epoch, model.clone()));
            if let Some(path) = checkpoint_path {
                checkpoint::save(path, &model, config.seed)?;
            }
        }
        log.push(TrainLogRecord {
            epoch,
            lr,
            train,
            train_accuracy: correct as f64 / data.len() as f64,
            val_hmean,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_model,
        best_epoch,
        log,
    })
}

fn predicted_class(row: &[f32]) -> RotationClass {
    // ties go to horizontal
    if row[1] > row[0] {
        RotationClass::Vertical
    } else {
        RotationClass::Horizontal
    }
}

/// Classifies images with the model in eval mode.
pub fn predict<'a>(
    model: &Model<f32>,
    images: impl IntoIterator<Item = &'a crate::domain::ImageTensor>,
    batch_size: usize,
) -> Result<Vec<RotationClass>> {
    let images: Vec<_> = images.into_iter().collect();
    let mut preds = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let out = model.forward_eval(&batch_from_images::<f32>(chunk.iter().copied())?)?;
        preds.extend((0..chunk.len()).map(|i| predicted_class(out.probs_row(i))));
    }
    Ok(preds)
}

/// Scores the model on `samples`. Only images and labels are read; boxes
/// are ignored.
pub fn evaluate(
    model: &Model<f32>,
    samples: &[AnnotatedSample],
    batch_size: usize,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty sample set"));
    }
    let preds = predict(model, samples.iter().map(|s| &s.image), batch_size)?;
    let truths: Vec<RotationClass> = samples.iter().map(|s| s.cls).collect();
    metrics::report(&preds, &truths)
}

pub fn write_log_jsonl(path: &Path, log: &[TrainLogRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = String::new();
    for r in log {
        text.push_str(&serde_json::to_string(r).expect("log record serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_examples() {
        let cfg = TrainConfig {
            epochs: 100,
            ..Default::default()
        };
        assert_eq!(lr_at(&cfg, 0).unwrap(), 1e-4);
        assert_eq!(lr_at(&cfg, 59).unwrap(), 1e-4);
        assert!((lr_at(&cfg, 60).unwrap() - 1e-5).abs() < 1e-20);
        assert!((lr_at(&cfg, 70).unwrap() - 1e-5).abs() < 1e-20);
        assert!((lr_at(&cfg, 85).unwrap() - 1e-6).abs() < 1e-20);
        assert!(lr_at(&cfg, 100).is_err());
        let constant = TrainConfig {
            lr_schedule: LrSchedule::Constant,
            ..cfg
        };
        assert!((0..100).all(|e| lr_at(&constant, e).unwrap() == 1e-4));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig {
                initial_lr: 0.0,
                ..ok.clone()
            },
            TrainConfig {
                epochs: 0,
                ..ok.clone()
            },
            TrainConfig {
                batch_size: 0,
                ..ok.clone()
            },
            TrainConfig {
                decay_milestones: vec![0.8, 0.6],
                ..ok.clone()
            },
            TrainConfig {
                decay_milestones: vec![1.0],
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn ties_predict_horizontal() {
        assert_eq!(predicted_class(&[0.5, 0.5]), RotationClass::Horizontal);
        assert_eq!(predicted_class(&[0.4, 0.6]), RotationClass::Vertical);
    }
}
