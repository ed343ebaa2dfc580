//! Classification loss, per-stage mask regression and their weighted sum.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{StageFeatures, NUM_CLASSES};
use crate::domain::RotationClass;
use crate::error::{Error, Result};
use crate::mask::MaskPyramid;
use crate::nn::{Float, Tensor};

/// Probabilities are floored here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// A subset of the stages {1, 2, 3, 4}, stored as a bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct StageSelection(u8);

impl StageSelection {
    pub const EMPTY: StageSelection = StageSelection(0);
    pub const ALL: StageSelection = StageSelection(0b1111);

    pub fn new(stages: &[usize]) -> Result<Self> {
        let mut bits = 0u8;
        for &s in stages {
            if !(1..=4).contains(&s) {
                return Err(Error::invalid(format!("stage {s} outside 1..=4")));
            }
            if bits & (1 << (s - 1)) != 0 {
                return Err(Error::invalid(format!("stage {s} listed twice")));
            }
            bits |= 1 << (s - 1);
        }
        Ok(StageSelection(bits))
    }

    pub fn contains(self, stage: usize) -> bool {
        (1..=4).contains(&stage) && self.0 & (1 << (stage - 1)) != 0
    }

    pub fn stages(self) -> impl Iterator<Item = usize> {
        (1..=4).filter(move |s| self.contains(*s))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn with(self, stage: usize) -> Self {
        assert!((1..=4).contains(&stage));
        StageSelection(self.0 | (1 << (stage - 1)))
    }

    /// Row label in ablation tables, e.g. `Stage 2,3`.
    pub fn label(self) -> String {
        if self.is_empty() {
            "None".to_string()
        } else {
            format!("Stage {self}")
        }
    }
}

impl fmt::Display for StageSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.stages().map(|s| s.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for StageSelection {
    type Err = Error;

    /// Parses `"2,3"`; the empty string (or `none`) is the empty selection.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(StageSelection::EMPTY);
        }
        let stages = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad stage {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        StageSelection::new(&stages)
    }
}

impl Serialize for StageSelection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.stages())
    }
}

impl<'de> Deserialize<'de> for StageSelection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        StageSelection::new(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationForm {
    /// `-(1/N) Σ log p_i(y_i)`.
    #[default]
    CrossEntropy,
    /// `1 - (1/N) Σ p_i(y_i)`: mean correct-class probability, shifted so
    /// the minimum is zero.
    LiteralProbability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MseReduction {
    /// Mean over all `N · C · H · W` elements.
    #[default]
    Mean,
    /// Sum over `C · H · W`, averaged over the batch.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    /// Every channel is pulled toward the mask.
    #[default]
    Broadcast,
    /// The channel mean is pulled toward the mask.
    Mean,
}

macro_rules! parse_enum {
    ($t:ty, $what:literal, { $($s:literal => $v:expr),+ $(,)? }) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(Error::invalid(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }
    };
}

parse_enum!(ClassificationForm, "loss form", {
    "cross_entropy" => ClassificationForm::CrossEntropy,
    "literal_probability" => ClassificationForm::LiteralProbability,
});
parse_enum!(MseReduction, "mse reduction", {
    "mean" => MseReduction::Mean,
    "sum" => MseReduction::Sum,
});
parse_enum!(ChannelMode, "channel mode", {
    "broadcast" => ChannelMode::Broadcast,
    "mean" => ChannelMode::Mean,
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub form: ClassificationForm,
    pub mse_reduction: MseReduction,
    pub channel_mode: ChannelMode,
    pub stages: StageSelection,
    pub mse_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            form: ClassificationForm::CrossEntropy,
            mse_reduction: MseReduction::Mean,
            channel_mode: ChannelMode::Broadcast,
            stages: StageSelection::new(&[2, 3]).expect("valid stages"),
            mse_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    /// Unweighted regularizer value for each selected stage.
    pub l_mse_per_stage: BTreeMap<usize, f64>,
    pub mse_weight: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn mse_sum(&self) -> f64 {
        self.l_mse_per_stage.values().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.l_cls.is_finite()
            && self.l_mse_per_stage.values().all(|v| v.is_finite())
    }

    /// Sample-weighted mean of several breakdowns.
    pub fn weighted_mean(parts: &[(LossBreakdown, usize)]) -> Option<LossBreakdown> {
        let total_n: usize = parts.iter().map(|(_, n)| n).sum();
        let first = &parts.first()?.0;
        let w = |n: usize| n as f64 / total_n as f64;
        let mut per_stage: BTreeMap<usize, f64> =
            first.l_mse_per_stage.keys().map(|k| (*k, 0.0)).collect();
        let (mut l_cls, mut total) = (0.0, 0.0);
        for (b, n) in parts {
            l_cls += w(*n) * b.l_cls;
            total += w(*n) * b.total;
            for (k, v) in &b.l_mse_per_stage {
                *per_stage.entry(*k).or_insert(0.0) += w(*n) * v;
            }
        }
        Some(LossBreakdown {
            l_cls,
            l_mse_per_stage: per_stage,
            mse_weight: first.mse_weight,
            total,
        })
    }
}

fn check_cls_inputs<T: Float>(probs: &[T], labels: &[RotationClass]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::invalid(
            "classification loss needs at least one sample",
        ));
    }
    if probs.len() != labels.len() * NUM_CLASSES {
        return Err(Error::invalid(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Mean classification loss over `N × 2` probability rows.
pub fn classification_loss<T: Float>(
    probs: &[T],
    labels: &[RotationClass],
    form: ClassificationForm,
) -> Result<f64> {
    check_cls_inputs(probs, labels)?;
    let n = labels.len() as f64;
    let correct = labels
        .iter()
        .enumerate()
        .map(|(i, y)| probs[i * NUM_CLASSES + y.index()].as_f64());
    Ok(match form {
        ClassificationForm::CrossEntropy => {
            correct.map(|p| -p.max(PROB_FLOOR).ln()).sum::<f64>() / n
        }
        ClassificationForm::LiteralProbability => (1.0 - correct.sum::<f64>() / n).max(0.0),
    })
}

/// Gradient of [`classification_loss`] with respect to the logits that
/// produced `probs` through a softmax.
pub fn classification_logit_grad<T: Float>(
    probs: &[T],
    labels: &[RotationClass],
    form: ClassificationForm,
) -> Result<Vec<T>> {
    check_cls_inputs(probs, labels)?;
    let n = labels.len() as f64;
    let mut grad = vec![T::zero(); probs.len()];
    for (i, y) in labels.iter().enumerate() {
        let row = &probs[i * NUM_CLASSES..(i + 1) * NUM_CLASSES];
        let py = row[y.index()].as_f64();
        for j in 0..NUM_CLASSES {
            let pj = row[j].as_f64();
            let onehot = if j == y.index() { 1.0 } else { 0.0 };
            let g = match form {
                ClassificationForm::CrossEntropy if py < PROB_FLOOR => 0.0,
                ClassificationForm::CrossEntropy => pj - onehot,
                ClassificationForm::LiteralProbability => -py * (onehot - pj),
            };
            grad[i * NUM_CLASSES + j] = T::lit(g / n);
        }
    }
    Ok(grad)
}

fn check_mse_inputs<T: Float>(features: &Tensor<T>, mask: &Tensor<T>) -> Result<()> {
    let [n, _, h, w] = features.shape();
    let [mn, mc, mh, mw] = mask.shape();
    if (mn, mc, mh, mw) != (n, 1, h, w) {
        return Err(Error::invalid(format!(
            "mask shape {:?} does not match features {:?} (expected [{n}, 1, {h}, {w}])",
            mask.shape(),
            features.shape()
        )));
    }
    Ok(())
}

/// Squared distance between one stage's features (`N × C × H × W`) and its
/// mask level (`N × 1 × H × W`).
pub fn stage_mse_loss<T: Float>(
    features: &Tensor<T>,
    mask: &Tensor<T>,
    reduction: MseReduction,
    channel_mode: ChannelMode,
) -> Result<f64> {
    check_mse_inputs(features, mask)?;
    let [n, c, h, w] = features.shape();
    let hw = h * w;
    let mut sum = 0.0f64;
    for i in 0..n {
        let m = &mask.data()[i * hw..(i + 1) * hw];
        let f = features.sample(i);
        match channel_mode {
            ChannelMode::Broadcast => {
                for ch in 0..c {
                    for (fv, mv) in f[ch * hw..(ch + 1) * hw].iter().zip(m) {
                        let d = fv.as_f64() - mv.as_f64();
                        sum += d * d;
                    }
                }
            }
            ChannelMode::Mean => {
                for (p, mv) in m.iter().enumerate() {
                    let mean = (0..c).map(|ch| f[ch * hw + p].as_f64()).sum::<f64>() / c as f64;
                    let d = mean - mv.as_f64();
                    sum += d * d;
                }
            }
        }
    }
    let per_elem = match channel_mode {
        ChannelMode::Broadcast => c * hw,
        ChannelMode::Mean => hw,
    };
    Ok(match reduction {
        MseReduction::Mean => sum / (n * per_elem) as f64,
        MseReduction::Sum => sum / n as f64,
    })
}

/// Gradient of [`stage_mse_loss`] with respect to the features. The mask is
/// data, so no gradient is produced for it.
pub fn stage_mse_grad<T: Float>(
    features: &Tensor<T>,
    mask: &Tensor<T>,
    reduction: MseReduction,
    channel_mode: ChannelMode,
) -> Result<Tensor<T>> {
    check_mse_inputs(features, mask)?;
    let [n, c, h, w] = features.shape();
    let hw = h * w;
    let per_elem = match channel_mode {
        ChannelMode::Broadcast => c * hw,
        ChannelMode::Mean => hw,
    };
    let scale = match reduction {
        MseReduction::Mean => 2.0 / (n * per_elem) as f64,
        MseReduction::Sum => 2.0 / n as f64,
    };
    let mut grad = Tensor::zeros(features.shape());
    let len = features.sample_len();
    for i in 0..n {
        let m = &mask.data()[i * hw..(i + 1) * hw];
        let f = features.sample(i);
        let g = &mut grad.data_mut()[i * len..(i + 1) * len];
        match channel_mode {
            ChannelMode::Broadcast => {
                for ch in 0..c {
                    for p in 0..hw {
                        let d = f[ch * hw + p].as_f64() - m[p].as_f64();
                        g[ch * hw + p] = T::lit(scale * d);
                    }
                }
            }
            ChannelMode::Mean => {
                for p in 0..hw {
                    let mean = (0..c).map(|ch| f[ch * hw + p].as_f64()).sum::<f64>() / c as f64;
                    let d = T::lit(scale * (mean - m[p].as_f64()) / c as f64);
                    for ch in 0..c {
                        g[ch * hw + p] = d;
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Per-stage mask batches, `N × 1 × H_i × W_i`.
pub type StageMasks<T> = [Tensor<T>; 4];

pub fn stack_masks<T: Float>(pyramids: &[&MaskPyramid]) -> Result<StageMasks<T>> {
    let first = pyramids
        .first()
        .ok_or_else(|| Error::invalid("cannot stack zero mask pyramids"))?;
    let build = |level: usize| -> Result<Tensor<T>> {
        let (h, w) = first.levels[level].shape();
        let mut data = Vec::with_capacity(pyramids.len() * h * w);
        for p in pyramids {
            let l = &p.levels[level];
            if l.shape() != (h, w) {
                return Err(Error::invalid("mask pyramids in a batch differ in size"));
            }
            data.extend(l.data().iter().map(|v| T::lit(*v as f64)));
        }
        Ok(Tensor::from_vec([pyramids.len(), 1, h, w], data))
    };
    Ok([build(0)?, build(1)?, build(2)?, build(3)?])
}

/// Loss gradients fed to [`crate::backbone::Model::backward`].
#[derive(Debug, Clone)]
pub struct LossGrads<T> {
    pub dlogits: Vec<T>,
    pub dfeatures: [Option<Tensor<T>>; 4],
}

/// Evaluates `l_cls + mse_weight · Σ_{i ∈ stages} l_mse_i`.
pub fn total_loss<T: Float>(
    out: &StageFeatures<T>,
    labels: &[RotationClass],
    masks: Option<&StageMasks<T>>,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let l_cls = classification_loss(&out.probs, labels, cfg.form)?;
    let mut per_stage = BTreeMap::new();
    if !cfg.stages.is_empty() {
        let masks = masks
            .ok_or_else(|| Error::invalid("stage regularization selected but no masks supplied"))?;
        for s in cfg.stages.stages() {
            let v = stage_mse_loss(
                out.stage(s),
                &masks[s - 1],
                cfg.mse_reduction,
                cfg.channel_mode,
            )?;
            per_stage.insert(s, v);
        }
    }
    let mse: f64 = per_stage.values().sum();
    Ok(LossBreakdown {
        l_cls,
        l_mse_per_stage: per_stage,
        mse_weight: cfg.mse_weight,
        total: l_cls + cfg.mse_weight * mse,
    })
}

/// [`total_loss`] plus its gradients with respect to logits and features.
pub fn total_loss_with_grad<T: Float>(
    out: &StageFeatures<T>,
    labels: &[RotationClass],
    masks: Option<&StageMasks<T>>,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, LossGrads<T>)> {
    let breakdown = total_loss(out, labels, masks, cfg)?;
    let dlogits = classification_logit_grad(&out.probs, labels, cfg.form)?;
    let mut dfeatures: [Option<Tensor<T>>; 4] = Default::default();
    if cfg.mse_weight != 0.0 {
        if let Some(masks) = masks {
            let w = T::lit(cfg.mse_weight);
            for s in cfg.stages.stages() {
                let mut g = stage_mse_grad(
                    out.stage(s),
                    &masks[s - 1],
                    cfg.mse_reduction,
                    cfg.channel_mode,
                )?;
                g.data_mut().iter_mut().for_each(|v| *v *= w);
                dfeatures[s - 1] = Some(g);
            }
        }
    }
    Ok((breakdown, LossGrads { dlogits, dfeatures }))
}
