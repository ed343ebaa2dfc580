//! Four-stage residual classifier exposing every stage's output.
//!
//! Layout: stem (3×3 stride-2 conv, BN, ReLU, 2×2 max pool) followed by four
//! stages of basic residual blocks at cumulative strides 4, 8, 16 and 32,
//! then global average pooling, dropout, a linear head and softmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::ImageTensor;
use crate::error::{Error, Result};
use crate::nn::{
    gap_backward, gap_forward, maxpool2_backward, maxpool2_forward, relu_backward, relu_inplace,
    softmax_rows, BatchNorm2d, BnCache, Conv2d, Dropout, Float, Linear, Param, Tensor,
};

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stage_channels: [usize; 4],
    pub blocks_per_stage: [usize; 4],
    pub dropout_prob: f64,
    pub num_classes: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stage_channels: [16, 32, 64, 128],
            blocks_per_stage: [2, 2, 2, 2],
            dropout_prob: 0.1,
            num_classes: NUM_CLASSES,
        }
    }
}

impl BackboneConfig {
    /// Full ResNet-18 widths.
    pub fn resnet18() -> Self {
        BackboneConfig {
            stage_channels: [64, 128, 256, 512],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.contains(&0) {
            return Err(Error::invalid("stage channel counts must be at least 1"));
        }
        if self.blocks_per_stage.contains(&0) {
            return Err(Error::invalid("each stage needs at least one block"));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::invalid(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_prob
            )));
        }
        if self.num_classes != NUM_CLASSES {
            return Err(Error::invalid(format!(
                "num_classes must be {NUM_CLASSES}, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-stage feature maps plus head outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFeatures<T> {
    /// Stage outputs at strides 4, 8, 16, 32.
    pub features: [Tensor<T>; 4],
    /// `N × 2`, row-major.
    pub logits: Vec<T>,
    /// `N × 2` softmax rows.
    pub probs: Vec<T>,
}

impl<T: Float> StageFeatures<T> {
    pub fn batch(&self) -> usize {
        self.logits.len() / NUM_CLASSES
    }

    pub fn probs_row(&self, i: usize) -> &[T] {
        &self.probs[i * NUM_CLASSES..(i + 1) * NUM_CLASSES]
    }

    /// 1-based stage accessor.
    pub fn stage(&self, stage: usize) -> &Tensor<T> {
        &self.features[stage - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BasicBlock<T> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    shortcut: Option<(Conv2d<T>, BatchNorm2d<T>)>,
}

struct BlockTape<T> {
    input: Tensor<T>,
    bn1: BnCache<T>,
    hidden: Tensor<T>,
    bn2: BnCache<T>,
    shortcut_bn: Option<BnCache<T>>,
    output: Tensor<T>,
}

impl<T: Float> BasicBlock<T> {
    fn new(in_c: usize, out_c: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let shortcut = (stride != 1 || in_c != out_c).then(|| {
            (
                Conv2d::new(in_c, out_c, 1, stride, 0, rng),
                BatchNorm2d::new(out_c),
            )
        });
        BasicBlock {
            conv1: Conv2d::new(in_c, out_c, 3, stride, 1, rng),
            bn1: BatchNorm2d::new(out_c),
            conv2: Conv2d::new(out_c, out_c, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(out_c),
            shortcut,
        }
    }

    fn cast<U: Float>(&self) -> BasicBlock<U> {
        BasicBlock {
            conv1: self.conv1.cast(),
            bn1: self.bn1.cast(),
            conv2: self.conv2.cast(),
            bn2: self.bn2.cast(),
            shortcut: self.shortcut.as_ref().map(|(c, b)| (c.cast(), b.cast())),
        }
    }

    fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = self.bn1.forward_eval(&self.conv1.forward(x));
        relu_inplace(&mut h);
        let mut out = self.bn2.forward_eval(&self.conv2.forward(&h));
        match &self.shortcut {
            Some((conv, bn)) => out.add_assign(&bn.forward_eval(&conv.forward(x))),
            None => out.add_assign(x),
        }
        relu_inplace(&mut out);
        out
    }

    fn forward_train(&mut self, x: Tensor<T>) -> BlockTape<T> {
        let (mut hidden, bn1) = self.bn1.forward_train(&self.conv1.forward(&x));
        relu_inplace(&mut hidden);
        let (mut out, bn2) = self.bn2.forward_train(&self.conv2.forward(&hidden));
        let shortcut_bn = match &mut self.shortcut {
            Some((conv, bn)) => {
                let (s, cache) = bn.forward_train(&conv.forward(&x));
                out.add_assign(&s);
                Some(cache)
            }
            None => {
                out.add_assign(&x);
                None
            }
        };
        relu_inplace(&mut out);
        BlockTape {
            input: x,
            bn1,
            hidden,
            bn2,
            shortcut_bn,
            output: out,
        }
    }

    fn backward(&mut self, tape: &BlockTape<T>, mut dout: Tensor<T>) -> Tensor<T> {
        relu_backward(&tape.output, &mut dout);
        let da2 = self.bn2.backward(&tape.bn2, &dout);
        let mut dh = self
            .conv2
            .backward(&tape.hidden, &da2, true)
            .expect("input grad requested");
        relu_backward(&tape.hidden, &mut dh);
        let da1 = self.bn1.backward(&tape.bn1, &dh);
        let mut dx = self
            .conv1
            .backward(&tape.input, &da1, true)
            .expect("input grad requested");
        match (&mut self.shortcut, &tape.shortcut_bn) {
            (Some((conv, bn)), Some(cache)) => {
                let ds = bn.backward(cache, &dout);
                dx.add_assign(&conv.backward(&tape.input, &ds, true).expect("input grad"));
            }
            _ => dx.add_assign(&dout),
        }
        dx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&format!("{prefix}.conv1.weight"), &mut self.conv1.weight);
        f(&format!("{prefix}.bn1.gamma"), &mut self.bn1.gamma);
        f(&format!("{prefix}.bn1.beta"), &mut self.bn1.beta);
        f(&format!("{prefix}.conv2.weight"), &mut self.conv2.weight);
        f(&format!("{prefix}.bn2.gamma"), &mut self.bn2.gamma);
        f(&format!("{prefix}.bn2.beta"), &mut self.bn2.beta);
        if let Some((conv, bn)) = &mut self.shortcut {
            f(&format!("{prefix}.shortcut.conv.weight"), &mut conv.weight);
            f(&format!("{prefix}.shortcut.bn.gamma"), &mut bn.gamma);
            f(&format!("{prefix}.shortcut.bn.beta"), &mut bn.beta);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        for (name, bn) in [("bn1", &mut self.bn1), ("bn2", &mut self.bn2)] {
            f(
                &format!("{prefix}.{name}.running_mean"),
                &mut bn.running_mean,
            );
            f(&format!("{prefix}.{name}.running_var"), &mut bn.running_var);
        }
        if let Some((_, bn)) = &mut self.shortcut {
            f(
                &format!("{prefix}.shortcut.bn.running_mean"),
                &mut bn.running_mean,
            );
            f(
                &format!("{prefix}.shortcut.bn.running_var"),
                &mut bn.running_var,
            );
        }
    }
}

/// Everything the backward pass needs from a training forward pass.
pub struct Tape<T> {
    input: Tensor<T>,
    stem_bn: BnCache<T>,
    stem_act: Tensor<T>,
    pool_idx: Vec<u32>,
    stages: Vec<Vec<BlockTape<T>>>,
    pooled_shape: [usize; 4],
    dropout_mask: Vec<T>,
    head_input: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: BackboneConfig,
    stem_conv: Conv2d<T>,
    stem_bn: BatchNorm2d<T>,
    stages: Vec<Vec<BasicBlock<T>>>,
    head: Linear<T>,
}

impl<T: Float> Model<T> {
    /// Builds a freshly initialized model; identical seeds give identical
    /// parameters.
    pub fn init(config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c0 = config.stage_channels[0];
        let stem_conv = Conv2d::new(3, c0, 3, 2, 1, &mut rng);
        let mut in_c = c0;
        let mut stages = Vec::with_capacity(4);
        for (s, (&out_c, &blocks)) in config
            .stage_channels
            .iter()
            .zip(&config.blocks_per_stage)
            .enumerate()
        {
            let stride = if s == 0 { 1 } else { 2 };
            let mut stage = Vec::with_capacity(blocks);
            for b in 0..blocks {
                let block_stride = if b == 0 { stride } else { 1 };
                stage.push(BasicBlock::new(in_c, out_c, block_stride, &mut rng));
                in_c = out_c;
            }
            stages.push(stage);
        }
        let head = Linear::new(in_c, config.num_classes, &mut rng);
        Ok(Model {
            config: config.clone(),
            stem_conv,
            stem_bn: BatchNorm2d::new(c0),
            stages,
            head,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            stem_conv: self.stem_conv.cast(),
            stem_bn: self.stem_bn.cast(),
            stages: self
                .stages
                .iter()
                .map(|s| s.iter().map(BasicBlock::cast).collect())
                .collect(),
            head: self.head.cast(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [n, c, h, w] = x.shape();
        if n == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if c != 3 {
            return Err(Error::invalid(format!(
                "expected 3 input channels, got {c}"
            )));
        }
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::invalid(format!(
                "input size {h}x{w} must be a nonzero multiple of 32"
            )));
        }
        Ok(())
    }

    /// Inference pass: running BN statistics, no dropout. Deterministic.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<StageFeatures<T>> {
        self.check_input(x)?;
        let mut h = self.stem_bn.forward_eval(&self.stem_conv.forward(x));
        relu_inplace(&mut h);
        let (mut h, _) = maxpool2_forward(&h);
        let mut features = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                h = block.forward_eval(&h);
            }
            features.push(h.clone());
        }
        let n = x.n();
        let pooled = gap_forward(&h);
        let logits = self.head.forward(&pooled, n);
        let probs = softmax_rows(&logits, NUM_CLASSES);
        Ok(StageFeatures {
            features: features.try_into().expect("four stages"),
            logits,
            probs,
        })
    }

    /// Training pass: batch statistics (updating running stats) and dropout
    /// drawn from `rng`.
    pub fn forward_train(
        &mut self,
        x: &Tensor<T>,
        rng: &mut impl Rng,
    ) -> Result<(StageFeatures<T>, Tape<T>)> {
        self.check_input(x)?;
        let (mut act, stem_bn) = self.stem_bn.forward_train(&self.stem_conv.forward(x));
        relu_inplace(&mut act);
        let (mut h, pool_idx) = maxpool2_forward(&act);
        let mut stage_tapes = Vec::with_capacity(4);
        let mut features = Vec::with_capacity(4);
        for stage in &mut self.stages {
            let mut tapes = Vec::with_capacity(stage.len());
            for block in stage.iter_mut() {
                let tape = block.forward_train(h);
                h = tape.output.clone();
                tapes.push(tape);
            }
            features.push(h.clone());
            stage_tapes.push(tapes);
        }
        let n = x.n();
        let pooled = gap_forward(&h);
        let dropout_mask = Dropout {
            p: self.config.dropout_prob,
        }
        .sample_mask::<T>(pooled.len(), rng);
        let head_input: Vec<T> = pooled
            .iter()
            .zip(&dropout_mask)
            .map(|(v, m)| *v * *m)
            .collect();
        let logits = self.head.forward(&head_input, n);
        let probs = softmax_rows(&logits, NUM_CLASSES);
        let tape = Tape {
            input: x.clone(),
            stem_bn,
            stem_act: act,
            pool_idx,
            stages: stage_tapes,
            pooled_shape: h.shape(),
            dropout_mask,
            head_input,
        };
        Ok((
            StageFeatures {
                features: features.try_into().expect("four stages"),
                logits,
                probs,
            },
            tape,
        ))
    }

    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<StageFeatures<T>> {
        match mode {
            Mode::Train => self.forward_train(x, rng).map(|(f, _)| f),
            Mode::Eval => self.forward_eval(x),
        }
    }

    /// Accumulates parameter gradients given loss gradients w.r.t. the
    /// logits and (optionally) each stage's features.
    pub fn backward(&mut self, tape: &Tape<T>, dlogits: &[T], dfeatures: &[Option<Tensor<T>>; 4]) {
        let n = tape.input.n();
        let dhead = self.head.backward(&tape.head_input, dlogits, n);
        let dpooled: Vec<T> = dhead
            .iter()
            .zip(&tape.dropout_mask)
            .map(|(g, m)| *g * *m)
            .collect();
        let mut grad = gap_backward(tape.pooled_shape, &dpooled);
        for s in (0..4).rev() {
            if let Some(df) = &dfeatures[s] {
                grad.add_assign(df);
            }
            for (block, bt) in self.stages[s].iter_mut().zip(&tape.stages[s]).rev() {
                grad = block.backward(bt, grad);
            }
        }
        let mut dact = maxpool2_backward(tape.stem_act.shape(), &tape.pool_idx, &grad);
        relu_backward(&tape.stem_act, &mut dact);
        let dconv = self.stem_bn.backward(&tape.stem_bn, &dact);
        self.stem_conv.backward(&tape.input, &dconv, false);
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("stem.conv.weight", &mut self.stem_conv.weight);
        f("stem.bn.gamma", &mut self.stem_bn.gamma);
        f("stem.bn.beta", &mut self.stem_bn.beta);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit_params(&format!("stage{}.block{}", s + 1, b), f);
            }
        }
        f("head.weight", &mut self.head.weight);
        f("head.bias", &mut self.head.bias);
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        f("stem.bn.running_mean", &mut self.stem_bn.running_mean);
        f("stem.bn.running_var", &mut self.stem_bn.running_var);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit_buffers(&format!("stage{}.block{}", s + 1, b), f);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    pub fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }
}

/// Packs HWC images into an `N × 3 × H × W` batch.
pub fn batch_from_images<'a, T: Float>(
    images: impl IntoIterator<Item = &'a ImageTensor>,
) -> Result<Tensor<T>> {
    let images: Vec<&ImageTensor> = images.into_iter().collect();
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("cannot batch zero images"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in &images {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::invalid("images in a batch must share one size"));
        }
        for c in 0..3 {
            data.extend(
                img.data()
                    .iter()
                    .skip(c)
                    .step_by(3)
                    .map(|v| T::lit(*v as f64)),
            );
        }
    }
    Ok(Tensor::from_vec([images.len(), 3, h, w], data))
}
