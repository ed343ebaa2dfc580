#![allow(dead_code)]

use mbsr::backbone::{batch_from_images, BackboneConfig, Model};
use mbsr::domain::{BoundingBox, ImageTensor, RotationClass};
use mbsr::losses::{stack_masks, StageMasks};
use mbsr::mask::{pyramid_from_boxes, Downscale, MaskPyramid};
use mbsr::nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Channels (4, 8, 12, 16), one block per stage.
pub fn tiny_config() -> BackboneConfig {
    BackboneConfig {
        stage_channels: [4, 8, 12, 16],
        blocks_per_stage: [1, 1, 1, 1],
        dropout_prob: 0.1,
        num_classes: 2,
    }
}

pub fn random_box(rng: &mut impl Rng, h: usize, w: usize) -> BoundingBox {
    let x0 = rng.random_range(0..w as u32 - 1);
    let y0 = rng.random_range(0..h as u32 - 1);
    let x1 = rng.random_range(x0 + 1..=w as u32);
    let y1 = rng.random_range(y0 + 1..=h as u32);
    BoundingBox { x0, y0, x1, y1 }
}

pub struct Batch {
    pub input: Tensor<f64>,
    pub labels: Vec<RotationClass>,
    pub masks: StageMasks<f64>,
}

/// Random images in [0, 1], random labels and random box masks.
pub fn random_batch(n: usize, h: usize, w: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<ImageTensor> = (0..n)
        .map(|_| {
            let data = (0..h * w * 3).map(|_| rng.random::<f32>()).collect();
            ImageTensor::new(h, w, data).unwrap()
        })
        .collect();
    let labels = (0..n)
        .map(|_| RotationClass::from_index(rng.random_range(0..2)).unwrap())
        .collect();
    let pyramids: Vec<MaskPyramid> = (0..n)
        .map(|_| {
            let boxes: Vec<BoundingBox> = (0..rng.random_range(1..=2))
                .map(|_| random_box(&mut rng, h, w))
                .collect();
            pyramid_from_boxes(&boxes, h, w, Downscale::Max).unwrap()
        })
        .collect();
    let refs: Vec<&MaskPyramid> = pyramids.iter().collect();
    Batch {
        input: batch_from_images::<f32>(images.iter()).unwrap().cast(),
        labels,
        masks: stack_masks(&refs).unwrap(),
    }
}

pub fn tiny_model_f64(seed: u64) -> Model<f64> {
    Model::<f32>::init(&tiny_config(), seed).unwrap().cast()
}
