//! Channel-mean feature-map export.

use std::path::{Path, PathBuf};

use crate::backbone::{batch_from_images, Model};
use crate::domain::ImageTensor;
use crate::error::{Error, Result};
use crate::io;

/// A stage's channel-mean map rendered to 8-bit grayscale.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapImage {
    pub stage: usize,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Min-max normalizes to 0..=255; a constant map becomes mid-gray.
pub fn normalize_to_gray8(values: &[f32]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    let range = hi - lo;
    if !(range.is_finite() && range > 0.0) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| (((v - lo) / range) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

fn upsample_nearest(src: &[u8], sw: usize, sh: usize, factor: usize) -> Vec<u8> {
    let (w, h) = (sw * factor, sh * factor);
    let mut out = vec![0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = src[(y / factor) * sw + x / factor];
        }
    }
    out
}

/// Channel-mean maps for the 1-based `stages`, upsampled to image size.
pub fn feature_maps(
    model: &Model<f32>,
    image: &ImageTensor,
    stages: &[usize],
) -> Result<Vec<FeatureMapImage>> {
    if let Some(s) = stages.iter().find(|s| !(1..=4).contains(*s)) {
        return Err(Error::invalid(format!("stage {s} outside 1..=4")));
    }
    let out = model.forward_eval(&batch_from_images::<f32>([image])?)?;
    let mut maps = Vec::with_capacity(stages.len());
    for &stage in stages {
        let f = out.stage(stage);
        let (h, w) = f.spatial();
        let c = f.c();
        let mean: Vec<f32> = (0..h * w)
            .map(|p| (0..c).map(|ch| f.data()[ch * h * w + p]).sum::<f32>() / c as f32)
            .collect();
        let gray = normalize_to_gray8(&mean);
        let factor = image.width() / w;
        maps.push(FeatureMapImage {
            stage,
            width: w * factor,
            height: h * factor,
            pixels: upsample_nearest(&gray, w, h, factor),
        });
    }
    Ok(maps)
}

/// Writes `<stem>_original.png` and one `<stem>_stage{i}.png` per map.
pub fn export_feature_maps(
    model: &Model<f32>,
    image: &ImageTensor,
    stages: &[usize],
    out_dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let maps = feature_maps(model, image, stages)?;
    let mut written = Vec::with_capacity(maps.len() + 1);
    let original = out_dir.join(format!("{stem}_original.png"));
    io::save_image(&original, image)?;
    written.push(original);
    for m in maps {
        let path = out_dir.join(format!("{stem}_stage{}.png", m.stage));
        io::save_gray8(&path, m.width, m.height, m.pixels)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_is_mid_gray() {
        assert_eq!(normalize_to_gray8(&[0.3; 5]), vec![128; 5]);
    }

    #[test]
    fn min_max_spans_full_range() {
        assert_eq!(normalize_to_gray8(&[1.0, 2.0, 3.0]), vec![0, 128, 255]);
    }

    #[test]
    fn upsampling_replicates_pixels() {
        assert_eq!(
            upsample_nearest(&[1, 2], 2, 1, 2),
            vec![1, 1, 2, 2, 1, 1, 2, 2]
        );
    }
}
