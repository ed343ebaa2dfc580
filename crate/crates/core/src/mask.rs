//! Box masks and their per-stage downscaled pyramid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::BoundingBox;
use crate::error::{Error, Result};

/// Cumulative stride of each backbone stage relative to the input.
pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];

/// How a mask is reduced to a coarser grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Downscale {
    /// Block maximum; keeps the mask binary and keeps thin boxes alive.
    #[default]
    Max,
    /// Block average; yields fractional coverage.
    Mean,
}

impl std::str::FromStr for Downscale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Downscale::Max),
            "mean" => Ok(Downscale::Mean),
            other => Err(Error::invalid(format!("unknown mask downscale {other:?}"))),
        }
    }
}

/// A single-channel `h × w` mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Mask {
    pub fn zeros(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::invalid(format!(
                "mask buffer has {} values, expected {h}x{w}",
                data.len()
            )));
        }
        Ok(Mask { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|v| **v == 1.0).count()
    }

    /// 8-bit grayscale rendering (0 → 0, 1 → 255).
    pub fn to_gray8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// Rasterizes the union of `boxes` into an `h × w` binary mask.
pub fn rasterize_mask(boxes: &[BoundingBox], h: usize, w: usize) -> Result<Mask> {
    let mut mask = Mask::zeros(h, w);
    for b in boxes {
        b.validate(w, h)
            .map_err(|e| Error::invalid(e.to_string()))?;
        for y in b.y0 as usize..b.y1 as usize {
            mask.data[y * w + b.x0 as usize..y * w + b.x1 as usize].fill(1.0);
        }
    }
    Ok(mask)
}

/// Reduces each `factor × factor` block to one value.
pub fn downscale_mask(mask: &Mask, factor: usize, mode: Downscale) -> Result<Mask> {
    if !matches!(factor, 2 | 4 | 8 | 16 | 32) {
        return Err(Error::invalid(format!(
            "downscale factor must be one of 2, 4, 8, 16, 32; got {factor}"
        )));
    }
    if !mask.h.is_multiple_of(factor) || !mask.w.is_multiple_of(factor) {
        return Err(Error::invalid(format!(
            "mask {}x{} not divisible by {factor}",
            mask.h, mask.w
        )));
    }
    let (oh, ow) = (mask.h / factor, mask.w / factor);
    let mut out = Vec::with_capacity(oh * ow);
    let area = (factor * factor) as f32;
    for oy in 0..oh {
        for ox in 0..ow {
            let block = (0..factor).flat_map(|dy| {
                let row = (oy * factor + dy) * mask.w + ox * factor;
                mask.data[row..row + factor].iter().copied()
            });
            let v = match mode {
                Downscale::Max => block.fold(0.0f32, f32::max),
                Downscale::Mean => block.sum::<f32>() / area,
            };
            out.push(v);
        }
    }
    Ok(Mask {
        h: oh,
        w: ow,
        data: out,
    })
}

/// Full-resolution mask plus one level per backbone stage.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPyramid {
    pub full: Mask,
    pub levels: [Mask; 4],
}

impl MaskPyramid {
    pub fn strides(&self) -> [usize; 4] {
        STAGE_STRIDES
    }

    /// Level for 1-based stage index.
    pub fn stage(&self, stage: usize) -> &Mask {
        &self.levels[stage - 1]
    }

    /// Writes each level as `<stem>_level{i}.png`.
    pub fn export_png(&self, dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (i, level) in self.levels.iter().enumerate() {
            let path = dir.join(format!("{stem}_level{}.png", i + 1));
            crate::io::save_gray8(&path, level.w, level.h, level.to_gray8())?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn build_pyramid(mask: &Mask, mode: Downscale) -> Result<MaskPyramid> {
    if !mask.h.is_multiple_of(32) || !mask.w.is_multiple_of(32) {
        return Err(Error::invalid(format!(
            "mask {}x{} must have sides divisible by 32",
            mask.h, mask.w
        )));
    }
    let level = |s| downscale_mask(mask, s, mode);
    Ok(MaskPyramid {
        full: mask.clone(),
        levels: [level(4)?, level(8)?, level(16)?, level(32)?],
    })
}

pub fn pyramid_from_boxes(
    boxes: &[BoundingBox],
    h: usize,
    w: usize,
    mode: Downscale,
) -> Result<MaskPyramid> {
    build_pyramid(&rasterize_mask(boxes, h, w)?, mode)
}
