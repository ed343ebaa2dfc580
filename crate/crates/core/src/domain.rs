//! Angles, rotation classes, boxes and images.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A rotation in degrees, normalized to `[-180, 180)`.
///
/// Positive angles rotate counter-clockwise as displayed (image y axis
/// pointing down).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RotationAngle(f64);

impl RotationAngle {
    pub fn degrees(self) -> f64 {
        self.0
    }

    pub fn radians(self) -> f64 {
        self.0.to_radians()
    }
}

impl TryFrom<f64> for RotationAngle {
    type Error = Error;

    fn try_from(raw: f64) -> Result<Self> {
        normalize_angle(raw)
    }
}

impl From<RotationAngle> for f64 {
    fn from(a: RotationAngle) -> f64 {
        a.0
    }
}

impl fmt::Display for RotationAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}°", self.0)
    }
}

/// Wraps any finite angle into `[-180, 180)`.
pub fn normalize_angle(raw_degrees: f64) -> Result<RotationAngle> {
    if !raw_degrees.is_finite() {
        return Err(Error::invalid(format!(
            "angle must be finite, got {raw_degrees}"
        )));
    }
    if (-180.0..180.0).contains(&raw_degrees) {
        return Ok(RotationAngle(raw_degrees));
    }
    // the remainder is exact and so is r - 360 for r in [180, 360]
    let r = raw_degrees.rem_euclid(360.0);
    Ok(RotationAngle(if r >= 180.0 { r - 360.0 } else { r }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationClass {
    Horizontal,
    Vertical,
}

impl RotationClass {
    pub const ALL: [RotationClass; 2] = [RotationClass::Horizontal, RotationClass::Vertical];

    pub fn index(self) -> usize {
        match self {
            RotationClass::Horizontal => 0,
            RotationClass::Vertical => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(RotationClass::Horizontal),
            1 => Some(RotationClass::Vertical),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            RotationClass::Horizontal => RotationClass::Vertical,
            RotationClass::Vertical => RotationClass::Horizontal,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RotationClass::Horizontal => "horizontal",
            RotationClass::Vertical => "vertical",
        }
    }
}

impl fmt::Display for RotationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RotationClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "horizontal" => Ok(RotationClass::Horizontal),
            "vertical" => Ok(RotationClass::Vertical),
            other => Err(Error::invalid(format!("unknown rotation class {other:?}"))),
        }
    }
}

/// Horizontal iff the angle lies in `[-180,-135] ∪ [-45,45] ∪ [135,180)`.
/// Band edges belong to the horizontal class.
pub fn angle_to_class(angle: RotationAngle) -> RotationClass {
    let a = angle.degrees().abs();
    if a <= 45.0 || a >= 135.0 {
        RotationClass::Horizontal
    } else {
        RotationClass::Vertical
    }
}

/// Axis-aligned pixel box, half-open: covers `x0..x1` × `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    /// Builds a box and checks it is nonempty and inside a `w × h` image.
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32, w: usize, h: usize) -> Result<Self> {
        let b = BoundingBox { x0, y0, x1, y1 };
        b.validate(w, h)?;
        Ok(b)
    }

    pub fn validate(&self, w: usize, h: usize) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::Validation(format!("empty box {self:?}")));
        }
        if self.x1 as usize > w || self.y1 as usize > h {
            return Err(Error::Validation(format!(
                "box {self:?} outside {w}x{h} image"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0 as usize..self.x1 as usize).contains(&x)
            && (self.y0 as usize..self.y1 as usize).contains(&y)
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0)) as u64;
        let iy = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0)) as u64;
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn to_array(self) -> [u32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// An `h × w × 3` image with values in `[0, 1]`, stored row-major HWC.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Spatial sizes must be multiples of this so every stage stride divides.
    pub const ALIGN: usize = 32;

    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if h == 0 || w == 0 || !h.is_multiple_of(Self::ALIGN) || !w.is_multiple_of(Self::ALIGN) {
            return Err(Error::invalid(format!(
                "image size {h}x{w} must be a nonzero multiple of {}",
                Self::ALIGN
            )));
        }
        if data.len() != h * w * 3 {
            return Err(Error::invalid(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                h * w * 3
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageTensor { h, w, data })
    }

    pub fn filled(h: usize, w: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..h * w).flat_map(|_| rgb).collect();
        Self::new(h, w, data)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.w + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Luma in `[0, 1]`.
    pub fn gray(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// Rotates by a quarter turn counter-clockwise as displayed.
    pub fn rotate90(&self) -> ImageTensor {
        let (h, w) = (self.h, self.w);
        let mut out = vec![0.0; h * w * 3];
        // new image is w × h; new (x', y') = (y, w - 1 - x)
        for y in 0..h {
            for x in 0..w {
                let (nx, ny) = (y, w - 1 - x);
                let src = (y * w + x) * 3;
                let dst = (ny * h + nx) * 3;
                out[dst..dst + 3].copy_from_slice(&self.data[src..src + 3]);
            }
        }
        ImageTensor {
            h: w,
            w: h,
            data: out,
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| quantize_u8(*v)).collect()
    }

    pub fn from_rgb8(h: usize, w: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(h, w, bytes.iter().map(|b| *b as f32 / 255.0).collect())
    }
}

pub(crate) fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
