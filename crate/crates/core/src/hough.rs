//! Hough-transform dominant-orientation baseline.

use serde::{Deserialize, Serialize};

use crate::domain::{angle_to_class, normalize_angle, ImageTensor, RotationClass};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::par;
use crate::synth::AnnotatedSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoughConfig {
    /// Edge pixels have Sobel magnitude at least this fraction of the
    /// image maximum.
    pub edge_threshold: f64,
    /// Number of orientation bins covering `[0, 180)`.
    pub angle_bins: usize,
    /// Accumulator cells at or below this count are ignored.
    pub vote_threshold: u32,
}

impl Default for HoughConfig {
    fn default() -> Self {
        HoughConfig {
            edge_threshold: 0.3,
            angle_bins: 180,
            vote_threshold: 0,
        }
    }
}

impl HoughConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.edge_threshold > 0.0 && self.edge_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "edge threshold {} outside (0, 1)",
                self.edge_threshold
            )));
        }
        if self.angle_bins < 36 {
            return Err(Error::invalid(format!(
                "need at least 36 angle bins, got {}",
                self.angle_bins
            )));
        }
        Ok(())
    }
}

/// Edge pixels only vote for normal angles within this many degrees of their
/// gradient direction.
const GRADIENT_WINDOW_DEG: f64 = 15.0;

/// Sobel magnitude and gradient direction (degrees in `[0, 180)`, y down).
fn sobel(gray: &[f32], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let px = |x: isize, y: isize| -> f64 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        gray[y * w + x] as f64
    };
    let mut mag = vec![0.0; h * w];
    let mut dir = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2.0 * px(x - 1, y)
                - px(x - 1, y + 1);
            let gy = px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2.0 * px(x, y - 1)
                - px(x + 1, y - 1);
            let i = y as usize * w + x as usize;
            mag[i] = gx.hypot(gy);
            dir[i] = gy.atan2(gx).to_degrees().rem_euclid(180.0);
        }
    }
    (mag, dir)
}

/// Orientation in degrees, `[0, 180)`, of the dominant straight-line
/// structure, measured counter-clockwise from the horizontal as displayed.
pub fn dominant_orientation(image: &ImageTensor, config: &HoughConfig) -> Result<f64> {
    config.validate()?;
    let (h, w) = (image.height(), image.width());
    let (mag, dir) = sobel(&image.gray(), h, w);
    let max = mag.iter().copied().fold(0.0, f64::max);
    if max <= 1e-12 {
        return Err(Error::NoSignal);
    }
    let cut = config.edge_threshold * max;
    let edges: Vec<(f64, f64, f64)> = (0..h * w)
        .filter(|i| mag[*i] >= cut)
        .map(|i| ((i % w) as f64, (i / w) as f64, dir[i]))
        .collect();
    if edges.is_empty() {
        return Err(Error::NoSignal);
    }

    let bins = config.angle_bins;
    let diag = ((h * h + w * w) as f64).sqrt().ceil() as usize;
    let offsets = 2 * diag + 1;
    let step = std::f64::consts::PI / bins as f64;
    // score each normal angle by the energy of its offset histogram
    let scores = par::map_indexed(bins, |b| {
        let normal = b as f64 * 180.0 / bins as f64;
        let (s, c) = (b as f64 * step).sin_cos();
        let mut acc = vec![0u32; offsets];
        for &(x, y, g) in &edges {
            let d = (g - normal).rem_euclid(180.0);
            if d.min(180.0 - d) > GRADIENT_WINDOW_DEG {
                continue;
            }
            let rho = (x * c + y * s).round() as isize + diag as isize;
            acc[rho as usize] += 1;
        }
        acc.iter()
            .filter(|v| **v > config.vote_threshold)
            .map(|v| (*v as u64) * (*v as u64))
            .sum::<u64>()
    });
    let (best_bin, _) =
        scores.iter().enumerate().fold(
            (0, 0u64),
            |(bi, bs), (i, s)| if *s > bs { (i, *s) } else { (bi, bs) },
        );
    if scores[best_bin] == 0 {
        return Err(Error::NoSignal);
    }

    // A line whose normal makes angle θ with +x (y down) runs at visual
    // angle 90° - θ counter-clockwise.
    let normal_deg = best_bin as f64 * 180.0 / bins as f64;
    Ok((90.0 - normal_deg).rem_euclid(180.0))
}

/// Folds an orientation into `[-90, 90)` and maps it to a class; images
/// without edges fall back to horizontal.
pub fn classify_hough(image: &ImageTensor, config: &HoughConfig) -> RotationClass {
    match dominant_orientation(image, config) {
        Ok(theta) => {
            let folded = if theta >= 90.0 { theta - 180.0 } else { theta };
            angle_to_class(normalize_angle(folded).expect("finite orientation"))
        }
        Err(_) => RotationClass::Horizontal,
    }
}

pub fn evaluate_hough(samples: &[AnnotatedSample], config: &HoughConfig) -> Result<EvalReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty sample set"));
    }
    let preds = par::map_indexed(samples.len(), |i| classify_hough(&samples[i].image, config));
    let truths: Vec<RotationClass> = samples.iter().map(|s| s.cls).collect();
    metrics::report(&preds, &truths)
}
