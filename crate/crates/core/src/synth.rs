//! Synthetic rotated-text scenes and the on-disk dataset format.
//!
//! A text region is a light rectangle carrying rows of dark dashes that run
//! along the text direction, rotated by the scene angle. Background clutter
//! (blobs, bars, distractor gratings at random orientations, pixel noise) is
//! scaled by `noise_level`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    angle_to_class, normalize_angle, quantize_u8, BoundingBox, ImageTensor, RotationAngle,
    RotationClass,
};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub num_text_regions: usize,
    pub noise_level: f64,
    pub angle: RotationAngle,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(ImageTensor::ALIGN)
            || !self.width.is_multiple_of(ImageTensor::ALIGN)
        {
            return Err(Error::invalid(format!(
                "scene size {}x{} must be a nonzero multiple of 32",
                self.height, self.width
            )));
        }
        if self.num_text_regions == 0 {
            return Err(Error::invalid("a scene needs at least one text region"));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::invalid(format!(
                "noise_level {} outside [0, 1]",
                self.noise_level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSample {
    pub id: String,
    pub image: ImageTensor,
    pub angle: RotationAngle,
    pub cls: RotationClass,
    pub boxes: Vec<BoundingBox>,
}

impl AnnotatedSample {
    pub fn validate(&self, require_boxes: bool) -> Result<()> {
        if self.cls != angle_to_class(self.angle) {
            return Err(Error::Validation(format!(
                "sample {}: class {} does not match angle {}",
                self.id, self.cls, self.angle
            )));
        }
        if require_boxes && self.boxes.is_empty() {
            return Err(Error::Validation(format!(
                "sample {} has no boxes",
                self.id
            )));
        }
        for b in &self.boxes {
            b.validate(self.image.width(), self.image.height())
                .map_err(|e| Error::Validation(format!("sample {}: {e}", self.id)))?;
        }
        Ok(())
    }

    /// Copy with every box annotation removed.
    pub fn without_boxes(&self) -> AnnotatedSample {
        AnnotatedSample {
            boxes: Vec::new(),
            ..self.clone()
        }
    }
}

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<[f32; 3]>,
}

impl Canvas {
    fn blend(&mut self, x: usize, y: usize, color: [f32; 3], alpha: f32) {
        let p = &mut self.px[y * self.w + x];
        for c in 0..3 {
            p[c] += alpha * (color[c] - p[c]);
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> [f32; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

/// Rotated rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy)]
struct OrientedRect {
    cx: f64,
    cy: f64,
    half_len: f64,
    half_thick: f64,
    cos: f64,
    sin: f64,
}

impl OrientedRect {
    fn new(cx: f64, cy: f64, len: f64, thick: f64, angle_rad: f64) -> Self {
        OrientedRect {
            cx,
            cy,
            half_len: len / 2.0,
            half_thick: thick / 2.0,
            cos: angle_rad.cos(),
            sin: angle_rad.sin(),
        }
    }

    /// Axis-aligned half extents.
    fn extents(len: f64, thick: f64, angle_rad: f64) -> (f64, f64) {
        let (c, s) = (angle_rad.cos().abs(), angle_rad.sin().abs());
        (
            c * len / 2.0 + s * thick / 2.0,
            s * len / 2.0 + c * thick / 2.0,
        )
    }

    /// Local (along, across) coordinates of a pixel centre. The text
    /// direction is (cos, -sin) in y-down pixel space.
    fn local(&self, x: usize, y: usize) -> (f64, f64) {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        (dx * self.cos - dy * self.sin, dx * self.sin + dy * self.cos)
    }

    fn pixel_bounds(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let (ex, ey) = {
            let (c, s) = (self.cos.abs(), self.sin.abs());
            (
                c * self.half_len + s * self.half_thick,
                s * self.half_len + c * self.half_thick,
            )
        };
        let x0 = (self.cx - ex - 1.0).floor().max(0.0) as usize;
        let y0 = (self.cy - ey - 1.0).floor().max(0.0) as usize;
        let x1 = ((self.cx + ex + 1.0).ceil() as usize).min(w);
        let y1 = ((self.cy + ey + 1.0).ceil() as usize).min(h);
        (x0, y0, x1, y1)
    }
}

fn draw_clutter(canvas: &mut Canvas, rng: &mut ChaCha8Rng, noise: f64) {
    let (h, w) = (canvas.h, canvas.w);
    let noise32 = noise as f32;
    // slow illumination ramp
    let ramp = random_color(rng, -0.2, 0.2);
    let (gx, gy): (f32, f32) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    for y in 0..h {
        for x in 0..w {
            let t = gx * (x as f32 / w as f32 - 0.5) + gy * (y as f32 / h as f32 - 0.5);
            let p = &mut canvas.px[y * w + x];
            for c in 0..3 {
                p[c] += noise32 * ramp[c] * t;
            }
        }
    }

    let shapes = (noise * 24.0).round() as usize;
    for _ in 0..shapes {
        let color = random_color(rng, 0.0, 1.0);
        let alpha = noise32 * rng.random_range(0.4f32..0.9);
        let kind = rng.random_range(0..4u8);
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let scale = (h.min(w) as f64) * rng.random_range(0.05..0.3);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        match kind {
            // ellipse
            0 => {
                let (ra, rb) = (scale, scale * rng.random_range(0.3..1.0));
                let rect = OrientedRect::new(cx, cy, 2.0 * ra, 2.0 * rb, theta);
                let (x0, y0, x1, y1) = rect.pixel_bounds(w, h);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let (u, v) = rect.local(x, y);
                        if (u / ra).powi(2) + (v / rb).powi(2) <= 1.0 {
                            canvas.blend(x, y, color, alpha);
                        }
                    }
                }
            }
            // bar / thick line
            1 => {
                let thick = rng.random_range(1.5..5.0);
                let rect = OrientedRect::new(cx, cy, 2.5 * scale, thick, theta);
                fill_rect(canvas, &rect, color, alpha);
            }
            // filled block
            2 => {
                let rect = OrientedRect::new(
                    cx,
                    cy,
                    scale * 1.5,
                    scale * rng.random_range(0.4..1.2),
                    theta,
                );
                fill_rect(canvas, &rect, color, alpha);
            }
            // distractor grating
            _ => {
                let period = rng.random_range(3.0..8.0);
                let rect = OrientedRect::new(cx, cy, scale * 1.6, scale * 1.2, theta);
                let (x0, y0, x1, y1) = rect.pixel_bounds(w, h);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let (u, v) = rect.local(x, y);
                        if u.abs() <= rect.half_len
                            && v.abs() <= rect.half_thick
                            && (v + rect.half_thick).rem_euclid(period) < period / 2.0
                        {
                            canvas.blend(x, y, color, alpha);
                        }
                    }
                }
            }
        }
    }

    let amp = 0.1 * noise32;
    if amp > 0.0 {
        for p in canvas.px.iter_mut() {
            for c in p.iter_mut() {
                *c += rng.random_range(-amp..amp);
            }
        }
    }
}

fn fill_rect(canvas: &mut Canvas, rect: &OrientedRect, color: [f32; 3], alpha: f32) {
    let (x0, y0, x1, y1) = rect.pixel_bounds(canvas.w, canvas.h);
    for y in y0..y1 {
        for x in x0..x1 {
            let (u, v) = rect.local(x, y);
            if u.abs() <= rect.half_len && v.abs() <= rect.half_thick {
                canvas.blend(x, y, color, alpha);
            }
        }
    }
}

struct TextStyle {
    lines: usize,
    pitch: f64,
    stroke: f64,
    dash: f64,
    gap: f64,
    margin: f64,
    paper: [f32; 3],
    ink: [f32; 3],
}

/// Draws one text block and returns the tight bounds of the pixels it covered.
fn draw_text(canvas: &mut Canvas, rect: &OrientedRect, style: &TextStyle) -> Option<BoundingBox> {
    let (x0, y0, x1, y1) = rect.pixel_bounds(canvas.w, canvas.h);
    let (mut bx0, mut by0, mut bx1, mut by1) = (usize::MAX, usize::MAX, 0, 0);
    let body_len = 2.0 * (rect.half_len - style.margin);
    let cell = style.dash + style.gap;
    for y in y0..y1 {
        for x in x0..x1 {
            let (u, v) = rect.local(x, y);
            if u.abs() > rect.half_len || v.abs() > rect.half_thick {
                continue;
            }
            let across = v + rect.half_thick - style.margin;
            let along = u + rect.half_len - style.margin;
            let line = (across / style.pitch).floor();
            let is_stroke = across >= 0.0
                && (line as usize) < style.lines
                && across - line * style.pitch < style.stroke
                && (0.0..body_len).contains(&along)
                && along.rem_euclid(cell) < style.dash;
            let color = if is_stroke { style.ink } else { style.paper };
            canvas.px[y * canvas.w + x] = color;
            bx0 = bx0.min(x);
            by0 = by0.min(y);
            bx1 = bx1.max(x + 1);
            by1 = by1.max(y + 1);
        }
    }
    (bx0 < bx1 && by0 < by1).then_some(BoundingBox {
        x0: bx0 as u32,
        y0: by0 as u32,
        x1: bx1 as u32,
        y1: by1 as u32,
    })
}

/// Renders a scene. Deterministic in `spec.seed`.
pub fn render_sample(spec: &SceneSpec) -> Result<AnnotatedSample> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = random_color(&mut rng, 0.25, 0.75);
    let mut canvas = Canvas {
        h,
        w,
        px: vec![base; h * w],
    };
    let mut clutter_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    if spec.noise_level > 0.0 {
        draw_clutter(&mut canvas, &mut clutter_rng, spec.noise_level);
    }

    let theta = spec.angle.radians();
    let short = h.min(w) as f64;
    // text metrics are sized for 128 px; smaller canvases shrink them
    let glyph_scale = (short / 128.0).clamp(0.5, 1.0);
    let mut placed: Vec<(f64, f64, f64, f64)> = Vec::new();
    let mut boxes = Vec::with_capacity(spec.num_text_regions);
    for region in 0..spec.num_text_regions {
        let lines = rng.random_range(2..=4usize);
        let pitch = rng.random_range(4.0..6.5) * glyph_scale;
        let style = TextStyle {
            lines,
            pitch,
            stroke: pitch * rng.random_range(0.45..0.6),
            dash: rng.random_range(4.0..9.0) * glyph_scale,
            gap: rng.random_range(1.5..3.0) * glyph_scale,
            margin: 2.0 * glyph_scale,
            paper: random_color(&mut rng, 0.8, 1.0),
            ink: random_color(&mut rng, 0.0, 0.2),
        };
        let thick = lines as f64 * pitch + 2.0 * style.margin;
        let len_frac = rng.random_range(0.3..0.6) / (spec.num_text_regions as f64).sqrt();
        let len = (short * len_frac).max(thick * 1.5);
        let (ex, ey) = OrientedRect::extents(len, thick, theta);
        if 2.0 * ex + 2.0 > w as f64 || 2.0 * ey + 2.0 > h as f64 {
            return Err(Error::GenerationFailure(format!(
                "text region {region} ({len:.1}x{thick:.1}) does not fit in {h}x{w}"
            )));
        }
        let mut centre = None;
        for _ in 0..32 {
            let cx = rng.random_range(ex + 1.0..=w as f64 - ex - 1.0);
            let cy = rng.random_range(ey + 1.0..=h as f64 - ey - 1.0);
            let clash = placed.iter().any(|&(px, py, pex, pey)| {
                (cx - px).abs() < ex + pex + 2.0 && (cy - py).abs() < ey + pey + 2.0
            });
            if !clash {
                centre = Some((cx, cy));
                break;
            }
        }
        let (cx, cy) = centre.ok_or_else(|| {
            Error::GenerationFailure(format!(
                "no free position for text region {region} after 32 tries"
            ))
        })?;
        placed.push((cx, cy, ex, ey));
        let rect = OrientedRect::new(cx, cy, len, thick, theta);
        let b = draw_text(&mut canvas, &rect, &style).ok_or_else(|| {
            Error::GenerationFailure(format!("text region {region} rendered no pixels"))
        })?;
        boxes.push(b);
    }

    let data: Vec<f32> = canvas
        .px
        .iter()
        .flat_map(|p| p.map(|v| quantize_u8(v) as f32 / 255.0))
        .collect();
    Ok(AnnotatedSample {
        id: format!("{:016x}", spec.seed),
        image: ImageTensor::new(h, w, data)?,
        angle: spec.angle,
        cls: angle_to_class(spec.angle),
        boxes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub count: usize,
    pub split_ratios: [f64; 3],
    pub noise_level: f64,
    pub seed: u64,
    pub image_size: usize,
    pub max_regions: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            count: 2500,
            split_ratios: [0.8, 0.1, 0.1],
            noise_level: 0.7,
            seed: 1,
            image_size: 128,
            max_regions: 2,
        }
    }
}

impl DatasetOptions {
    pub fn validate(&self) -> Result<()> {
        if self.count < 10 {
            return Err(Error::invalid(format!(
                "dataset count must be at least 10, got {}",
                self.count
            )));
        }
        if self.split_ratios.iter().any(|r| r.is_nan() || *r <= 0.0) {
            return Err(Error::invalid("split ratios must be positive"));
        }
        let sum: f64 = self.split_ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios sum to {sum}, not 1")));
        }
        if self.max_regions == 0 {
            return Err(Error::invalid("max_regions must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::invalid("noise level must lie in [0, 1]"));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(ImageTensor::ALIGN) {
            return Err(Error::invalid(
                "image size must be a nonzero multiple of 32",
            ));
        }
        Ok(())
    }

    /// Per-split sample counts; val and test are rounded, train takes the rest.
    pub fn split_counts(&self) -> SplitCounts {
        let val = (self.count as f64 * self.split_ratios[1]).round() as usize;
        let test = (self.count as f64 * self.split_ratios[2]).round() as usize;
        SplitCounts {
            train: self.count - val - test,
            val,
            test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub annotations: String,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator_seed: u64,
    pub noise_level: f64,
    pub image_size: [usize; 2],
    pub max_regions: usize,
    pub split_ratios: [f64; 3],
    pub counts: SplitCounts,
    /// Paths relative to the dataset directory.
    pub splits: BTreeMap<Split, SplitFiles>,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AnnotationRecord {
    id: String,
    angle_deg: f64,
    class: RotationClass,
    boxes: Vec<[u32; 4]>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, index: u64, salt: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(index)) ^ salt)
}

const MAX_ANGLE_DRAWS: usize = 10_000;
const MAX_RENDER_ATTEMPTS: u64 = 16;

/// Draws uniform angles (0.01° grid) until one falls in the wanted class.
fn draw_angle(seed: u64, want: RotationClass) -> Result<RotationAngle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ANGLE_DRAWS {
        let centi = rng.random_range(-18_000i32..18_000);
        let angle = normalize_angle(centi as f64 / 100.0)?;
        if angle_to_class(angle) == want {
            return Ok(angle);
        }
    }
    Err(Error::GenerationFailure(format!(
        "could not draw a {want} angle in {MAX_ANGLE_DRAWS} tries"
    )))
}

/// Renders sample `index` (global across splits) wanting class `want`.
fn generate_one(
    opts: &DatasetOptions,
    index: usize,
    want: RotationClass,
) -> Result<AnnotatedSample> {
    let angle = draw_angle(derive_seed(opts.seed, index as u64, 1), want)?;
    let mut meta = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, index as u64, 2));
    let regions = meta.random_range(1..=opts.max_regions);
    let mut last_err = None;
    for attempt in 0..MAX_RENDER_ATTEMPTS {
        let spec = SceneSpec {
            height: opts.image_size,
            width: opts.image_size,
            num_text_regions: regions,
            noise_level: opts.noise_level,
            angle,
            seed: derive_seed(opts.seed, index as u64, 3 + attempt),
        };
        match render_sample(&spec) {
            Ok(s) => return Ok(s),
            Err(e @ Error::GenerationFailure(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::GenerationFailure("no render attempts".into())))
}

/// Balanced class targets for `n` samples, shuffled by `seed`.
fn class_targets(n: usize, seed: u64) -> Vec<RotationClass> {
    use rand::seq::SliceRandom;
    let mut v: Vec<RotationClass> = (0..n).map(|i| RotationClass::ALL[i % 2]).collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

/// Generates every split in memory without touching the filesystem.
pub fn generate_samples(opts: &DatasetOptions) -> Result<BTreeMap<Split, Vec<AnnotatedSample>>> {
    opts.validate()?;
    let counts = opts.split_counts();
    let mut out = BTreeMap::new();
    let mut offset = 0usize;
    for (si, split) in Split::ALL.into_iter().enumerate() {
        let n = counts.get(split);
        let targets = class_targets(n, derive_seed(opts.seed, si as u64, 0xba1a));
        let samples = par::map_indexed(n, |i| {
            generate_one(opts, offset + i, targets[i]).map(|mut s| {
                s.id = format!("{}-{:05}", split, i);
                s
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        offset += n;
        out.insert(split, samples);
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Generates, writes and returns the manifest of a dataset rooted at `out_dir`.
pub fn generate_dataset(opts: &DatasetOptions, out_dir: &Path) -> Result<DatasetManifest> {
    let all = generate_samples(opts)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut splits = BTreeMap::new();
    for (split, samples) in &all {
        let rel_images = format!("{split}/images");
        let images_dir = out_dir.join(&rel_images);
        fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
        par::map_indexed(samples.len(), |i| {
            let s = &samples[i];
            crate::io::save_image(&images_dir.join(format!("{}.png", s.id)), &s.image)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let mut jsonl = String::new();
        for s in samples {
            let rec = AnnotationRecord {
                id: s.id.clone(),
                angle_deg: s.angle.degrees(),
                class: s.cls,
                boxes: s.boxes.iter().map(|b| b.to_array()).collect(),
            };
            jsonl.push_str(&serde_json::to_string(&rec).expect("annotation serializes"));
            jsonl.push('\n');
        }
        let rel_ann = format!("{split}/annotations.jsonl");
        write_file(&out_dir.join(&rel_ann), jsonl.as_bytes())?;
        splits.insert(
            *split,
            SplitFiles {
                annotations: rel_ann,
                images: samples
                    .iter()
                    .map(|s| format!("{rel_images}/{}.png", s.id))
                    .collect(),
            },
        );
    }
    let manifest = DatasetManifest {
        generator_seed: opts.seed,
        noise_level: opts.noise_level,
        image_size: [opts.image_size, opts.image_size],
        max_regions: opts.max_regions,
        split_ratios: opts.split_ratios,
        counts: opts.split_counts(),
        splits,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out_dir.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}

/// Whether rows without boxes are accepted on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxPolicy {
    Required,
    Optional,
}

pub fn load_dataset(dir: &Path, split: Split) -> Result<Vec<AnnotatedSample>> {
    load_dataset_with(dir, split, BoxPolicy::Required)
}

pub fn load_dataset_with(
    dir: &Path,
    split: Split,
    policy: BoxPolicy,
) -> Result<Vec<AnnotatedSample>> {
    let split_dir = dir.join(split.as_str());
    let ann_path = split_dir.join("annotations.jsonl");
    let file = fs::File::open(&ann_path).map_err(|e| Error::Parse {
        location: ann_path.display().to_string(),
        message: format!("cannot open annotation file: {e}"),
    })?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&ann_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{}:{}", ann_path.display(), lineno + 1);
        let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: location.clone(),
            message: e.to_string(),
        })?;
        records.push((location, rec));
    }
    if records.is_empty() {
        return Err(Error::Parse {
            location: ann_path.display().to_string(),
            message: "no annotation records".into(),
        });
    }
    let images_dir = split_dir.join("images");
    let decoded = par::map_indexed(records.len(), |i| {
        let (location, rec) = &records[i];
        let image = crate::io::load_image(&images_dir.join(format!("{}.png", rec.id)))?;
        let angle = normalize_angle(rec.angle_deg).map_err(|e| Error::Parse {
            location: location.clone(),
            message: e.to_string(),
        })?;
        let boxes = rec
            .boxes
            .iter()
            .map(|b| BoundingBox {
                x0: b[0],
                y0: b[1],
                x1: b[2],
                y1: b[3],
            })
            .collect();
        let sample = AnnotatedSample {
            id: rec.id.clone(),
            image,
            angle,
            cls: rec.class,
            boxes,
        };
        sample
            .validate(policy == BoxPolicy::Required)
            .map_err(|e| Error::Validation(format!("{location}: {e}")))?;
        Ok(sample)
    });
    decoded.into_iter().collect()
}

/// Writes a copy of `split` with all boxes removed into `out_dir`, sharing
/// the same image files by copying them.
pub fn strip_boxes(dir: &Path, split: Split, out_dir: &Path) -> Result<()> {
    let samples = load_dataset_with(dir, split, BoxPolicy::Optional)?;
    let images_out = out_dir.join(split.as_str()).join("images");
    fs::create_dir_all(&images_out).map_err(|e| Error::io(&images_out, e))?;
    let mut jsonl = String::new();
    for s in &samples {
        let name = format!("{}.png", s.id);
        let src = dir.join(split.as_str()).join("images").join(&name);
        fs::copy(&src, images_out.join(&name)).map_err(|e| Error::io(&src, e))?;
        let rec = AnnotationRecord {
            id: s.id.clone(),
            angle_deg: s.angle.degrees(),
            class: s.cls,
            boxes: Vec::new(),
        };
        jsonl.push_str(&serde_json::to_string(&rec).expect("annotation serializes"));
        jsonl.push('\n');
    }
    write_file(
        &out_dir.join(split.as_str()).join("annotations.jsonl"),
        jsonl.as_bytes(),
    )
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}
