//! "Moving shapes": each class is one motion program applied to a randomly
//! chosen shape at a random position, so a single frame does not identify
//! the class and the classifier has to use motion.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{quantize_f32, Split, VideoSample, VideoSet};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{self, purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Motion {
    TranslateLeft,
    TranslateRight,
    TranslateUp,
    TranslateDown,
    Rotate,
    ScaleOscillate,
}

impl Motion {
    pub const ALL: [Motion; 6] =
        [Motion::TranslateLeft, Motion::TranslateRight, Motion::TranslateUp, Motion::TranslateDown, Motion::Rotate, Motion::ScaleOscillate];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Triangle,
    Cross,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    /// One motion program per class; the class count is its length.
    pub motions: Vec<Motion>,
    /// Shapes drawn uniformly per sample.
    pub shapes: Vec<ShapeKind>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Side length of the shape's bounding square in pixels.
    pub object_size: usize,
    /// Amplitude of additive uniform pixel noise.
    pub noise: f64,
}

impl Default for ShapeSpec {
    fn default() -> Self {
        ShapeSpec {
            motions: Motion::ALL[..5].to_vec(),
            shapes: vec![ShapeKind::Square],
            height: 32,
            width: 32,
            channels: 1,
            min_len: 8,
            max_len: 32,
            train_per_class: 100,
            test_per_class: 20,
            object_size: 12,
            noise: 0.0,
        }
    }
}

impl ShapeSpec {
    pub fn num_classes(&self) -> usize {
        self.motions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(format!("shape spec: {m}")));
        if self.motions.is_empty() {
            return fail("at least one class is required");
        }
        for (i, m) in self.motions.iter().enumerate() {
            if self.motions[..i].contains(m) {
                return fail("motion programs must be distinct across classes");
            }
        }
        if self.shapes.is_empty() {
            return fail("at least one shape kind is required");
        }
        if self.min_len < 4 || self.max_len < self.min_len {
            return fail("lengths need 4 <= min_len <= max_len");
        }
        if self.channels == 0 || self.train_per_class == 0 {
            return fail("channels and train_per_class must be positive");
        }
        // scale oscillation grows the shape by up to 40%
        let span = (self.object_size as f64 * 1.4).ceil() as usize + 2;
        if self.object_size < 2 || span > self.height.min(self.width) {
            return fail("object_size must fit inside the frame with room to move");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return fail("noise must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Per-frame placement of the object: center (pixel units), rotation and
/// scale.
#[derive(Clone, Copy, Debug)]
struct Pose {
    cy: f64,
    cx: f64,
    angle: f64,
    scale: f64,
}

fn inside(kind: ShapeKind, u: f64, v: f64, half: f64) -> bool {
    match kind {
        ShapeKind::Square => u.abs() < half && v.abs() < half,
        // apex at v = -half, base at v = +half
        ShapeKind::Triangle => v.abs() < half && u.abs() < half * (v + half) / (2.0 * half),
        ShapeKind::Cross => {
            let arm = half / 3.0;
            (u.abs() < half && v.abs() < arm) || (v.abs() < half && u.abs() < arm)
        }
    }
}

fn render(spec: &ShapeSpec, kind: ShapeKind, pose: Pose, intensity: &[f64], frame: &mut [f64]) {
    let (h, w) = (spec.height, spec.width);
    let half = spec.object_size as f64 / 2.0 * pose.scale;
    let (sin, cos) = pose.angle.sin_cos();
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 + 0.5 - pose.cy;
            let dx = x as f64 + 0.5 - pose.cx;
            // rotate the pixel into the shape's frame
            let u = cos * dx + sin * dy;
            let v = -sin * dx + cos * dy;
            if inside(kind, u, v, half) {
                for (c, &level) in intensity.iter().enumerate() {
                    frame[(c * h + y) * w + x] = level;
                }
            }
        }
    }
}

fn poses<R: Rng>(spec: &ShapeSpec, motion: Motion, len: usize, rng: &mut R) -> Vec<Pose> {
    let size = spec.object_size as f64;
    let (h, w) = (spec.height as f64, spec.width as f64);
    let progress = |t: usize| t as f64 / (len - 1) as f64;
    match motion {
        Motion::TranslateLeft | Motion::TranslateRight | Motion::TranslateUp | Motion::TranslateDown => {
            let horizontal = matches!(motion, Motion::TranslateLeft | Motion::TranslateRight);
            let (along, across) = if horizontal { (w, h) } else { (h, w) };
            let room = along - size;
            let travel = rng.random_range(0.5..=1.0) * room;
            let start = rng.random_range(0.0..=room - travel);
            let cross = rng.random_range(0.0..=across - size).round();
            let forward = matches!(motion, Motion::TranslateRight | Motion::TranslateDown);
            (0..len)
                .map(|t| {
                    let offset = start + travel * progress(t);
                    let lead = if forward { offset } else { room - offset };
                    // integer corners keep the square pixel-aligned
                    let lead = lead.round() + size / 2.0;
                    let cross = cross + size / 2.0;
                    let (cy, cx) = if horizontal { (cross, lead) } else { (lead, cross) };
                    Pose { cy, cx, angle: 0.0, scale: 1.0 }
                })
                .collect()
        }
        Motion::Rotate => {
            let margin = size * 0.75;
            let cy = rng.random_range(margin..=h - margin);
            let cx = rng.random_range(margin..=w - margin);
            let angle0 = rng.random_range(0.0..2.0 * PI);
            let sweep = rng.random_range(0.5 * PI..=PI) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (0..len).map(|t| Pose { cy, cx, angle: angle0 + sweep * progress(t), scale: 1.0 }).collect()
        }
        Motion::ScaleOscillate => {
            let margin = size * 0.75;
            let cy = rng.random_range(margin..=h - margin);
            let cx = rng.random_range(margin..=w - margin);
            let cycles = rng.random_range(1.0..=2.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            (0..len).map(|t| Pose { cy, cx, angle: 0.0, scale: 1.0 + 0.4 * (2.0 * PI * cycles * progress(t) + phase).sin() }).collect()
        }
    }
}

fn generate_sample(spec: &ShapeSpec, seed: u64, split: Split, class: usize, index: usize) -> VideoSample {
    let tag = match split {
        Split::Train => purpose::DATA_TRAIN,
        Split::Test | Split::Synthetic => purpose::DATA_TEST,
    };
    let mut rng = rng::stream(&[seed, tag, class as u64, index as u64]);
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let kind = spec.shapes[rng.random_range(0..spec.shapes.len())];
    let intensity: Vec<f64> = (0..spec.channels).map(|_| rng.random_range(0.6..=1.0)).collect();
    let frame_len = spec.channels * spec.height * spec.width;
    let mut data = vec![0.0; len * frame_len];
    for (pose, frame) in poses(spec, spec.motions[class], len, &mut rng).into_iter().zip(data.chunks_mut(frame_len)) {
        render(spec, kind, pose, &intensity, frame);
    }
    if spec.noise > 0.0 {
        for v in &mut data {
            *v = (*v + rng.random_range(-spec.noise..=spec.noise)).clamp(0.0, 1.0);
        }
    }
    let mut video = Tensor::new(vec![len, spec.channels, spec.height, spec.width], data).expect("extents >= 1");
    quantize_f32(&mut video);
    VideoSample { video, label: class, native_length: len }
}

fn generate_split(spec: &ShapeSpec, seed: u64, split: Split, per_class: usize) -> VideoSet {
    let n = spec.num_classes();
    let samples = (0..n * per_class).into_par_iter().map(|i| generate_sample(spec, seed, split, i / per_class, i % per_class)).collect();
    VideoSet { samples, num_classes: n, split, seed }
}

/// Generates the train and test splits. Each sample draws from its own
/// stream keyed by (seed, split, class, index).
pub fn generate_moving_shapes(spec: &ShapeSpec, seed: u64) -> Result<(VideoSet, VideoSet)> {
    spec.validate()?;
    Ok((generate_split(spec, seed, Split::Train, spec.train_per_class), generate_split(spec, seed, Split::Test, spec.test_per_class)))
}
