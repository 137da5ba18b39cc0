//! Stochastic temporal augmentation: crop a random fraction of the clip and
//! stretch it back to the original frame count.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{kernels, Graph, Tensor, Var};

/// Normalized crop window `[start, end]` with `0 <= start < end <= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalInterval {
    pub start: f64,
    pub end: f64,
}

impl TemporalInterval {
    pub const FULL: TemporalInterval = TemporalInterval { start: 0.0, end: 1.0 };

    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    /// Crop window in frame units for a clip of `len` frames.
    pub fn frames(&self, len: usize) -> (f64, f64) {
        let last = (len - 1) as f64;
        (self.start * last, self.end * last)
    }
}

/// Rejection-samples `(s, e)` uniformly on the triangle `s < e` until the
/// window is at least `min_frac` wide.
pub fn sample_interval<R: Rng + ?Sized>(rng: &mut R, min_frac: f64) -> TemporalInterval {
    assert!(min_frac > 0.0 && min_frac <= 1.0, "min_frac must be in (0, 1]");
    if min_frac >= 1.0 {
        return TemporalInterval::FULL;
    }
    loop {
        let a: f64 = rng.random();
        let b: f64 = rng.random();
        let (start, end) = if a < b { (a, b) } else { (b, a) };
        if end - start >= min_frac {
            return TemporalInterval { start, end };
        }
    }
}

/// Crops `video` to the fractional frame window of `mu` and linearly
/// resamples it back to its own length.
pub fn temporal_augment(video: &Tensor, mu: TemporalInterval) -> Tensor {
    let len = video.shape()[0];
    if mu == TemporalInterval::FULL {
        return video.clone();
    }
    let (s, e) = mu.frames(len);
    kernels::resample(video, &kernels::lerp_plan(len, s, e, len))
}

/// Graph form of [`temporal_augment`], differentiable w.r.t. the video.
pub fn temporal_augment_var(g: &mut Graph, video: Var, mu: TemporalInterval) -> Result<Var> {
    let len = g.value(video).shape()[0];
    let (s, e) = mu.frames(len);
    g.resample(video, s, e, len)
}
