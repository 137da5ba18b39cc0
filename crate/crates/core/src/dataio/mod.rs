//! Labeled video sets: the synthetic moving-shapes generator, temporal
//! resampling, per-class batching and the on-disk container.

mod container;
mod shapes;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{kernels, Tensor};

pub(crate) use container::{decode_record as decode_container_record, encode_record as container_record};
pub use container::{read_set, write_set, FORMAT_VERSION, MAGIC};
pub use shapes::{generate_moving_shapes, Motion, ShapeKind, ShapeSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Synthetic,
}

/// One labeled clip, stored at its native frame count as `[T][C][H][W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub video: Tensor,
    pub label: usize,
    pub native_length: usize,
}

impl VideoSample {
    pub fn frames(&self) -> usize {
        self.video.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSet {
    pub samples: Vec<VideoSample>,
    pub num_classes: usize,
    pub split: Split,
    pub seed: u64,
}

impl VideoSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of the samples labeled `class`, in storage order.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.samples.iter().enumerate().filter(|(_, s)| s.label == class).map(|(i, _)| i).collect()
    }

    /// Frame geometry `[C, H, W]` shared by all samples.
    pub fn frame_shape(&self) -> Option<[usize; 3]> {
        self.samples.first().map(|s| {
            let sh = s.video.shape();
            [sh[1], sh[2], sh[3]]
        })
    }

    /// Every class index must occur, and labels and frame shapes must agree.
    pub fn validate(&self) -> Result<()> {
        let frame = self.frame_shape();
        for s in &self.samples {
            if s.label >= self.num_classes {
                return Err(Error::LabelMismatch(format!("label {} outside [0, {})", s.label, self.num_classes)));
            }
            let sh = s.video.shape();
            if sh.len() != 4 || Some([sh[1], sh[2], sh[3]]) != frame {
                return Err(Error::InvalidShape { shape: sh.to_vec(), reason: "videos must share one [C][H][W] frame shape".into() });
            }
        }
        if matches!(self.split, Split::Train | Split::Synthetic) {
            if let Some(c) = (0..self.num_classes).find(|&c| self.samples.iter().all(|s| s.label != c)) {
                return Err(Error::EmptyClass(c));
            }
        }
        Ok(())
    }

    /// All videos resampled to `t` frames.
    pub fn normalized(&self, t: usize) -> Vec<Tensor> {
        self.samples.iter().map(|s| resample_temporal(&s.video, t)).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Linearly interpolates a `[T][...]` video to `t_out` frames at positions
/// `t * (T_in - 1) / (t_out - 1)`; single-frame inputs are replicated.
pub fn resample_temporal(video: &Tensor, t_out: usize) -> Tensor {
    let len = video.shape()[0];
    if len == t_out {
        return video.clone();
    }
    let plan = kernels::lerp_plan(len, 0.0, (len - 1) as f64, t_out);
    kernels::resample(video, &plan)
}

/// Rounds every value to the nearest `f32`, the on-disk precision.
pub fn quantize_f32(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

/// Indices of a class batch: without replacement when the class has at least
/// `size` members, otherwise with replacement.
pub fn sample_class_indices<R: Rng + ?Sized>(set: &VideoSet, class: usize, size: usize, rng: &mut R) -> Result<Vec<usize>> {
    let members = set.class_indices(class);
    if members.is_empty() {
        return Err(Error::EmptyClass(class));
    }
    Ok(if members.len() >= size {
        sample_indices(rng, members.len(), size).into_iter().map(|i| members[i]).collect()
    } else {
        (0..size).map(|_| members[rng.random_range(0..members.len())]).collect()
    })
}

/// Draws `size` videos of class `class`, each resampled to `t_real` frames.
pub fn sample_class_batch<R: Rng + ?Sized>(set: &VideoSet, class: usize, size: usize, t_real: usize, rng: &mut R) -> Result<Vec<Tensor>> {
    Ok(sample_class_indices(set, class, size, rng)?.into_iter().map(|i| resample_temporal(&set.samples[i].video, t_real)).collect())
}
