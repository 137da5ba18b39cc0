//! Temporal and inter-sample redundancy scores: `tanh` of the reciprocal
//! mean feature variance.

use serde::{Deserialize, Serialize};

use crate::dataio::VideoSet;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::student::StudentModel;

/// Placement of the batch factor in the inter-sample score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcNormalization {
    /// `tanh(1 / ((1/B) * var))`.
    #[default]
    AsPrinted,
    /// `tanh(1 / var)`, the same form as the temporal score.
    Symmetric,
}

/// Population variance of `n` values read through `at`.
fn variance(n: usize, at: impl Fn(usize) -> f64) -> f64 {
    let mean = (0..n).map(&at).sum::<f64>() / n as f64;
    (0..n).map(|i| (at(i) - mean).powi(2)).sum::<f64>() / n as f64
}

fn score(mean_var: f64) -> f64 {
    if mean_var == 0.0 {
        1.0
    } else {
        (1.0 / mean_var).tanh()
    }
}

/// `R_t` of temporal features `[B][t][d]`: variance over time per sample and
/// feature, averaged over features, then over samples.
pub fn temporal_redundancy(ft: &Tensor) -> Result<f64> {
    let s = ft.shape();
    if s.len() != 3 || s[1] < 2 {
        return Err(Error::InvalidShape { shape: s.to_vec(), reason: "temporal redundancy needs [B][t][d] with t >= 2".into() });
    }
    let (b, t, d) = (s[0], s[1], s[2]);
    let x = ft.data();
    let per_sample: f64 = (0..b).map(|bi| (0..d).map(|j| variance(t, |ti| x[(bi * t + ti) * d + j])).sum::<f64>() / d as f64).sum();
    Ok(score(per_sample / b as f64))
}

/// `R_IC` of penultimate features `[B][d]`: variance over the batch per
/// feature, averaged over features.
pub fn inter_sample_redundancy(fic: &Tensor, norm: IcNormalization) -> Result<f64> {
    let s = fic.shape();
    if s.len() != 2 || s[0] < 2 {
        return Err(Error::InvalidShape { shape: s.to_vec(), reason: "inter-sample redundancy needs [B][d] with B >= 2".into() });
    }
    let (b, d) = (s[0], s[1]);
    let x = fic.data();
    let v = (0..d).map(|j| variance(b, |i| x[i * d + j])).sum::<f64>() / d as f64;
    Ok(score(match norm {
        IcNormalization::AsPrinted => v / b as f64,
        IcNormalization::Symmetric => v,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedundancyScore {
    pub r_t: Vec<f64>,
    pub r_ic: Vec<f64>,
    /// Samples per class used.
    pub batch: usize,
}

/// Per-class scores from the first `batch` samples of each class (fewer if
/// the class is smaller), with videos resampled to `frames`.
pub fn class_redundancy(
    model: &StudentModel,
    set: &VideoSet,
    batch: usize,
    frames: usize,
    norm: IcNormalization,
) -> Result<RedundancyScore> {
    let mut r_t = Vec::with_capacity(set.num_classes);
    let mut r_ic = Vec::with_capacity(set.num_classes);
    for class in 0..set.num_classes {
        let members = set.class_indices(class);
        if members.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        let videos: Vec<Tensor> =
            members.iter().take(batch).map(|&i| crate::dataio::resample_temporal(&set.samples[i].video, frames)).collect();
        let x = Tensor::stack(&videos)?;
        r_t.push(temporal_redundancy(&model.temporal_features(&x)?)?);
        r_ic.push(inter_sample_redundancy(&model.features(&x)?, norm)?);
    }
    Ok(RedundancyScore { r_t, r_ic, batch })
}
