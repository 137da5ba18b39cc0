//! Reference methods: real-sample coresets (random, herding, k-center) and
//! distribution matching directly in pixel space.

mod dm;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dm::{distill_dm_pixels, write_dm_log, DmConfig, DmDistilled, DmRow};

use crate::dataio::{self, VideoSet};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{self, purpose};
use crate::student::{init_student, train_classifier, StudentConfig, StudentModel, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoresetMethod {
    Random,
    Herding,
    KCenter,
}

impl std::str::FromStr for CoresetMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(CoresetMethod::Random),
            "herding" => Ok(CoresetMethod::Herding),
            "kcenter" => Ok(CoresetMethod::KCenter),
            other => Err(Error::UnknownVariant(other.into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSelection {
    pub class: usize,
    /// Indices into the source set.
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoresetResult {
    pub method: CoresetMethod,
    #[serde(rename = "M")]
    pub m: usize,
    /// Seed of the feature extractor (herding and k-center only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_seed: Option<u64>,
    pub classes: Vec<ClassSelection>,
}

impl CoresetResult {
    /// The selected samples as a set, ordered by class then selection order.
    pub fn subset(&self, set: &VideoSet) -> VideoSet {
        let samples = self.classes.iter().flat_map(|c| c.indices.iter().map(|&i| set.samples[i].clone())).collect();
        VideoSet { samples, num_classes: set.num_classes, split: set.split, seed: set.seed }
    }
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::config("coreset size M must be positive"));
    }
    Ok(())
}

/// Uniform selection without replacement per class (with replacement only
/// when a class is smaller than `m`).
pub fn coreset_random(set: &VideoSet, m: usize, seed: u64) -> Result<CoresetResult> {
    check_m(m)?;
    let classes = (0..set.num_classes)
        .map(|class| {
            let mut r = rng::stream(&[seed, purpose::CORESET, class as u64]);
            Ok(ClassSelection { class, indices: dataio::sample_class_indices(set, class, m, &mut r)? })
        })
        .collect::<Result<_>>()?;
    Ok(CoresetResult { method: CoresetMethod::Random, m, feature_seed: None, classes })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_row(rows: &[&[f64]]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, v) in m.iter_mut().zip(*r) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= rows.len() as f64);
    m
}

/// Greedy herding on feature rows: each step adds the row that brings the
/// running selected mean closest to the full mean. Rows are reused only
/// after every row has been taken once. Ties go to the lowest index.
pub fn herding_select(features: &[&[f64]], m: usize) -> Vec<usize> {
    let n = features.len();
    let target = mean_row(features);
    let mut sum = vec![0.0; target.len()];
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(m);
    for step in 0..m {
        if step % n == 0 {
            taken.iter_mut().for_each(|t| *t = false);
        }
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, f) in features.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let cand: Vec<f64> = sum.iter().zip(*f).map(|(s, v)| (s + v) / (step + 1) as f64).collect();
            let d = dist2(&cand, &target);
            if d < best.1 {
                best = (i, d);
            }
        }
        taken[best.0] = true;
        out.push(best.0);
        for (s, v) in sum.iter_mut().zip(features[best.0]) {
            *s += v;
        }
    }
    out
}

/// Greedy k-center: start at the row nearest the mean, then repeatedly add
/// the row farthest from its nearest selected row. Ties go to the lowest
/// index; rows repeat only once all have been taken.
pub fn kcenter_select(features: &[&[f64]], m: usize) -> Vec<usize> {
    let n = features.len();
    let target = mean_row(features);
    let mut out = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    for step in 0..m {
        if step % n == 0 {
            taken.iter_mut().for_each(|t| *t = false);
            nearest.iter_mut().for_each(|d| *d = f64::INFINITY);
        }
        let pick = if step % n == 0 {
            (0..n).map(|i| (i, dist2(features[i], &target))).fold((usize::MAX, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b }).0
        } else {
            (0..n)
                .filter(|&i| !taken[i])
                .map(|i| (i, nearest[i]))
                .fold((usize::MAX, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
                .0
        };
        taken[pick] = true;
        out.push(pick);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist2(features[i], features[pick]));
        }
    }
    out
}

/// Penultimate features of every sample of `set`, `[len][d]`.
pub fn set_features(model: &StudentModel, set: &VideoSet, frames: usize) -> Result<Tensor> {
    let videos = set.normalized(frames);
    let parts = videos.par_chunks(16).map(|c| model.features(&Tensor::stack(c)?)).collect::<Result<Vec<_>>>()?;
    let d = parts[0].shape()[1];
    let data = parts.into_iter().flat_map(Tensor::into_data).collect::<Vec<_>>();
    Tensor::new(vec![data.len() / d, d], data)
}

fn feature_coreset(
    method: CoresetMethod,
    set: &VideoSet,
    m: usize,
    model: &StudentModel,
    frames: usize,
    select: fn(&[&[f64]], usize) -> Vec<usize>,
) -> Result<CoresetResult> {
    check_m(m)?;
    let feats = set_features(model, set, frames)?;
    let classes = (0..set.num_classes)
        .map(|class| {
            let members = set.class_indices(class);
            if members.is_empty() {
                return Err(Error::EmptyClass(class));
            }
            let rows: Vec<&[f64]> = members.iter().map(|&i| feats.row(i)).collect();
            Ok(ClassSelection { class, indices: select(&rows, m).into_iter().map(|i| members[i]).collect() })
        })
        .collect::<Result<_>>()?;
    Ok(CoresetResult { method, m, feature_seed: None, classes })
}

pub fn coreset_herding(set: &VideoSet, m: usize, model: &StudentModel, frames: usize) -> Result<CoresetResult> {
    feature_coreset(CoresetMethod::Herding, set, m, model, frames, herding_select)
}

pub fn coreset_kcenter(set: &VideoSet, m: usize, model: &StudentModel, frames: usize) -> Result<CoresetResult> {
    feature_coreset(CoresetMethod::KCenter, set, m, model, frames, kcenter_select)
}

/// Student trained for `epochs` on the full set, used as the herding and
/// k-center feature extractor.
pub fn feature_extractor(set: &VideoSet, config: &StudentConfig, train: &TrainConfig, epochs: usize, seed: u64) -> Result<StudentModel> {
    let mut model = init_student(config, seed)?;
    let cfg = TrainConfig {
        max_epochs: epochs,
        // a fixed short budget: no early stop
        patience: usize::MAX,
        ..train.clone()
    };
    train_classifier(&mut model, set, &cfg, seed)?;
    Ok(model)
}

/// Runs one coreset method end to end; herding and k-center train their
/// feature extractor with `seed`.
pub fn run_coreset(
    method: CoresetMethod,
    set: &VideoSet,
    m: usize,
    train: &TrainConfig,
    feature_epochs: usize,
    seed: u64,
) -> Result<CoresetResult> {
    match method {
        CoresetMethod::Random => coreset_random(set, m, seed),
        CoresetMethod::Herding | CoresetMethod::KCenter => {
            let c = set.frame_shape().ok_or_else(|| Error::config("empty set"))?[0];
            let model = feature_extractor(set, &StudentConfig::new(c, set.num_classes), train, feature_epochs, seed)?;
            let mut r = if method == CoresetMethod::Herding {
                coreset_herding(set, m, &model, train.frames)?
            } else {
                coreset_kcenter(set, m, &model, train.frames)?
            };
            r.feature_seed = Some(seed);
            Ok(r)
        }
    }
}
