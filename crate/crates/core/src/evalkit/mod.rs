//! Train-on-synthetic evaluation, redundancy analytics, the ablation harness
//! and report emission.

mod redundancy;
mod report;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use redundancy::{class_redundancy, inter_sample_redundancy, temporal_redundancy, IcNormalization, RedundancyScore};
pub use report::{emit_report, render_report, Report, ReportFormat, SummaryRow};

use crate::dataio::{self, Split, VideoSample, VideoSet};
use crate::error::{Error, Result};
use crate::idtd::{self, export_video, IdtdConfig, Variant};
use crate::numerics::{kernels, lerp_plan};
use crate::rng::{self, purpose};
use crate::student::{accuracy, init_student, train_classifier, StudentConfig, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub train: TrainConfig,
    /// Student architecture; `None` uses the default for the data shape.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub student: Option<StudentConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub seeds: Vec<u64>,
    /// Test accuracy per seed, in `seeds` order.
    pub accuracies: Vec<f64>,
    /// Per-class test accuracy averaged over seeds.
    pub per_class: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    /// SHA-256 of the evaluation config and sorted seeds.
    pub fingerprint: String,
}

/// Mean and population standard deviation, accumulated in the order given.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Trains a fresh student per seed on `syn` and reports top-1 accuracy on
/// `test`. Aggregates are computed in ascending seed order, so they do not
/// depend on the order seeds are listed in.
pub fn evaluate_synthetic(syn: &VideoSet, test: &VideoSet, cfg: &EvalConfig, seeds: &[u64]) -> Result<EvalResult> {
    if seeds.is_empty() {
        return Err(Error::config("at least one evaluation seed is required"));
    }
    let sorted: BTreeSet<u64> = seeds.iter().copied().collect();
    if sorted.len() != seeds.len() {
        return Err(Error::config("evaluation seeds must be distinct"));
    }
    if syn.num_classes != test.num_classes {
        return Err(Error::LabelMismatch(format!("synthetic set has {} classes, test set {}", syn.num_classes, test.num_classes)));
    }
    if let Some(s) = syn.samples.iter().chain(&test.samples).find(|s| s.label >= syn.num_classes) {
        return Err(Error::LabelMismatch(format!("label {} outside {} classes", s.label, syn.num_classes)));
    }
    let frame = syn.frame_shape().ok_or_else(|| Error::config("cannot evaluate an empty synthetic set"))?;
    if test.frame_shape().is_some_and(|f| f != frame) {
        return Err(Error::config("synthetic and test frames differ in shape"));
    }
    let scfg = cfg.student.clone().unwrap_or_else(|| StudentConfig::new(frame[0], syn.num_classes));
    let runs = seeds
        .par_iter()
        .map(|&seed| -> Result<(f64, Vec<f64>)> {
            let mut model = init_student(&scfg, seed)?;
            train_classifier(&mut model, syn, &cfg.train, seed)?;
            accuracy(&model, test, cfg.train.frames)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    order.sort_by_key(|&i| seeds[i]);
    let accs: Vec<f64> = order.iter().map(|&i| runs[i].0).collect();
    let (mean, std) = mean_std(&accs);
    let n = syn.num_classes;
    let per_class = (0..n).map(|c| order.iter().map(|&i| runs[i].1[c]).sum::<f64>() / seeds.len() as f64).collect();
    Ok(EvalResult {
        seeds: seeds.to_vec(),
        accuracies: runs.iter().map(|r| r.0).collect(),
        per_class,
        mean,
        std,
        fingerprint: fingerprint(&(cfg, sorted.into_iter().collect::<Vec<_>>()))?,
    })
}

/// One row of the redundancy/gain table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub class: usize,
    #[serde(rename = "R_t")]
    pub r_t: f64,
    #[serde(rename = "R_IC")]
    pub r_ic: f64,
    pub gain: f64,
}

/// Joins per-class redundancy with the accuracy difference `a - b`.
pub fn per_class_gain(a: &[f64], b: &[f64], scores: &RedundancyScore) -> Result<Vec<GainRow>> {
    if a.len() != b.len() || a.len() != scores.r_t.len() || a.len() != scores.r_ic.len() {
        return Err(Error::LabelMismatch(format!(
            "class counts differ: {} vs {} accuracies, {} redundancy scores",
            a.len(),
            b.len(),
            scores.r_t.len()
        )));
    }
    Ok((0..a.len()).map(|class| GainRow { class, r_t: scores.r_t[class], r_ic: scores.r_ic[class], gain: a[class] - b[class] }).collect())
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` if either input is constant or the
/// lengths differ or are below 2.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

/// Spearman correlation between `R_t + R_IC` and gain.
pub fn gain_correlation(rows: &[GainRow]) -> Option<f64> {
    let r: Vec<f64> = rows.iter().map(|g| g.r_t + g.r_ic).collect();
    let gain: Vec<f64> = rows.iter().map(|g| g.gain).collect();
    spearman(&r, &gain)
}

/// Picks `K` real videos per synthetic video, compresses each to about
/// `T_syn / K` frames by temporal sampling and stitches them in order.
pub fn compress_and_stitch(train: &VideoSet, cfg: &IdtdConfig, seed: u64) -> Result<VideoSet> {
    cfg.validate()?;
    idtd::check_train(train)?;
    let (k, t) = (cfg.k, cfg.t_syn);
    let mut samples = Vec::new();
    for n in 0..train.num_classes {
        for m in 0..cfg.ipc {
            let mut r = rng::stream(&[seed, purpose::ABLATION, n as u64, m as u64]);
            let picks = dataio::sample_class_indices(train, n, k, &mut r)?;
            let mut parts = Vec::with_capacity(k);
            for (j, &i) in picks.iter().enumerate() {
                let frames = (j + 1) * t / k - j * t / k;
                if frames == 0 {
                    continue;
                }
                let v = &train.samples[i].video;
                let last = (v.shape()[0] - 1) as f64;
                // centers of `frames` equal bins over the clip
                let (s, e) = (0.5 / frames as f64 * last, (frames as f64 - 0.5) / frames as f64 * last);
                parts.push(kernels::resample(v, &lerp_plan(v.shape()[0], s, e, frames)));
            }
            let data: Vec<f64> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
            let mut shape = train.samples[picks[0]].video.shape().to_vec();
            shape[0] = t;
            let video = export_video(&crate::numerics::Tensor::new(shape, data)?);
            samples.push(VideoSample { video, label: n, native_length: t });
        }
    }
    Ok(VideoSet { samples, num_classes: train.num_classes, split: Split::Synthetic, seed })
}

/// Ablation arm: a structural/objective variant, the naive baseline, or a
/// synthetic frame count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationVariant {
    Idtd(Variant),
    CompressAndStitch,
    /// Full method with the given `T_syn`.
    FrameCount(usize),
}

impl AblationVariant {
    pub fn tag(&self) -> String {
        match self {
            AblationVariant::Idtd(v) => serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
            AblationVariant::CompressAndStitch => "compress-and-stitch".into(),
            AblationVariant::FrameCount(t) => format!("t-syn={t}"),
        }
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "compress-and-stitch" {
            return Ok(AblationVariant::CompressAndStitch);
        }
        if let Some(t) = s.strip_prefix("t-syn=") {
            return match t.parse() {
                Ok(t) if t > 0 => Ok(AblationVariant::FrameCount(t)),
                _ => Err(Error::UnknownVariant(s.into())),
            };
        }
        serde_json::from_value::<Variant>(serde_json::Value::String(s.into()))
            .map(AblationVariant::Idtd)
            .map_err(|_| Error::UnknownVariant(s.into()))
    }
}

/// Synthetic set of one ablation arm.
pub fn ablation_set(train: &VideoSet, base: &IdtdConfig, variant: AblationVariant, seed: u64) -> Result<VideoSet> {
    match variant {
        AblationVariant::CompressAndStitch => compress_and_stitch(train, base, seed),
        AblationVariant::Idtd(v) => Ok(idtd::distill(train, &IdtdConfig { variant: v, ..base.clone() }, seed)?.synthetic),
        AblationVariant::FrameCount(t) => {
            Ok(idtd::distill(train, &IdtdConfig { t_syn: t, t_pool: None, variant: Variant::Full, ..base.clone() }, seed)?.synthetic)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub result: EvalResult,
}

/// Distills (or builds) each variant from `base` with `distill_seed` and
/// evaluates all of them on the same `seeds`.
pub fn run_ablation(
    train: &VideoSet,
    test: &VideoSet,
    base: &IdtdConfig,
    variants: &[AblationVariant],
    eval: &EvalConfig,
    distill_seed: u64,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&v| {
            let syn = ablation_set(train, base, v, distill_seed)?;
            Ok(AblationRow { variant: v.tag(), result: evaluate_synthetic(&syn, test, eval, seeds)? })
        })
        .collect()
}

impl AblationRow {
    pub fn summary(&self) -> SummaryRow {
        SummaryRow { variant: self.variant.clone(), mean: self.result.mean, std: self.result.std, n_seeds: self.result.seeds.len() }
    }
}
