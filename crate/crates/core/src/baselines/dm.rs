//! Distribution matching on raw synthetic videos.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, Split, VideoSample, VideoSet};
use crate::error::{Error, Result};
use crate::idtd::{self, check_train, class_stream, export_video, iteration_student, matching_loss_var, mean_features, student_batch};
use crate::numerics::{Graph, Momentum, Tensor};
use crate::rng::{self, purpose};
use crate::student::StudentConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmConfig {
    pub ipc: usize,
    pub lr: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub t_syn: usize,
    pub t_real: usize,
    pub real_batch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub student: Option<StudentConfig>,
}

impl Default for DmConfig {
    fn default() -> Self {
        let base = idtd::IdtdConfig::default();
        DmConfig {
            ipc: base.ipc,
            lr: base.lr,
            momentum: base.momentum,
            iterations: base.iterations,
            t_syn: base.t_syn,
            t_real: base.t_real,
            real_batch: base.real_batch,
            student: None,
        }
    }
}

impl DmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ipc == 0 || self.t_syn == 0 || self.t_real == 0 || self.real_batch == 0 {
            return Err(Error::config("dm: ipc, t_syn, t_real and real_batch must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0 && self.momentum.is_finite() && self.momentum >= 0.0) {
            return Err(Error::config("dm: lr and momentum must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmRow {
    pub iteration: usize,
    pub class: usize,
    pub loss: f64,
}

pub fn write_dm_log(path: impl AsRef<Path>, rows: &[DmRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "class", "L_M"])?;
    for r in rows {
        w.write_record([r.iteration.to_string(), r.class.to_string(), format!("{:e}", r.loss)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct DmDistilled {
    pub synthetic: VideoSet,
    pub log: Vec<DmRow>,
    /// Unclamped videos, class-major.
    pub videos: Vec<Tensor>,
}

struct ClassState {
    videos: Vec<Tensor>,
    opt: Momentum,
}

/// Optimizes `ipc` raw videos per class, initialized from random real
/// samples, with the matching loss alone. Each class's videos form one
/// synthetic batch. Iterations reuse the students and real batches of
/// [`idtd::distill`] for the same seed.
pub fn distill_dm_pixels(train: &VideoSet, config: &DmConfig, seed: u64) -> Result<DmDistilled> {
    config.validate()?;
    check_train(train)?;
    let frame = train.frame_shape().expect("non-empty");
    let scfg = config.student.clone().unwrap_or_else(|| StudentConfig::new(frame[0], train.num_classes));
    scfg.validate()?;
    scfg.check_frame(frame[1], frame[2])?;
    let mut classes = (0..train.num_classes)
        .map(|n| {
            let mut r = rng::stream(&[seed, purpose::DM_INIT, n as u64]);
            let picks = dataio::sample_class_indices(train, n, config.ipc, &mut r)?;
            Ok(ClassState {
                videos: picks.into_iter().map(|i| dataio::resample_temporal(&train.samples[i].video, config.t_syn)).collect(),
                opt: Momentum::new(config.lr, config.momentum),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut log = Vec::with_capacity(config.iterations * train.num_classes);
    for it in 0..config.iterations {
        let model = iteration_student(&scfg, seed, it)?;
        let rows = classes
            .par_iter_mut()
            .enumerate()
            .map(|(n, cs)| -> Result<DmRow> {
                let mut r = class_stream(seed, it, n);
                let real = Tensor::stack(&dataio::sample_class_batch(train, n, config.real_batch, config.t_real, &mut r)?)?;
                let real_mean = mean_features(&model, &real)?;
                let mut g = Graph::new();
                let bound = model.bind(&mut g, false);
                let leaves: Vec<_> = cs.videos.iter().map(|v| g.param(v.clone())).collect();
                let batch = student_batch(&mut g, &leaves, config.t_real)?;
                let feats = model.forward(&mut g, &bound, batch)?.penultimate;
                let loss = matching_loss_var(&mut g, feats, &real_mean)?;
                if !g.value(loss).item().is_finite() {
                    return Err(Error::Diverged { iteration: it, class: n });
                }
                g.backward(loss)?;
                let grads: Vec<Tensor> = leaves.iter().map(|&v| g.leaf_grad(v)).collect();
                cs.opt.step(&mut cs.videos.iter_mut().collect::<Vec<_>>(), &grads);
                if cs.videos.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged { iteration: it, class: n });
                }
                Ok(DmRow { iteration: it, class: n, loss: g.value(loss).item() })
            })
            .collect::<Result<Vec<_>>>()?;
        log.extend(rows);
    }
    let mut samples = Vec::new();
    let mut videos = Vec::new();
    for (n, cs) in classes.into_iter().enumerate() {
        for v in cs.videos {
            let video = export_video(&v);
            samples.push(VideoSample { native_length: video.shape()[0], video, label: n });
            videos.push(v);
        }
    }
    Ok(DmDistilled { synthetic: VideoSet { samples, num_classes: train.num_classes, split: Split::Synthetic, seed }, log, videos })
}
