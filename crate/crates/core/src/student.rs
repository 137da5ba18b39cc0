//! Small 3D ConvNet used for feature matching, redundancy taps and
//! evaluation training.
//!
//! Each block is a same-padded 3x3 spatial convolution (temporal extent per
//! block), ReLU, then 2x2 spatial average pooling. The penultimate features are
//! the global (time and space) average of the last block; the temporal tap is
//! the spatial average of block 2, which keeps the time axis.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, VideoSet};
use crate::error::{Error, Result};
use crate::idtd::augment::{sample_interval, temporal_augment};
use crate::numerics::{Graph, Momentum, Tensor, Var};
use crate::rng::{self, purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    /// Output channels per conv block.
    pub channels: Vec<usize>,
    /// Temporal kernel extent per conv block (odd).
    pub temporal_kernels: Vec<usize>,
    /// Spatial kernel extent (odd), shared by all blocks.
    pub spatial_kernel: usize,
    /// Block index (0-based) whose spatially pooled output is the temporal tap.
    pub temporal_tap: usize,
}

impl StudentConfig {
    pub fn new(in_channels: usize, num_classes: usize) -> Self {
        StudentConfig {
            in_channels,
            num_classes,
            channels: vec![16, 32, 32],
            temporal_kernels: vec![1, 1, 3],
            spatial_kernel: 3,
            temporal_tap: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(format!("student: {m}")));
        if self.in_channels == 0 || self.num_classes == 0 {
            return fail("in_channels and num_classes must be positive");
        }
        if self.channels.is_empty() || self.channels.len() != self.temporal_kernels.len() {
            return fail("channels and temporal_kernels need equal, non-zero length");
        }
        if self.channels.contains(&0) {
            return fail("channel counts must be positive");
        }
        if self.temporal_kernels.iter().any(|k| k % 2 == 0) || self.spatial_kernel.is_multiple_of(2) {
            return fail("kernel extents must be odd");
        }
        if self.temporal_tap >= self.channels.len() {
            return fail("temporal_tap must index a block");
        }
        Ok(())
    }

    /// Width of the penultimate feature vector.
    pub fn feature_dim(&self) -> usize {
        *self.channels.last().expect("validated")
    }

    /// Spatial extents must survive one 2x pooling per block.
    pub fn check_frame(&self, h: usize, w: usize) -> Result<()> {
        let div = 1 << self.channels.len();
        if !h.is_multiple_of(div) || !w.is_multiple_of(div) {
            return Err(Error::config(format!("frame {h}x{w} must be divisible by {div} for {} pooling blocks", self.channels.len())));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudentModel {
    pub config: StudentConfig,
    /// `(name, tensor)` in a fixed order: per block weight then bias, then
    /// head weight `[d][N]` and head bias `[N]`.
    pub params: Vec<(String, Tensor)>,
}

/// Graph handles for a model's parameters.
#[derive(Clone, Debug)]
pub struct BoundStudent {
    pub params: Vec<Var>,
}

/// Named outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Taps {
    /// `[B][t][d]`
    pub temporal: Var,
    /// `[B][d]`
    pub penultimate: Var,
    /// `[B][N]`
    pub logits: Var,
}

fn uniform_init<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// Fresh weights: conv kernels uniform in `+-sqrt(6/fan_in)` (ReLU gain),
/// zero conv biases, head weight and bias uniform in `+-1/sqrt(d)`.
pub fn init_student(config: &StudentConfig, seed: u64) -> Result<StudentModel> {
    config.validate()?;
    let mut rng = rng::stream(&[seed, purpose::STUDENT_INIT]);
    let k = config.spatial_kernel;
    let mut params = Vec::new();
    let mut cin = config.in_channels;
    for (i, (&cout, &kt)) in config.channels.iter().zip(&config.temporal_kernels).enumerate() {
        let fan_in = cin * kt * k * k;
        params.push((format!("block{i}.weight"), uniform_init(&[cout, cin, kt, k, k], (6.0 / fan_in as f64).sqrt(), &mut rng)));
        params.push((format!("block{i}.bias"), Tensor::zeros(&[cout])));
        cin = cout;
    }
    let d = config.feature_dim();
    params.push(("head.weight".into(), uniform_init(&[d, config.num_classes], 1.0 / (d as f64).sqrt(), &mut rng)));
    params.push(("head.bias".into(), uniform_init(&[config.num_classes], 1.0 / (d as f64).sqrt(), &mut rng)));
    Ok(StudentModel { config: config.clone(), params })
}

impl StudentModel {
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Adds the parameters to `g`, learnable or frozen.
    pub fn bind(&self, g: &mut Graph, learnable: bool) -> BoundStudent {
        let params = self.params.iter().map(|(_, t)| if learnable { g.param(t.clone()) } else { g.constant(t.clone()) }).collect();
        BoundStudent { params }
    }

    fn check_batch(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 5 || shape[2] != self.config.in_channels {
            return Err(Error::ShapeMismatch { op: "student", lhs: shape.to_vec(), rhs: vec![0, 0, self.config.in_channels, 0, 0] });
        }
        self.config.check_frame(shape[3], shape[4])
    }

    /// Forward pass of a `[B][T][C][H][W]` batch.
    pub fn forward(&self, g: &mut Graph, bound: &BoundStudent, batch: Var) -> Result<Taps> {
        self.check_batch(g.value(batch).shape())?;
        let mut x = batch;
        let mut temporal = None;
        for i in 0..self.config.channels.len() {
            let y = g.conv3d(x, bound.params[2 * i], bound.params[2 * i + 1])?;
            let y = g.relu(y)?;
            x = g.avg_pool(y, 2)?;
            if i == self.config.temporal_tap {
                temporal = Some(spatial_mean(g, x)?);
            }
        }
        let per_frame = spatial_mean(g, x)?;
        let penultimate = g.mean_axis(per_frame, 1)?;
        let nb = g.value(penultimate).shape()[0];
        let head_w = bound.params[bound.params.len() - 2];
        let head_b = bound.params[bound.params.len() - 1];
        let scores = g.matmul(penultimate, head_w)?;
        let ones = g.constant(Tensor::ones(&[nb, 1]));
        let n = self.config.num_classes;
        let bias_row = g.reshape(head_b, &[1, n])?;
        let bias = g.matmul(ones, bias_row)?;
        let logits = g.add(scores, bias)?;
        Ok(Taps { temporal: temporal.expect("tap index validated"), penultimate, logits })
    }

    fn run(&self, batch: &Tensor) -> Result<(Graph, Taps)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let taps = self.forward(&mut g, &bound, x)?;
        Ok((g, taps))
    }

    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let (g, taps) = self.run(batch)?;
        Ok(g.value(taps.logits).clone())
    }

    /// Penultimate features `[B][d]`.
    pub fn features(&self, batch: &Tensor) -> Result<Tensor> {
        let (g, taps) = self.run(batch)?;
        Ok(g.value(taps.penultimate).clone())
    }

    /// Temporal features `[B][t][d]` from the tap block.
    pub fn temporal_features(&self, batch: &Tensor) -> Result<Tensor> {
        let (g, taps) = self.run(batch)?;
        Ok(g.value(taps.temporal).clone())
    }

    /// Arg-max class per video, evaluated in chunks.
    pub fn predict(&self, videos: &[Tensor], chunk: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(videos.len());
        for part in videos.chunks(chunk.max(1)) {
            let logits = self.logits(&Tensor::stack(part)?)?;
            let n = logits.shape()[1];
            out.extend(
                logits.data().chunks(n).map(|row| {
                    row.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0
                }),
            );
        }
        Ok(out)
    }

    /// Writes `params.json` plus one `VDS1` record per parameter.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for (name, t) in &self.params {
            let file = format!("{name}.vds");
            let path = dir.join(&file);
            fs::write(&path, dataio::container_record(t)?).map_err(|e| Error::io(&path, e))?;
            entries.push(ParamEntry { name: name.clone(), file, shape: t.shape().to_vec() });
        }
        let index = Checkpoint { config: self.config.clone(), params: entries };
        let path = dir.join("params.json");
        fs::write(&path, serde_json::to_string_pretty(&index)? + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Loads a checkpoint; values come back at `f32` precision.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("params.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: Checkpoint = serde_json::from_str(&text)?;
        let mut params = Vec::new();
        for entry in index.params {
            let file = dir.join(&entry.file);
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            let t = dataio::decode_container_record(&bytes, &file)?.reshape(&entry.shape)?;
            params.push((entry.name, t));
        }
        let model = StudentModel { config: index.config, params };
        let expected = init_student(&model.config, 0)?;
        let shapes_match = expected.params.len() == model.params.len()
            && expected.params.iter().zip(&model.params).all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape());
        if !shapes_match {
            return Err(Error::Format { path, reason: "parameter list does not match the recorded architecture".into() });
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: StudentConfig,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

/// `[B][T][C][H][W] -> [B][T][C]`
fn spatial_mean(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.value(x).shape().to_vec();
    let flat = g.reshape(x, &[s[0] * s[1] * s[2], s[3] * s[4]])?;
    let m = g.mean_axis(flat, 1)?;
    g.reshape(m, &[s[0], s[1], s[2]])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Stop once the best epoch loss has not improved by `min_delta` for
    /// this many epochs.
    pub patience: usize,
    pub min_delta: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub temporal_aug: bool,
    pub min_frac: f64,
    /// Frame count every video is resampled to before entering the model.
    pub frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            patience: 20,
            min_delta: 1e-4,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            temporal_aug: true,
            min_frac: 0.25,
            frames: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    /// Mean minibatch loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Accuracy on the (unaugmented) training videos after the last epoch.
    pub train_accuracy: f64,
}

/// Mini-batch SGD with momentum on softmax cross-entropy.
pub fn train_classifier(model: &mut StudentModel, set: &VideoSet, cfg: &TrainConfig, seed: u64) -> Result<TrainLog> {
    if set.is_empty() {
        return Err(Error::config("cannot train on an empty set"));
    }
    if cfg.batch_size == 0 || cfg.frames == 0 {
        return Err(Error::config("batch_size and frames must be positive"));
    }
    let videos = set.normalized(cfg.frames);
    let labels = set.labels();
    if let Some(&l) = labels.iter().find(|&&l| l >= model.config.num_classes) {
        return Err(Error::LabelMismatch(format!("label {l} but the model has {} classes", model.config.num_classes)));
    }
    let mut rng = rng::stream(&[seed, purpose::STUDENT_TRAIN]);
    let mut opt = Momentum::new(cfg.lr, cfg.momentum);
    let mut order: Vec<usize> = (0..videos.len()).collect();
    let mut epoch_loss = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Tensor> = chunk
                .iter()
                .map(|&i| {
                    if cfg.temporal_aug {
                        temporal_augment(&videos[i], sample_interval(&mut rng, cfg.min_frac))
                    } else {
                        videos[i].clone()
                    }
                })
                .collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let x = g.constant(Tensor::stack(&batch)?);
            let taps = model.forward(&mut g, &bound, x)?;
            let loss = g.cross_entropy(taps.logits, &batch_labels)?;
            g.backward(loss)?;
            total += g.value(loss).item();
            batches += 1;
            let grads: Vec<Tensor> = bound.params.iter().map(|&p| g.leaf_grad(p)).collect();
            let mut params: Vec<&mut Tensor> = model.params.iter_mut().map(|(_, t)| t).collect();
            opt.step(&mut params, &grads);
        }
        let loss = total / batches as f64;
        epoch_loss.push(loss);
        if !loss.is_finite() {
            break;
        }
        if loss < best - cfg.min_delta {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let predicted = model.predict(&videos, cfg.batch_size)?;
    let correct = predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(TrainLog { epoch_loss, train_accuracy: correct as f64 / labels.len() as f64 })
}

/// Top-1 accuracy of `model` on `set`, overall and per class.
pub fn accuracy(model: &StudentModel, set: &VideoSet, frames: usize) -> Result<(f64, Vec<f64>)> {
    let videos = set.normalized(frames);
    let predicted = model.predict(&videos, 32)?;
    let n = set.num_classes;
    let mut hits = vec![0usize; n];
    let mut counts = vec![0usize; n];
    for (p, s) in predicted.iter().zip(&set.samples) {
        counts[s.label] += 1;
        if *p == s.label {
            hits[s.label] += 1;
        }
    }
    let total = hits.iter().sum::<usize>() as f64 / set.len().max(1) as f64;
    let per_class = hits.iter().zip(&counts).map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 }).collect();
    Ok((total, per_class))
}
