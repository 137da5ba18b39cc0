//! Video set distillation through a shared feature pool, diversity-driven
//! segment selectors and a learned temporal fusor.
//!
//! Each synthetic video `(m, n)` owns a pool `p` of `T_pool` frames. `K`
//! selectors mix pool frames linearly into segments of `T_seg = T_syn`
//! frames, a stride-`K` temporal convolution over the concatenated segments
//! fuses them back into `T_syn` frames. Training matches mean student
//! features of the segments and of an augmented fused video against a real
//! batch of the same class, while pushing segment features apart.

pub mod augment;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use augment::{sample_interval, temporal_augment, temporal_augment_var, TemporalInterval};

use crate::dataio::{self, quantize_f32, Split, VideoSample, VideoSet};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Momentum, Tensor, Var};
use crate::rng::{self, purpose, StreamRng};
use crate::student::{init_student, BoundStudent, StudentConfig, StudentModel};

/// Structural and objective variants used by the ablation harness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Pool, selectors, fusor and all three loss terms.
    #[default]
    Full,
    /// Segments are free tensors initialized from `K` real videos.
    NoPool,
    /// Segments are stitched by a fixed stride-`K` subsampling.
    NoFusor,
    /// Only the matching loss on the fused, augmented video.
    FusorLossOnly,
    /// Fused-video matching plus diversity.
    PlusDiversity,
    /// Fused-video matching plus segment matching.
    PlusSelectorMatching,
}

impl Variant {
    /// Enabled terms: (segment matching, diversity, fused-video matching).
    pub fn terms(self) -> (bool, bool, bool) {
        match self {
            Variant::Full | Variant::NoPool | Variant::NoFusor => (true, true, true),
            Variant::FusorLossOnly => (false, false, true),
            Variant::PlusDiversity => (false, true, true),
            Variant::PlusSelectorMatching => (true, false, true),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdtdConfig {
    /// Synthetic videos per class (`M`).
    pub ipc: usize,
    /// Segments per video.
    pub k: usize,
    /// Weight of the diversity term.
    pub alpha1: f64,
    /// Weight of the fused-video matching term.
    pub alpha2: f64,
    /// Step size of the pixel variables (pool, or free segments).
    pub lr: f64,
    /// Step size of the selectors and fusor; `None` means `lr`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub module_lr: Option<f64>,
    pub momentum: f64,
    pub iterations: usize,
    /// Frames per synthetic video (and per segment).
    pub t_syn: usize,
    /// Pool frames; `None` means `2 * t_syn`.
    pub t_pool: Option<usize>,
    /// Frames every video is resampled to before entering the student.
    pub t_real: usize,
    /// Real videos per class and iteration.
    pub real_batch: usize,
    pub min_frac: f64,
    pub pool_std: f64,
    pub selector_noise: f64,
    pub variant: Variant,
    /// Student architecture; `None` uses the default for the data shape.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub student: Option<StudentConfig>,
}

impl Default for IdtdConfig {
    fn default() -> Self {
        IdtdConfig {
            ipc: 1,
            k: 8,
            alpha1: 0.05,
            alpha2: 1e-4,
            lr: 0.01,
            module_lr: None,
            momentum: 0.5,
            iterations: 500,
            t_syn: 8,
            t_pool: None,
            t_real: 16,
            real_batch: 16,
            min_frac: 0.25,
            pool_std: 0.1,
            selector_noise: 0.01,
            variant: Variant::Full,
            student: None,
        }
    }
}

impl IdtdConfig {
    pub fn pool_len(&self) -> usize {
        self.t_pool.unwrap_or(2 * self.t_syn)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(format!("idtd: {m}")));
        for (name, v) in [("ipc", self.ipc), ("k", self.k), ("t_syn", self.t_syn), ("t_real", self.t_real), ("real_batch", self.real_batch)]
        {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.pool_len() < self.t_syn {
            return fail(format!("t_pool {} is shorter than t_syn {}", self.pool_len(), self.t_syn));
        }
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("lr", self.lr),
            ("module_lr", self.module_lr.unwrap_or(0.0)),
            ("momentum", self.momentum),
            ("pool_std", self.pool_std),
            ("selector_noise", self.selector_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and non-negative"));
            }
        }
        if !(self.min_frac > 0.0 && self.min_frac <= 1.0) {
            return fail("min_frac must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn module_lr(&self) -> f64 {
        self.module_lr.unwrap_or(self.lr)
    }

    /// Student used for matching on a set with `channels` and `classes`.
    pub fn student_config(&self, channels: usize, classes: usize) -> StudentConfig {
        self.student.clone().unwrap_or_else(|| StudentConfig::new(channels, classes))
    }
}

/// Linear temporal mix `segment[t] = sum_j weight[t][j] * pool[j] + bias[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Selector {
    /// `[T_seg][T_pool]`
    pub weight: Tensor,
    /// `[T_seg]`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SegmentSource {
    Pool {
        pool: Tensor,
        selectors: Vec<Selector>,
    },
    /// Segments optimized directly.
    Free {
        segments: Vec<Tensor>,
    },
}

/// Learnable variables of one synthetic video.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub class: usize,
    pub source: SegmentSource,
    /// `[K]`
    pub fusor_kernel: Tensor,
    /// `[1]`
    pub fusor_bias: Tensor,
    pub fusor_learnable: bool,
    pub optimizer: Momentum,
}

impl Instance {
    /// Learnable tensors in a fixed order.
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        match &mut self.source {
            SegmentSource::Pool { pool, selectors } => {
                out.push(pool);
                for s in selectors {
                    out.push(&mut s.weight);
                    out.push(&mut s.bias);
                }
            }
            SegmentSource::Free { segments } => out.extend(segments.iter_mut()),
        }
        if self.fusor_learnable {
            out.push(&mut self.fusor_kernel);
            out.push(&mut self.fusor_bias);
        }
        out
    }

    /// Per-parameter step size, aligned with `params_mut`.
    fn rates(&self, cfg: &IdtdConfig) -> Vec<f64> {
        let (pixel, module) = (cfg.lr, cfg.module_lr());
        let mut out = Vec::new();
        match &self.source {
            SegmentSource::Pool { selectors, .. } => {
                out.push(pixel);
                out.extend(std::iter::repeat_n(module, 2 * selectors.len()));
            }
            SegmentSource::Free { segments } => out.extend(std::iter::repeat_n(pixel, segments.len())),
        }
        if self.fusor_learnable {
            out.extend([module, module]);
        }
        out
    }

    /// Diverse segments, each `[T_seg][C][H][W]`.
    pub fn segments(&self) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let built = self.build(&mut g, false)?;
        Ok(built.segments.iter().map(|&s| g.value(s).clone()).collect())
    }

    /// Fused video `[T_syn][C][H][W]`, unclamped.
    pub fn video(&self) -> Result<Tensor> {
        let mut g = Graph::new();
        let built = self.build(&mut g, false)?;
        Ok(g.value(built.video).clone())
    }

    /// Adds the instance to `g`; `learnable` marks its trainable leaves.
    fn build(&self, g: &mut Graph, learnable: bool) -> Result<Built> {
        let leaf = |g: &mut Graph, t: &Tensor, trainable: bool| {
            if learnable && trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let mut leaves = Vec::new();
        let mut segments = Vec::new();
        match &self.source {
            SegmentSource::Pool { pool, selectors } => {
                let p = leaf(g, pool, true);
                leaves.push(p);
                let fs = pool.shape().to_vec();
                let (tp, row) = (fs[0], pool.row_len());
                let flat = g.reshape(p, &[tp, row])?;
                let ones = g.constant(Tensor::ones(&[1, row]));
                for s in selectors {
                    let (w, b) = (leaf(g, &s.weight, true), leaf(g, &s.bias, true));
                    leaves.extend([w, b]);
                    let t_seg = s.weight.shape()[0];
                    let mixed = g.matmul(w, flat)?;
                    let bcol = g.reshape(b, &[t_seg, 1])?;
                    let bias = g.matmul(bcol, ones)?;
                    let seg = g.add(mixed, bias)?;
                    let mut shape = fs.clone();
                    shape[0] = t_seg;
                    segments.push(g.reshape(seg, &shape)?);
                }
            }
            SegmentSource::Free { segments: free } => {
                for s in free {
                    let v = leaf(g, s, true);
                    leaves.push(v);
                    segments.push(v);
                }
            }
        }
        let kernel = leaf(g, &self.fusor_kernel, self.fusor_learnable);
        let bias = leaf(g, &self.fusor_bias, self.fusor_learnable);
        if self.fusor_learnable {
            leaves.extend([kernel, bias]);
        }
        let video = fuse_var(g, &segments, kernel, bias)?;
        Ok(Built { leaves, segments, video })
    }
}

struct Built {
    leaves: Vec<Var>,
    segments: Vec<Var>,
    video: Var,
}

/// All learnable variables plus the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillerState {
    pub config: IdtdConfig,
    pub num_classes: usize,
    /// `[C, H, W]` of every frame.
    pub frame: [usize; 3],
    /// Instance `(m, n)` lives at `n * ipc + m`.
    pub instances: Vec<Instance>,
}

impl DistillerState {
    pub fn instance(&self, m: usize, n: usize) -> &Instance {
        &self.instances[n * self.config.ipc + m]
    }
}

/// Frame offset of selector `k` at initialization.
pub fn selector_offset(k: usize, num_selectors: usize, t_pool: usize, t_seg: usize) -> usize {
    if num_selectors <= 1 {
        return 0;
    }
    let span = (t_pool - t_seg) as f64;
    (k as f64 * span / (num_selectors - 1) as f64).round() as usize
}

/// Fresh state. Pools are `N(0, pool_std^2)`, selector `k` starts as the
/// identity window at [`selector_offset`] plus `N(0, selector_noise^2)`, and
/// the fusor averages each group of `K` concatenated frames. The `no-pool`
/// variant draws its segments from `K` real videos of the class instead.
pub fn init_distiller(config: &IdtdConfig, train: &VideoSet, seed: u64) -> Result<DistillerState> {
    config.validate()?;
    let frame = train.frame_shape().ok_or_else(|| Error::config("cannot distill an empty training set"))?;
    let (k, t_seg, t_pool) = (config.k, config.t_syn, config.pool_len());
    let mut instances = Vec::with_capacity(config.ipc * train.num_classes);
    for n in 0..train.num_classes {
        for m in 0..config.ipc {
            let mut r = rng::stream(&[seed, purpose::DISTILL_INIT, n as u64, m as u64]);
            let source = match config.variant {
                Variant::NoPool => {
                    let picks = dataio::sample_class_indices(train, n, k, &mut r)?;
                    SegmentSource::Free {
                        segments: picks.into_iter().map(|i| dataio::resample_temporal(&train.samples[i].video, t_seg)).collect(),
                    }
                }
                _ => {
                    let shape = [t_pool, frame[0], frame[1], frame[2]];
                    let pool = Tensor::randn(&shape, config.pool_std, &mut r);
                    let selectors = (0..k)
                        .map(|j| {
                            let off = selector_offset(j, k, t_pool, t_seg);
                            let mut weight = Tensor::randn(&[t_seg, t_pool], config.selector_noise, &mut r);
                            for t in 0..t_seg {
                                weight.data_mut()[t * t_pool + off + t] += 1.0;
                            }
                            Selector { weight, bias: Tensor::zeros(&[t_seg]) }
                        })
                        .collect();
                    SegmentSource::Pool { pool, selectors }
                }
            };
            let (fusor_kernel, fusor_learnable) = if config.variant == Variant::NoFusor {
                (Tensor::from_fn(&[k], |j| if j == 0 { 1.0 } else { 0.0 }), false)
            } else {
                (Tensor::full(&[k], 1.0 / k as f64), true)
            };
            instances.push(Instance {
                class: n,
                source,
                fusor_kernel,
                fusor_bias: Tensor::scalar(0.0),
                fusor_learnable,
                optimizer: Momentum::new(config.lr, config.momentum),
            });
        }
    }
    Ok(DistillerState { config: config.clone(), num_classes: train.num_classes, frame, instances })
}

/// Segments of instance `(m, n)`.
pub fn select_segments(state: &DistillerState, m: usize, n: usize) -> Result<Vec<Tensor>> {
    state.instance(m, n).segments()
}

/// Concatenates segments along time and applies a stride-`K` temporal
/// convolution with a kernel of length `K` shared over all pixels.
pub fn fuse_var(g: &mut Graph, segments: &[Var], kernel: Var, bias: Var) -> Result<Var> {
    let k = g.value(kernel).len();
    if segments.len() != k {
        return Err(Error::config(format!("fusor expects {k} segments, got {}", segments.len())));
    }
    let cat = g.concat(segments)?;
    g.temporal_conv(cat, kernel, bias, k)
}

/// Tensor form of [`fuse_var`].
pub fn fuse(segments: &[Tensor], kernel: &Tensor, bias: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let segs: Vec<Var> = segments.iter().map(|s| g.constant(s.clone())).collect();
    let (kv, bv) = (g.constant(kernel.clone()), g.constant(Tensor::scalar(bias)));
    let out = fuse_var(&mut g, &segs, kv, bv)?;
    Ok(g.value(out).clone())
}

/// Stacks videos `[T][C][H][W]` into a student batch, resampling each to
/// `t_real` frames inside the graph.
pub fn student_batch(g: &mut Graph, videos: &[Var], t_real: usize) -> Result<Var> {
    let mut parts = Vec::with_capacity(videos.len());
    for &v in videos {
        let len = g.value(v).shape()[0];
        parts.push(g.resample(v, 0.0, (len - 1) as f64, t_real)?);
    }
    let cat = g.concat(&parts)?;
    let mut shape = g.value(cat).shape().to_vec();
    shape[0] = t_real;
    shape.insert(0, videos.len());
    g.reshape(cat, &shape)
}

/// Mean penultimate feature of a real batch `[B][T][C][H][W]`.
pub fn mean_features(model: &StudentModel, batch: &Tensor) -> Result<Tensor> {
    let f = model.features(batch)?;
    let b = f.shape()[0] as f64;
    let d = f.shape()[1];
    Ok(Tensor::from_fn(&[d], |j| (0..f.shape()[0]).map(|i| f.row(i)[j]).sum::<f64>() / b))
}

/// `|| mean_b phi(syn) - real_mean ||^2` given the syn batch features `[B][d]`.
pub fn matching_loss_var(g: &mut Graph, features: Var, real_mean: &Tensor) -> Result<Var> {
    let m = g.mean_axis(features, 0)?;
    let r = g.constant(real_mean.clone());
    let diff = g.sub(m, r)?;
    g.sq_norm(diff)
}

/// Distribution-matching loss between two `[B][T][C][H][W]` batches.
pub fn matching_loss_dm(model: &StudentModel, syn_batch: &Tensor, real_batch: &Tensor) -> Result<f64> {
    let syn = mean_features(model, syn_batch)?;
    let real = mean_features(model, real_batch)?;
    Ok(syn.sub(&real)?.sq_norm())
}

/// Negated mean pairwise squared distance between L2-normalized rows of
/// `features` (`[K][d]`), via `sum_{k<q} |a_k - a_q|^2 = K sum |a_k|^2 - |sum a_k|^2`.
pub fn diversity_var(g: &mut Graph, features: Var) -> Result<Option<Var>> {
    let k = g.value(features).shape()[0];
    if k < 2 {
        return Ok(None);
    }
    let a = g.l2_normalize_rows(features)?;
    let norms = g.sq_norm(a)?;
    let norms = g.scale(norms, k as f64)?;
    let mean = g.mean_axis(a, 0)?;
    let total = g.scale(mean, k as f64)?;
    let total = g.sq_norm(total)?;
    let pairs = g.sub(norms, total)?;
    Ok(Some(g.scale(pairs, -2.0 / (k * (k - 1)) as f64)?))
}

/// Diversity loss of a feature matrix `[K][d]`; zero for `K < 2`.
pub fn diversity_of_features(features: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let f = g.constant(features.clone());
    Ok(match diversity_var(&mut g, f)? {
        Some(v) => g.value(v).item(),
        None => 0.0,
    })
}

/// Diversity loss of segments under the student's penultimate features.
pub fn diversity_loss(model: &StudentModel, segments: &[Tensor], t_real: usize) -> Result<f64> {
    let batch = Tensor::stack(&segments.iter().map(|s| dataio::resample_temporal(s, t_real)).collect::<Vec<_>>())?;
    diversity_of_features(&model.features(&batch)?)
}

/// Loss components of one instance update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub match_segments: f64,
    pub diversity: f64,
    pub match_video: f64,
    pub total: f64,
}

/// Builds the objective of `inst` on `g`, returning its parts and total.
fn instance_objective(
    g: &mut Graph,
    inst: &Instance,
    cfg: &IdtdConfig,
    model: &StudentModel,
    bound: &BoundStudent,
    real_mean: &Tensor,
    mu: TemporalInterval,
) -> Result<(Built, [Option<Var>; 3], Var)> {
    let built = inst.build(g, true)?;
    let (seg_on, div_on, vid_on) = cfg.variant.terms();
    let mut terms = [None, None, None];
    if seg_on || div_on {
        let batch = student_batch(g, &built.segments, cfg.t_real)?;
        let feats = model.forward(g, bound, batch)?.penultimate;
        if seg_on {
            terms[0] = Some(matching_loss_var(g, feats, real_mean)?);
        }
        if div_on {
            terms[1] = diversity_var(g, feats)?;
        }
    }
    if vid_on {
        let aug = temporal_augment_var(g, built.video, mu)?;
        let batch = student_batch(g, &[aug], cfg.t_real)?;
        let feats = model.forward(g, bound, batch)?.penultimate;
        terms[2] = Some(matching_loss_var(g, feats, real_mean)?);
    }
    let mut total: Option<Var> = None;
    for (term, w) in terms.iter().zip([1.0, cfg.alpha1, cfg.alpha2]) {
        if let Some(t) = *term {
            let s = g.scale(t, w)?;
            total = Some(match total {
                Some(acc) => g.add(acc, s)?,
                None => s,
            });
        }
    }
    let total = match total {
        Some(t) => t,
        // only reachable with the diversity term alone and K = 1
        None => {
            let z = g.constant(Tensor::scalar(0.0));
            g.scale(z, 1.0)?
        }
    };
    Ok((built, terms, total))
}

fn parts_of(g: &Graph, terms: &[Option<Var>; 3], total: Var) -> LossParts {
    let val = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
    LossParts { match_segments: val(terms[0]), diversity: val(terms[1]), match_video: val(terms[2]), total: g.value(total).item() }
}

/// Loss and gradients (in learnable-parameter order) of one instance.
pub fn instance_loss_and_grads(
    inst: &Instance,
    cfg: &IdtdConfig,
    model: &StudentModel,
    real_mean: &Tensor,
    mu: TemporalInterval,
) -> Result<(LossParts, Vec<Tensor>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let (built, terms, total) = instance_objective(&mut g, inst, cfg, model, &bound, real_mean, mu)?;
    g.backward(total)?;
    let grads = built.leaves.iter().map(|&v| g.leaf_grad(v)).collect();
    Ok((parts_of(&g, &terms, total), grads))
}

/// Total objective of instance `(m, n)` against a real batch
/// `[B][T_real][C][H][W]` and a fixed augmentation window.
pub fn total_loss(
    state: &DistillerState,
    m: usize,
    n: usize,
    real_batch: &Tensor,
    model: &StudentModel,
    mu: TemporalInterval,
) -> Result<LossParts> {
    let real_mean = mean_features(model, real_batch)?;
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let (_, terms, total) = instance_objective(&mut g, state.instance(m, n), &state.config, model, &bound, &real_mean, mu)?;
    Ok(parts_of(&g, &terms, total))
}

/// One SGD-with-momentum step on `inst`.
pub fn instance_step(
    inst: &mut Instance,
    cfg: &IdtdConfig,
    model: &StudentModel,
    real_mean: &Tensor,
    mu: TemporalInterval,
) -> Result<LossParts> {
    let (parts, grads) = instance_loss_and_grads(inst, cfg, model, real_mean, mu)?;
    let mut opt = std::mem::replace(&mut inst.optimizer, Momentum::new(0.0, 0.0));
    let rates = inst.rates(cfg);
    opt.step_with_rates(&mut inst.params_mut(), &grads, &rates);
    inst.optimizer = opt;
    Ok(parts)
}

/// One row of the distillation loss log (means over the class's instances).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    pub class: usize,
    #[serde(flatten)]
    pub parts: LossParts,
}

/// Writes the loss log as CSV.
pub fn write_loss_log(path: impl AsRef<Path>, rows: &[LossRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "class", "L_M(D)", "L_div", "L_M(V')", "total"])?;
    for r in rows {
        let p = r.parts;
        w.write_record([
            r.iteration.to_string(),
            r.class.to_string(),
            format!("{:e}", p.match_segments),
            format!("{:e}", p.diversity),
            format!("{:e}", p.match_video),
            format!("{:e}", p.total),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Output of a distillation run.
#[derive(Clone, Debug)]
pub struct Distilled {
    pub synthetic: VideoSet,
    pub log: Vec<LossRow>,
    pub state: DistillerState,
}

/// Frozen student for outer iteration `it`, shared by every class.
pub fn iteration_student(config: &StudentConfig, seed: u64, it: usize) -> Result<StudentModel> {
    init_student(config, rng::derive_seed(&[seed, purpose::DISTILL_STEP, it as u64]))
}

/// Per-class stream of iteration `it` (real batches, augmentation windows).
pub fn class_stream(seed: u64, it: usize, class: usize) -> StreamRng {
    rng::stream(&[seed, purpose::DISTILL_STEP, it as u64, class as u64])
}

pub(crate) fn check_train(set: &VideoSet) -> Result<()> {
    if set.is_empty() {
        return Err(Error::config("cannot distill an empty training set"));
    }
    set.validate()
}

/// Runs the full optimization loop and exports the synthetic set.
pub fn distill(train: &VideoSet, config: &IdtdConfig, seed: u64) -> Result<Distilled> {
    check_train(train)?;
    let mut state = init_distiller(config, train, seed)?;
    let scfg = config.student_config(state.frame[0], train.num_classes);
    scfg.validate()?;
    scfg.check_frame(state.frame[1], state.frame[2])?;
    let mut log = Vec::with_capacity(config.iterations * train.num_classes);
    for it in 0..config.iterations {
        let model = iteration_student(&scfg, seed, it)?;
        // classes are independent given the student and their own streams
        let rows: Vec<LossRow> = state
            .instances
            .par_chunks_mut(config.ipc)
            .enumerate()
            .map(|(n, insts)| -> Result<LossRow> {
                let mut r = class_stream(seed, it, n);
                let real = Tensor::stack(&dataio::sample_class_batch(train, n, config.real_batch, config.t_real, &mut r)?)?;
                let real_mean = mean_features(&model, &real)?;
                let mut acc = LossParts::default();
                for inst in insts.iter_mut() {
                    let mu = sample_interval(&mut r, config.min_frac);
                    let p = instance_step(inst, config, &model, &real_mean, mu)?;
                    if !p.total.is_finite() || inst.params_mut().iter().any(|t| !t.is_finite()) {
                        return Err(Error::Diverged { iteration: it, class: n });
                    }
                    acc.match_segments += p.match_segments;
                    acc.diversity += p.diversity;
                    acc.match_video += p.match_video;
                    acc.total += p.total;
                }
                let m = insts.len() as f64;
                Ok(LossRow {
                    iteration: it,
                    class: n,
                    parts: LossParts {
                        match_segments: acc.match_segments / m,
                        diversity: acc.diversity / m,
                        match_video: acc.match_video / m,
                        total: acc.total / m,
                    },
                })
            })
            .collect::<Result<_>>()?;
        log.extend(rows);
    }
    let synthetic = synthesize(&state, seed)?;
    Ok(Distilled { synthetic, log, state })
}

/// Clamps to `[0, 1]` and narrows to `f32` precision, as stored on disk.
pub fn export_video(video: &Tensor) -> Tensor {
    let mut v = video.clamp(0.0, 1.0);
    quantize_f32(&mut v);
    v
}

/// Fuses every instance without augmentation and exports the set, ordered
/// by class then instance.
pub fn synthesize(state: &DistillerState, seed: u64) -> Result<VideoSet> {
    let samples = state
        .instances
        .par_iter()
        .map(|inst| -> Result<VideoSample> {
            let video = export_video(&inst.video()?);
            Ok(VideoSample { native_length: video.shape()[0], video, label: inst.class })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VideoSet { samples, num_classes: state.num_classes, split: Split::Synthetic, seed })
}
