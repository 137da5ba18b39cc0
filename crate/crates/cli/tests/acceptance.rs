//! Acceptance harness: prints one PASS/FAIL line per criterion.
//!
//! Criteria 1-4 and 8 are exact properties and fail the target when unmet.
//! Criteria 5-7 are directional accuracy comparisons on the toy data; they
//! are reported honestly but do not fail the target (see README).

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::Rng;
use vdistill::baselines::{coreset_random, distill_dm_pixels, feature_extractor, DmConfig};
use vdistill::dataio::{generate_moving_shapes, resample_temporal, sample_class_batch, ShapeSpec, VideoSet};
use vdistill::evalkit::{
    ablation_set, class_redundancy, evaluate_synthetic, gain_correlation, inter_sample_redundancy, per_class_gain, temporal_redundancy,
    AblationVariant, EvalConfig, EvalResult, IcNormalization,
};
use vdistill::idtd::{
    diversity_loss, fuse, init_distiller, instance_loss_and_grads, matching_loss_dm, mean_features, select_segments, total_loss,
    DistillerState, IdtdConfig, Instance, SegmentSource, TemporalInterval, Variant,
};
use vdistill::numerics::{finite_difference_gradient, relative_error, Graph, Tensor, Var};
use vdistill::rng;
use vdistill::student::{init_student, StudentConfig, StudentModel, TrainConfig};

// Pinned tolerances and budgets.
const GRAD_TOL: f64 = 1e-4;
const GRAD_CASES: u64 = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const FD_EPS: f64 = 1e-5;
/// Disagreement between step sizes `FD_EPS` and `FD_EPS / 10` that marks a
/// kink, relative to the gradient's scale.
const KINK_TOL: f64 = 1e-6;
/// At most this fraction of end-to-end coordinates may sit at kinks.
const MAX_KINK_FRACTION: f64 = 0.01;
const ORACLE_TOL: f64 = 1e-10;
const MIN_MARGIN: f64 = 0.05;

/// Directional runs. The optimizer steps on the synthetic pixels are scaled
/// up because matching gradients per pixel are around 1e-4.
const DIRECTIONAL_ITERATIONS: usize = 60;
const PIXEL_LR: f64 = 50.0;
const MODULE_LR: f64 = 0.01;
const DATA_SEED: u64 = 0;
const DISTILL_SEED: u64 = 0;
const EVAL_SEEDS: [u64; 3] = [0, 1, 2];
const FEATURE_EPOCHS: usize = 5;
const REDUNDANCY_BATCH: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Check = Result<Outcome, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn tiny_student(classes: usize) -> StudentConfig {
    StudentConfig { channels: vec![3, 4], temporal_kernels: vec![1, 3], temporal_tap: 0, ..StudentConfig::new(1, classes) }
}

fn micro_data(hw: usize, seed: u64) -> VideoSet {
    let spec = ShapeSpec {
        motions: ShapeSpec::default().motions[..2].to_vec(),
        height: hw,
        width: hw,
        object_size: 2 + (seed % 2) as usize,
        min_len: 5,
        max_len: 9,
        train_per_class: 3,
        test_per_class: 1,
        ..ShapeSpec::default()
    };
    generate_moving_shapes(&spec, seed).unwrap().0
}

// ---------------------------------------------------------------- criterion 1

fn graph_check(x: &Tensor, build: impl Fn(&mut Graph, Var) -> Var) -> f64 {
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let root = build(&mut g, xv);
    g.backward(root).unwrap();
    let analytic = g.leaf_grad(xv);
    let numeric = finite_difference_gradient(
        |t| {
            let mut g = Graph::new();
            let xv = g.param(t.clone());
            let root = build(&mut g, xv);
            g.value(root).item()
        },
        x,
        FD_EPS,
    );
    relative_error(&analytic, &numeric, 1e-9)
}

/// Scalar projection with fixed random weights.
fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let shape = g.value(y).shape().to_vec();
    let w = g.constant(Tensor::rand_uniform(&shape, -1.0, 1.0, &mut rng::stream(&[seed])));
    let p = g.mul(y, w).unwrap();
    g.sum(p).unwrap()
}

/// Learnable tensors of an instance in gradient order.
fn leaves_mut(inst: &mut Instance) -> Vec<&mut Tensor> {
    let mut out = Vec::new();
    match &mut inst.source {
        SegmentSource::Pool { pool, selectors } => {
            out.push(pool);
            for s in selectors {
                out.push(&mut s.weight);
                out.push(&mut s.bias);
            }
        }
        SegmentSource::Free { segments } => out.extend(segments.iter_mut()),
    }
    out.push(&mut inst.fusor_kernel);
    out.push(&mut inst.fusor_bias);
    out
}

/// Relative error over the coordinates where central differences at two step
/// sizes agree. Where they disagree the stencil straddles a ReLU kink and the
/// coordinate is excluded and counted.
fn kink_aware_error(analytic: &Tensor, f: impl Fn(&Tensor) -> f64, x: &Tensor) -> (f64, usize) {
    let coarse = finite_difference_gradient(&f, x, FD_EPS);
    let fine = finite_difference_gradient(&f, x, FD_EPS / 10.0);
    let scale = analytic.data().iter().chain(coarse.data()).fold(1e-9f64, |m, v| m.max(v.abs()));
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for ((&a, &c), &fi) in analytic.data().iter().zip(coarse.data()).zip(fine.data()) {
        if (c - fi).abs() > KINK_TOL * scale {
            skipped += 1;
        } else {
            worst = worst.max((a - c).abs() / scale);
        }
    }
    (worst, skipped)
}

/// End-to-end objective gradients of one micro instance, every leaf.
fn total_loss_check(case: u64, r: &mut rng::StreamRng) -> Result<(f64, usize, usize), String> {
    let k = r.random_range(1..=3);
    let t_syn = r.random_range(2..=4);
    let train = micro_data(8, case);
    let cfg = IdtdConfig {
        k,
        t_syn,
        t_real: 4 * r.random_range(1..=2),
        real_batch: 2,
        alpha1: r.random_range(0.1..1.0),
        alpha2: r.random_range(0.1..1.0),
        student: Some(tiny_student(2)),
        ..IdtdConfig::default()
    };
    let state = init_distiller(&cfg, &train, case).map_err(err)?;
    let model = init_student(&tiny_student(2), 100 + case).map_err(err)?;
    let class = (case % 2) as usize;
    let real = Tensor::stack(&sample_class_batch(&train, class, 2, cfg.t_real, r).map_err(err)?).map_err(err)?;
    let real_mean = mean_features(&model, &real).map_err(err)?;
    let s = r.random_range(0.0..0.5);
    let mu = TemporalInterval { start: s, end: r.random_range(s + 0.3..=1.0) };
    let (_, grads) = instance_loss_and_grads(state.instance(0, class), &cfg, &model, &real_mean, mu).map_err(err)?;
    // ipc 1: instance (0, n) sits at index n
    let (mut worst, mut skipped, mut total) = (0.0f64, 0, 0);
    for (leaf, analytic) in grads.iter().enumerate() {
        let value = leaves_mut(&mut state.instances[class].clone())[leaf].clone();
        let loss = |t: &Tensor| {
            let mut s: DistillerState = state.clone();
            *leaves_mut(&mut s.instances[class])[leaf] = t.clone();
            total_loss(&s, 0, class, &real, &model, mu).unwrap().total
        };
        let (e, n) = kink_aware_error(analytic, loss, &value);
        worst = worst.max(e);
        skipped += n;
        total += value.len();
    }
    Ok((worst, skipped, total))
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut r = rng::stream(&[0xAC, 1]);
    let mut worst = [0.0f64; 5];
    let (mut kinks, mut coords) = (0, 0);
    for case in 0..GRAD_CASES {
        // conv3d w.r.t. input and weight
        let xs = [r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4)];
        let ws = [r.random_range(1..=3), xs[2], [1, 3][r.random_range(0..2)], 3, 3];
        let x = Tensor::rand_uniform(&xs, -1.0, 1.0, &mut r);
        let w = Tensor::rand_uniform(&ws, -1.0, 1.0, &mut r);
        let b = Tensor::rand_uniform(&[ws[0]], -1.0, 1.0, &mut r);
        let e1 = graph_check(&x, |g, v| {
            let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
            let y = g.conv3d(v, wv, bv).unwrap();
            project(g, y, case)
        });
        let e2 = graph_check(&w, |g, v| {
            let (xv, bv) = (g.constant(x.clone()), g.constant(b.clone()));
            let y = g.conv3d(xv, v, bv).unwrap();
            project(g, y, case)
        });
        worst[0] = worst[0].max(e1).max(e2);

        // strided temporal convolution w.r.t. input and kernel
        let kt = r.random_range(1..=3);
        let stride = r.random_range(1..=3);
        let len = r.random_range(kt..=kt + 5);
        let xt = Tensor::rand_uniform(&[len, 2, 2], -1.0, 1.0, &mut r);
        let kern = Tensor::rand_uniform(&[kt], -1.0, 1.0, &mut r);
        let bias = Tensor::scalar(0.3);
        let e1 = graph_check(&xt, |g, v| {
            let (kv, bv) = (g.constant(kern.clone()), g.constant(bias.clone()));
            let y = g.temporal_conv(v, kv, bv, stride).unwrap();
            project(g, y, case)
        });
        let e2 = graph_check(&kern, |g, v| {
            let (xv, bv) = (g.constant(xt.clone()), g.constant(bias.clone()));
            let y = g.temporal_conv(xv, v, bv, stride).unwrap();
            project(g, y, case)
        });
        worst[1] = worst[1].max(e1).max(e2);

        // fractional-window resample
        let len = r.random_range(2..=7);
        let video = Tensor::rand_uniform(&[len, 2, 3], -1.0, 1.0, &mut r);
        let s = r.random_range(0.0..(len - 1) as f64 / 2.0);
        let e = r.random_range(s + 0.1..=(len - 1) as f64);
        let t_out = r.random_range(1..=9);
        worst[2] = worst[2].max(graph_check(&video, |g, v| {
            let y = g.resample(v, s, e, t_out).unwrap();
            project(g, y, case)
        }));

        // softmax cross-entropy
        let (b, n) = (r.random_range(1..=4), r.random_range(2..=5));
        let logits = Tensor::rand_uniform(&[b, n], -3.0, 3.0, &mut r);
        let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..n)).collect();
        worst[3] = worst[3].max(graph_check(&logits, |g, v| g.cross_entropy(v, &labels).unwrap()));

        // pool, selector mixing, fusor, diversity and both matching terms
        let (e, n, total) = total_loss_check(case, &mut r)?;
        worst[4] = worst[4].max(e);
        kinks += n;
        coords += total;
    }
    let elapsed = start.elapsed();
    let max = worst.iter().copied().fold(0.0, f64::max);
    Ok(outcome(
        max < GRAD_TOL && elapsed < GRAD_BUDGET && (kinks as f64) <= MAX_KINK_FRACTION * coords as f64,
        format!(
            "{GRAD_CASES} micro-shapes; max rel err conv3d {:.1e}, temporal conv {:.1e}, resample {:.1e}, cross-entropy {:.1e}, total_loss {:.1e} ({kinks} of {coords} coordinates at ReLU kinks excluded) (< {GRAD_TOL:e}); {:.1}s",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            worst[4],
            elapsed.as_secs_f64()
        ),
    ))
}

// ---------------------------------------------------------------- criterion 2

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn criterion_2() -> Check {
    let mut r = rng::stream(&[0xAC, 2]);
    let mut errs: Vec<(&str, f64)> = Vec::new();

    // select_segments and fuse on a perturbed K=8 instance
    let train = micro_data(8, 2);
    let cfg = IdtdConfig { k: 8, t_syn: 4, t_real: 8, student: Some(tiny_student(2)), selector_noise: 0.3, ..IdtdConfig::default() };
    let mut state = init_distiller(&cfg, &train, 5).map_err(err)?;
    let inst = &mut state.instances[0];
    inst.fusor_kernel = Tensor::rand_uniform(&[8], -1.0, 1.0, &mut r);
    inst.fusor_bias = Tensor::scalar(0.25);
    for s in match &mut inst.source {
        SegmentSource::Pool { selectors, .. } => selectors.iter_mut(),
        SegmentSource::Free { .. } => return Err("expected a pool".into()),
    } {
        s.bias = Tensor::rand_uniform(s.bias.shape(), -0.5, 0.5, &mut r);
    }
    let segments = select_segments(&state, 0, 0).map_err(err)?;
    let SegmentSource::Pool { pool, selectors } = &state.instances[0].source else { unreachable!() };
    let row = pool.row_len();
    let mut select_err: f64 = 0.0;
    for (seg, s) in segments.iter().zip(selectors) {
        let want = oracles::mix(pool.data(), pool.shape()[0], row, s.weight.data(), s.bias.data(), 4);
        select_err = select_err.max(max_diff(seg.data(), &want));
    }
    errs.push(("select_segments", select_err));
    let inst = state.instance(0, 0);
    let fused = fuse(&segments, &inst.fusor_kernel, inst.fusor_bias.item()).map_err(err)?;
    let cat: Vec<f64> = segments.iter().flat_map(|s| s.data().iter().copied()).collect();
    let want = oracles::temporal_conv(&cat, 8 * 4, row, inst.fusor_kernel.data(), 0.25, 8);
    errs.push(("fuse", max_diff(fused.data(), &want)));

    // resample_temporal
    let mut resample_err: f64 = 0.0;
    for _ in 0..10 {
        let (len, t_out) = (r.random_range(1..=12), r.random_range(1..=20));
        let v = Tensor::rand_uniform(&[len, 1, 2, 3], -1.0, 1.0, &mut r);
        let want = oracles::resample(v.data(), len, 6, 0.0, (len - 1) as f64, t_out);
        resample_err = resample_err.max(max_diff(resample_temporal(&v, t_out).data(), &want));
    }
    errs.push(("resample_temporal", resample_err));

    // diversity over all 28 pairs at K=8, and distribution matching
    let model = init_student(&tiny_student(2), 3).map_err(err)?;
    let segs: Vec<Tensor> = (0..8).map(|_| Tensor::rand_uniform(&[4, 1, 8, 8], 0.0, 1.0, &mut r)).collect();
    let batch = Tensor::stack(&segs.iter().map(|s| resample_temporal(s, 8)).collect::<Vec<_>>()).map_err(err)?;
    let feats = rows(&model.features(&batch).map_err(err)?);
    errs.push(("diversity_loss", (diversity_loss(&model, &segs, 8).map_err(err)? - oracles::diversity(&feats)).abs()));
    let syn = Tensor::rand_uniform(&[3, 8, 1, 8, 8], 0.0, 1.0, &mut r);
    let real = Tensor::rand_uniform(&[5, 8, 1, 8, 8], 0.0, 1.0, &mut r);
    let want = oracles::mean_match(&rows(&model.features(&syn).map_err(err)?), &rows(&model.features(&real).map_err(err)?));
    errs.push(("matching_loss_dm", (matching_loss_dm(&model, &syn, &real).map_err(err)? - want).abs()));

    // redundancy scores on random features with variance near 1
    let (mut rt_err, mut ric_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..10 {
        let (b, t, d) = (r.random_range(2..=5), r.random_range(2..=6), r.random_range(1..=4));
        let ft = Tensor::rand_uniform(&[b, t, d], -2.0, 2.0, &mut r);
        let nested: Vec<Vec<Vec<f64>>> =
            (0..b).map(|i| (0..t).map(|j| ft.data()[(i * t + j) * d..(i * t + j + 1) * d].to_vec()).collect()).collect();
        rt_err = rt_err.max((temporal_redundancy(&ft).map_err(err)? - oracles::temporal_redundancy(&nested)).abs());
        let fic = Tensor::rand_uniform(&[b, d], -3.0, 3.0, &mut r);
        let got = inter_sample_redundancy(&fic, IcNormalization::AsPrinted).map_err(err)?;
        ric_err = ric_err.max((got - oracles::inter_sample_redundancy(&rows(&fic))).abs());
    }
    errs.push(("R_t", rt_err));
    errs.push(("R_IC", ric_err));

    let pass = errs.iter().all(|(_, e)| *e < ORACLE_TOL);
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Ok(outcome(pass, format!("{detail} (< {ORACLE_TOL:e})")))
}

// ---------------------------------------------------------------- criterion 3

const PROPERTY_CASES: u32 = 1000;

fn permuted_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let row = t.row_len();
    let data = perm.iter().flat_map(|&i| t.data()[i * row..(i + 1) * row].iter().copied()).collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

fn rotation(n: usize, by: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.rotate_left((by % n as u64) as usize);
    p.swap(0, n - 1);
    p
}

fn matching(features: &Tensor, real_mean: &Tensor) -> f64 {
    let mut g = Graph::new();
    let f = g.constant(features.clone());
    let l = vdistill::idtd::matching_loss_var(&mut g, f, real_mean).unwrap();
    g.value(l).item()
}

fn run_property<S: Strategy>(name: &'static str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new_with_rng(
        ProptestConfig { cases: PROPERTY_CASES, failure_persistence: None, ..ProptestConfig::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn criterion_3() -> Check {
    let seed = any::<u64>();
    let results = [
        run_property(
            "diversity <= 0, order-free",
            (
                (1usize..=8, 1usize..=6).prop_flat_map(|(k, d)| prop::collection::vec(-3.0..3.0f64, k * d).prop_map(move |v| (k, d, v))),
                seed,
            ),
            |((k, d, v), seed)| {
                let f = Tensor::new(vec![k, d], v).unwrap();
                let div = vdistill::idtd::diversity_of_features(&f).unwrap();
                prop_assert!(div <= 1e-12);
                let again = vdistill::idtd::diversity_of_features(&permuted_rows(&f, &rotation(k, seed))).unwrap();
                prop_assert!((div - again).abs() < 1e-12);
                Ok(())
            },
        ),
        run_property(
            "diversity = 0 iff degenerate",
            (
                (2usize..=8, 2usize..=6).prop_flat_map(|(k, d)| (Just(k), Just(d), prop::collection::vec(0.1..3.0f64, d))),
                prop::collection::vec(0.5..4.0f64, 8),
                0.5..2.0f64,
            ),
            |((k, d, base), scales, bump)| {
                let aligned = Tensor::from_fn(&[k, d], |i| base[i % d] * scales[i / d]);
                prop_assert!(vdistill::idtd::diversity_of_features(&aligned).unwrap().abs() < 1e-12);
                let mut bent = aligned.clone();
                bent.data_mut()[0] += bump * base[0];
                bent.data_mut()[1] -= bump * base[1] * 0.5;
                prop_assert!(vdistill::idtd::diversity_of_features(&bent).unwrap() < 0.0);
                Ok(())
            },
        ),
        run_property("temporal_augment identity at (0, 1)", ((1usize..12, 1usize..3, 1usize..5), seed), |((t, c, hw), seed)| {
            let v = Tensor::rand_uniform(&[t, c, hw, hw], -1.0, 1.0, &mut rng::stream(&[seed]));
            prop_assert_eq!(vdistill::idtd::temporal_augment(&v, TemporalInterval::FULL), v);
            Ok(())
        }),
        run_property(
            "matching loss >= 0, order-free",
            (
                (1usize..=6, 1usize..=5).prop_flat_map(|(b, d)| {
                    (Just(b), Just(d), prop::collection::vec(-3.0..3.0f64, b * d), prop::collection::vec(-3.0..3.0f64, d))
                }),
                seed,
            ),
            |((b, d, data, real), seed)| {
                let f = Tensor::new(vec![b, d], data).unwrap();
                let real = Tensor::new(vec![d], real).unwrap();
                let l = matching(&f, &real);
                prop_assert!(l >= 0.0);
                prop_assert!((matching(&permuted_rows(&f, &rotation(b, seed)), &real) - l).abs() < 1e-10);
                Ok(())
            },
        ),
        run_property(
            "R_t, R_IC in (0, 1], order-free, guard = 1",
            ((2usize..6, 2usize..6, 1usize..4), seed, -3.0..3.0f64),
            |((b, t, d), seed, c)| {
                let mut r = rng::stream(&[seed]);
                let ft = Tensor::rand_uniform(&[b, t, d], -3.0, 3.0, &mut r);
                let fic = Tensor::rand_uniform(&[b, d], -3.0, 3.0, &mut r);
                let perm = rotation(b, seed);
                let rt = temporal_redundancy(&ft).unwrap();
                prop_assert!(rt > 0.0 && rt <= 1.0);
                prop_assert!((temporal_redundancy(&permuted_rows(&ft, &perm)).unwrap() - rt).abs() < 1e-12);
                prop_assert_eq!(temporal_redundancy(&Tensor::full(&[b, t, d], c)).unwrap(), 1.0);
                for norm in [IcNormalization::AsPrinted, IcNormalization::Symmetric] {
                    let ric = inter_sample_redundancy(&fic, norm).unwrap();
                    prop_assert!(ric > 0.0 && ric <= 1.0);
                    prop_assert!((inter_sample_redundancy(&permuted_rows(&fic, &perm), norm).unwrap() - ric).abs() < 1e-12);
                    prop_assert_eq!(inter_sample_redundancy(&Tensor::full(&[b, d], c), norm).unwrap(), 1.0);
                }
                Ok(())
            },
        ),
    ];
    let failures: Vec<String> = results.iter().filter_map(|r| r.clone().err()).collect();
    Ok(outcome(
        failures.is_empty(),
        if failures.is_empty() { format!("{} properties x {PROPERTY_CASES} cases", results.len()) } else { failures.join("; ") },
    ))
}

// ---------------------------------------------------------------- criterion 4

const DETERMINISM_CONFIG: &str = r#"{
  "spec": {
    "motions": ["translate-right", "translate-left", "rotate"],
    "shapes": ["square"],
    "height": 8, "width": 8, "channels": 1,
    "min_len": 5, "max_len": 9,
    "train_per_class": 4, "test_per_class": 2,
    "object_size": 3, "noise": 0.05
  },
  "k": 3, "t_syn": 4, "t_real": 8, "real_batch": 2, "iterations": 3, "lr": 5.0,
  "eval": {
    "max_epochs": 3, "patience": 3, "min_delta": 0.0001, "lr": 0.01, "momentum": 0.9,
    "batch_size": 4, "temporal_aug": true, "min_frac": 0.25, "frames": 8
  }
}"#;

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_4() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let p = |rel: &str| dir.path().join(rel).display().to_string();
    fs::write(p("cfg.json"), DETERMINISM_CONFIG).map_err(err)?;
    let run = |args: &[&str]| -> Result<(), String> {
        let argv = std::iter::once("vdistill".to_owned()).chain(args.iter().map(|s| s.to_string()));
        match vdistill_cli::run_cli(argv) {
            0 => Ok(()),
            code => Err(format!("`{}` exited with {code}", args.join(" "))),
        }
    };
    let cfg = p("cfg.json");
    let mut compared = Vec::new();
    for rep in ["a", "b"] {
        run(&["gen-data", "--config", &cfg, "--seed", "3", "--out", &p(&format!("data-{rep}"))])?;
    }
    compared.push(("gen-data", "data-a", "data-b"));
    let data = p("data-a");
    for method in ["idtd", "dm"] {
        for rep in ["a", "b"] {
            let out = p(&format!("{method}-{rep}"));
            run(&["distill", "--method", method, "--config", &cfg, "--data", &data, "--seed", "9", "--out", &out])?;
        }
    }
    compared.push(("distill idtd", "idtd-a", "idtd-b"));
    compared.push(("distill dm", "dm-a", "dm-b"));
    for rep in ["a", "b"] {
        let syn = p("idtd-a/synset");
        run(&["eval", "--syn", &syn, "--config", &cfg, "--data", &data, "--seeds", "0,1,2", "--out", &p(&format!("eval-{rep}"))])?;
    }
    compared.push(("eval", "eval-a", "eval-b"));
    let mut details = Vec::new();
    let mut pass = true;
    for (name, a, b) in compared {
        let (ta, tb) = (tree(&dir.path().join(a)), tree(&dir.path().join(b)));
        let same = !ta.is_empty() && ta == tb;
        pass &= same;
        details.push(format!("{name} {} ({} files)", if same { "identical" } else { "DIFFERS" }, ta.len()));
    }
    Ok(outcome(pass, details.join(", ")))
}

// ------------------------------------------------------------ criteria 5 - 8

struct Toy {
    train: VideoSet,
    test: VideoSet,
    base: IdtdConfig,
    eval: EvalConfig,
    full: Option<EvalResult>,
}

impl Toy {
    fn new() -> Result<Self, String> {
        let (train, test) = generate_moving_shapes(&ShapeSpec::default(), DATA_SEED).map_err(err)?;
        let base = IdtdConfig { iterations: DIRECTIONAL_ITERATIONS, lr: PIXEL_LR, module_lr: Some(MODULE_LR), ..IdtdConfig::default() };
        let eval = EvalConfig { train: TrainConfig { frames: base.t_real, ..TrainConfig::default() }, student: None };
        Ok(Toy { train, test, base, eval, full: None })
    }

    fn evaluate(&self, set: &VideoSet) -> Result<EvalResult, String> {
        evaluate_synthetic(set, &self.test, &self.eval, &EVAL_SEEDS).map_err(err)
    }

    fn arm(&self, variant: AblationVariant) -> Result<EvalResult, String> {
        self.evaluate(&ablation_set(&self.train, &self.base, variant, DISTILL_SEED).map_err(err)?)
    }

    fn full(&mut self) -> Result<EvalResult, String> {
        if self.full.is_none() {
            self.full = Some(self.arm(AblationVariant::Idtd(Variant::Full))?);
        }
        Ok(self.full.clone().unwrap())
    }
}

fn fmt(r: &EvalResult) -> String {
    format!("{:.3}+-{:.3}", r.mean, r.std)
}

fn criterion_5(toy: &mut Toy) -> Check {
    let idtd = toy.full()?;
    let dm_cfg = DmConfig { lr: PIXEL_LR, iterations: DIRECTIONAL_ITERATIONS, ..DmConfig::default() };
    let dm = toy.evaluate(&distill_dm_pixels(&toy.train, &dm_cfg, DISTILL_SEED).map_err(err)?.synthetic)?;
    let random = toy.evaluate(&coreset_random(&toy.train, 1, DISTILL_SEED).map_err(err)?.subset(&toy.train))?;
    let pass = idtd.mean >= dm.mean && dm.mean >= random.mean && idtd.mean - random.mean >= MIN_MARGIN;
    Ok(outcome(
        pass,
        format!(
            "IDTD {} / DM {} / Random {}; need IDTD >= DM >= Random and IDTD - Random >= {MIN_MARGIN}",
            fmt(&idtd),
            fmt(&dm),
            fmt(&random)
        ),
    ))
}

fn criterion_6(toy: &mut Toy) -> Check {
    let full = toy.full()?;
    let mut pass = true;
    let mut parts = vec![format!("full {}", fmt(&full))];
    for v in [AblationVariant::CompressAndStitch, AblationVariant::Idtd(Variant::NoPool), AblationVariant::Idtd(Variant::NoFusor)] {
        let r = toy.arm(v)?;
        pass &= full.mean >= r.mean;
        parts.push(format!("{} {}", v.tag(), fmt(&r)));
    }
    Ok(outcome(pass, parts.join(", ")))
}

fn criterion_7(toy: &mut Toy) -> Check {
    let mut results = Vec::new();
    for t in [4, 8, 16] {
        let r = if t == toy.base.t_syn { toy.full()? } else { toy.arm(AblationVariant::FrameCount(t))? };
        results.push((t, r));
    }
    let pass = results.windows(2).all(|w| w[1].1.mean >= w[0].1.mean - w[0].1.std.max(w[1].1.std));
    let parts: Vec<String> = results.iter().map(|(t, r)| format!("T_syn={t} {}", fmt(r))).collect();
    Ok(outcome(pass, format!("{}; non-decreasing within 1 std", parts.join(", "))))
}

fn criterion_8(toy: &mut Toy) -> Check {
    let full = toy.full()?;
    let stitch = toy.arm(AblationVariant::CompressAndStitch)?;
    let scfg = StudentConfig::new(1, toy.train.num_classes);
    let model: StudentModel = feature_extractor(&toy.train, &scfg, &toy.eval.train, FEATURE_EPOCHS, DISTILL_SEED).map_err(err)?;
    let scores = class_redundancy(&model, &toy.train, REDUNDANCY_BATCH, toy.base.t_real, IcNormalization::AsPrinted).map_err(err)?;
    let gain = per_class_gain(&full.per_class, &stitch.per_class, &scores).map_err(err)?;
    let rho = gain_correlation(&gain);
    let pass = gain.len() == toy.train.num_classes && gain.iter().all(|g| g.r_t.is_finite() && g.r_ic.is_finite() && g.gain.is_finite());
    let rho = rho.map_or("undefined (constant ranks)".to_owned(), |v| format!("{v:.3}"));
    Ok(outcome(pass, format!("{} rows; Spearman(R_t + R_IC, gain) = {rho}", gain.len())))
}

fn main() {
    let started = Instant::now();
    let mut toy = Toy::new();
    let mut enforced_failures = Vec::new();
    for id in 1..=8usize {
        let t = Instant::now();
        let res = match (id, toy.as_mut()) {
            (1, _) => criterion_1(),
            (2, _) => criterion_2(),
            (3, _) => criterion_3(),
            (4, _) => criterion_4(),
            (_, Err(e)) => Err(e.clone()),
            (5, Ok(toy)) => criterion_5(toy),
            (6, Ok(toy)) => criterion_6(toy),
            (7, Ok(toy)) => criterion_7(toy),
            (_, Ok(toy)) => criterion_8(toy),
        };
        let o = res.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        let enforced = !matches!(id, 5..=7);
        println!(
            "criterion {id}: {} : {} [{:.0}s{}]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64(),
            if enforced { "" } else { ", reported" }
        );
        if enforced && !o.pass {
            enforced_failures.push(id);
        }
    }
    println!("acceptance finished in {:.0}s", started.elapsed().as_secs_f64());
    if !enforced_failures.is_empty() {
        eprintln!("enforced criteria failed: {enforced_failures:?}");
        std::process::exit(1);
    }
}
