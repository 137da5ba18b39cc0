//! Brute-force reference computations used by the test suites.
//!
//! Everything here works on flat `Vec<f64>` buffers with explicit index
//! arithmetic and shares no code with the library kernels.
#![allow(dead_code)]

/// Same-padded stride-1 3D convolution by direct summation.
/// x: [B][T][Ci][H][W], w: [Co][Ci][KT][KH][KW], bias: [Co].
pub fn conv3d(x: &[f64], xs: [usize; 5], w: &[f64], ws: [usize; 5], bias: &[f64]) -> Vec<f64> {
    let [b, t, ci, h, wd] = xs;
    let [co, _, kt, kh, kw] = ws;
    let (pt, ph, pw) = ((kt / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0.0; b * t * co * h * wd];
    for bi in 0..b {
        for ti in 0..t {
            for o in 0..co {
                for y in 0..h {
                    for xq in 0..wd {
                        let mut acc = bias[o];
                        for c in 0..ci {
                            for dt in 0..kt {
                                for dy in 0..kh {
                                    for dx in 0..kw {
                                        let st = ti as isize + dt as isize - pt;
                                        let sy = y as isize + dy as isize - ph;
                                        let sx = xq as isize + dx as isize - pw;
                                        if st < 0 || sy < 0 || sx < 0 || st >= t as isize || sy >= h as isize || sx >= wd as isize {
                                            continue;
                                        }
                                        let xi = (((bi * t + st as usize) * ci + c) * h + sy as usize) * wd + sx as usize;
                                        let wi = (((o * ci + c) * kt + dt) * kh + dy) * kw + dx;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        out[(((bi * t + ti) * co + o) * h + y) * wd + xq] = acc;
                    }
                }
            }
        }
    }
    out
}

/// Strided valid 1-D convolution along the leading axis; `row` trailing
/// elements per step.
pub fn temporal_conv(x: &[f64], len: usize, row: usize, kernel: &[f64], bias: f64, stride: usize) -> Vec<f64> {
    let out_len = (len - kernel.len()) / stride + 1;
    let mut out = vec![0.0; out_len * row];
    for t in 0..out_len {
        for p in 0..row {
            let mut acc = bias;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * x[(t * stride + j) * row + p];
            }
            out[t * row + p] = acc;
        }
    }
    out
}

/// Piecewise-linear interpolation of samples `ys` (at integer positions) at
/// real position `pos`.
pub fn lerp_at(ys: &[f64], pos: f64) -> f64 {
    if ys.len() == 1 {
        return ys[0];
    }
    let pos = pos.clamp(0.0, (ys.len() - 1) as f64);
    let i = (pos.floor() as usize).min(ys.len() - 2);
    let f = pos - i as f64;
    ys[i] + f * (ys[i + 1] - ys[i])
}

/// Per-pixel 1-D interpolation of a `[len][row]` sequence onto `t_out` evenly
/// spaced positions spanning `[start, end]` frames.
pub fn resample(x: &[f64], len: usize, row: usize, start: f64, end: f64, t_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; t_out * row];
    for p in 0..row {
        let ys: Vec<f64> = (0..len).map(|t| x[t * row + p]).collect();
        for t in 0..t_out {
            let pos = if t_out == 1 { start } else { start + (end - start) * (t as f64) / ((t_out - 1) as f64) };
            out[t * row + p] = lerp_at(&ys, pos);
        }
    }
    out
}

/// `seg[t][p] = sum_j mix[t][j] * pool[j][p] + bias[t]`.
pub fn mix(pool: &[f64], t_pool: usize, row: usize, mix: &[f64], bias: &[f64], t_seg: usize) -> Vec<f64> {
    let mut out = vec![0.0; t_seg * row];
    for t in 0..t_seg {
        for p in 0..row {
            let mut acc = bias[t];
            for j in 0..t_pool {
                acc += mix[t * t_pool + j] * pool[j * row + p];
            }
            out[t * row + p] = acc;
        }
    }
    out
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = (v.iter().map(|a| a * a).sum::<f64>() + 1e-12).sqrt();
    v.iter().map(|a| a / n).collect()
}

/// Negated mean over all unordered pairs of squared distances between
/// L2-normalized feature rows.
pub fn diversity(features: &[Vec<f64>]) -> f64 {
    let k = features.len();
    if k < 2 {
        return 0.0;
    }
    let normed: Vec<Vec<f64>> = features.iter().map(|f| normalize(f)).collect();
    let mut total = 0.0;
    let mut pairs = 0;
    for a in 0..k {
        for b in (a + 1)..k {
            total += normed[a].iter().zip(&normed[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            pairs += 1;
        }
    }
    -total / pairs as f64
}

/// Squared distance between the mean rows of two feature matrices.
pub fn mean_match(syn: &[Vec<f64>], real: &[Vec<f64>]) -> f64 {
    let d = syn[0].len();
    let mut acc = 0.0;
    for j in 0..d {
        let ms = syn.iter().map(|r| r[j]).sum::<f64>() / syn.len() as f64;
        let mr = real.iter().map(|r| r[j]).sum::<f64>() / real.len() as f64;
        acc += (ms - mr) * (ms - mr);
    }
    acc
}

fn pop_var(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

fn tanh_recip(v: f64) -> f64 {
    if v == 0.0 {
        1.0
    } else {
        (1.0 / v).tanh()
    }
}

/// Temporal redundancy of features `f[b][t][d]`.
pub fn temporal_redundancy(f: &[Vec<Vec<f64>>]) -> f64 {
    let mut total = 0.0;
    for sample in f {
        let d = sample[0].len();
        let mut per_dim = 0.0;
        for j in 0..d {
            let series: Vec<f64> = sample.iter().map(|frame| frame[j]).collect();
            per_dim += pop_var(&series);
        }
        total += per_dim / d as f64;
    }
    tanh_recip(total / f.len() as f64)
}

/// Inter-sample redundancy of features `f[b][d]`, with the 1/B factor applied
/// to the variance as printed.
pub fn inter_sample_redundancy(f: &[Vec<f64>]) -> f64 {
    let d = f[0].len();
    let mut per_dim = 0.0;
    for j in 0..d {
        let col: Vec<f64> = f.iter().map(|r| r[j]).collect();
        per_dim += pop_var(&col);
    }
    tanh_recip(per_dim / d as f64 / f.len() as f64)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_row(rows: &[&Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect()
}

/// Greedy herding recomputed from scratch at every step.
pub fn herding(features: &[Vec<f64>], m: usize) -> Vec<usize> {
    let all: Vec<&Vec<f64>> = features.iter().collect();
    let target = mean_row(&all);
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < m {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..features.len() {
            if chosen.contains(&i) {
                continue;
            }
            let mut rows: Vec<&Vec<f64>> = chosen.iter().map(|&c| &features[c]).collect();
            rows.push(&features[i]);
            let d = dist(&target, &mean_row(&rows));
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        chosen.push(best.unwrap().1);
    }
    chosen
}

/// Largest distance from any point to its nearest selected center.
pub fn covering_radius(features: &[Vec<f64>], centers: &[usize]) -> f64 {
    features.iter().map(|f| centers.iter().map(|&c| dist(f, &features[c])).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
}

/// Mean of `e - s` for `(s, e)` uniform on `0 <= s < e <= 1` conditioned on
/// `e - s >= a`: the gap has density `2(1 - d)` on the triangle.
pub fn truncated_gap_moments(a: f64) -> (f64, f64) {
    let mass = (1.0 - a) * (1.0 - a);
    let m1 = (1.0 / 3.0 - a * a + 2.0 * a * a * a / 3.0) / mass;
    let m2 = 2.0 * (1.0 / 12.0 - a.powi(3) / 3.0 + a.powi(4) / 4.0) / mass;
    (m1, m2 - m1 * m1)
}
