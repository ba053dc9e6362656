//! Independent reference implementations shared by the integration and
//! acceptance suites. Everything here is written as plain loops over `f64`
//! without touching the library kernels.
#![allow(dead_code)]

use overseg::eval::{EvalConfig, Outcome};
use overseg::nn::Tensor;
use overseg::rng::Xoshiro256;

pub fn random_vec(rng: &mut Xoshiro256, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng.next_f64()).collect()
}

pub fn random_tensor(rng: &mut Xoshiro256, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, random_vec(rng, n, -1.0, 1.0)).unwrap()
}

/// Splits `[C,H,W]` or `[C,N,H,W]` into (C, N, H, W).
pub fn dims(shape: &[usize]) -> (usize, usize, usize, usize) {
    match *shape {
        [c, h, w] => (c, 1, h, w),
        [c, n, h, w] => (c, n, h, w),
        _ => panic!("unexpected shape {shape:?}"),
    }
}

/// Direct cross-correlation with zero padding (k−1)/2.
pub fn conv_ref(input: &[f64], in_shape: &[usize], kernel: &[f64], c_out: usize, k: usize, bias: &[f64]) -> Vec<f64> {
    let (c_in, n, h, w) = dims(in_shape);
    let p = (k as isize - 1) / 2;
    let mut out = vec![0.0; c_out * n * h * w];
    for o in 0..c_out {
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o];
                    for c in 0..c_in {
                        for i in 0..k {
                            for j in 0..k {
                                let yy = y as isize + i as isize - p;
                                let xx = x as isize + j as isize - p;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let v = input[((c * n + b) * h + yy as usize) * w + xx as usize];
                                acc += v * kernel[((o * c_in + c) * k + i) * k + j];
                            }
                        }
                    }
                    out[((o * n + b) * h + y) * w + x] = acc;
                }
            }
        }
    }
    out
}

/// 2×2 max pooling by scanning each block; returns values and the first
/// row-major winning flat index.
pub fn maxpool_ref(input: &[f64], shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let (c, n, h, w) = dims(shape);
    let (oh, ow) = (h / 2, w / 2);
    let mut vals = Vec::new();
    let mut idx = Vec::new();
    for plane in 0..c * n {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = (f64::NEG_INFINITY, 0);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = plane * h * w + (2 * y + dy) * w + 2 * x + dx;
                        if input[i] > best.0 {
                            best = (input[i], i);
                        }
                    }
                }
                vals.push(best.0);
                idx.push(best.1);
            }
        }
    }
    (vals, idx)
}

pub fn upsample_ref(input: &[f64], shape: &[usize]) -> Vec<f64> {
    let (c, n, h, w) = dims(shape);
    let mut out = vec![0.0; c * n * 4 * h * w];
    for plane in 0..c * n {
        for y in 0..2 * h {
            for x in 0..2 * w {
                out[plane * 4 * h * w + y * 2 * w + x] = input[plane * h * w + (y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// |a − b| / max(|a|, |b|, floor). The floor keeps gradients that are zero
/// up to round-off from producing meaningless ratios.
pub fn rel_err(a: f64, b: f64) -> f64 {
    const FLOOR: f64 = 1e-8;
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(x: &[f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// The outcome rules evaluated literally, one predicate per rule, using
/// class bitsets.
pub fn classify_reference(fluxes: &[f32], truth: &[usize], cfg: &EvalConfig) -> Outcome {
    let t: u32 = truth.iter().map(|&c| 1u32 << c).sum();
    let d: u32 = (0..fluxes.len()).filter(|&c| fluxes[c] >= cfg.detect_threshold).map(|c| 1u32 << c).sum();
    let mut r = 0.0f32;
    for (c, &f) in fluxes.iter().enumerate() {
        if t & (1 << c) == 0 && f > r {
            r = f;
        }
    }
    let (nd, nt) = (d.count_ones(), t.count_ones());
    let rule1 = d == t && r < cfg.noise_threshold;
    let rule2 = d == t;
    let rule3 = nd == nt && d != t;
    let superset = d & t == t && d != t;
    let rule4 = superset || (nd != nt && r >= cfg.detect_threshold);
    if rule1 {
        Outcome::Correct
    } else if rule2 {
        Outcome::CorrectWithResiduals
    } else if rule3 {
        Outcome::Confused
    } else if rule4 {
        Outcome::Spurious
    } else {
        Outcome::Missed
    }
}

/// Scalar Adam on f(θ) = θ², returning θ after `steps` updates.
pub fn scalar_adam_on_square(theta0: f64, lr: f64, steps: usize) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    for t in 1..=steps {
        let g = 2.0 * theta;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        theta -= lr * mh / (vh.sqrt() + eps);
    }
    theta
}

/// (tp, fp, tn, fn) by visiting every (sample, class, pixel) slot.
pub fn recount(probabilities: &[Vec<Vec<f32>>], targets: &[Vec<Vec<u8>>], threshold: f32) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (ps, ts) in probabilities.iter().zip(targets) {
        for (p, t) in ps.iter().zip(ts) {
            for (&pv, &tv) in p.iter().zip(t) {
                match (pv >= threshold, tv == 1) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, false) => tn += 1,
                    (false, true) => fn_ += 1,
                }
            }
        }
    }
    (tp, fp, tn, fn_)
}

pub mod checks;
