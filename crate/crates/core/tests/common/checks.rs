//! Whole-criterion checks returning summaries, so both the integration
//! tests and the acceptance runner can assert on and print them.

use overseg::eval::{classify_outcome, EvalConfig};
use overseg::image::GrayImage;
use overseg::nn::*;
use overseg::rng::Xoshiro256;

use super::*;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Default, Clone)]
pub struct GradSummary {
    /// (check name, probes, max relative error)
    pub checks: Vec<(String, usize, f64)>,
    pub skipped: usize,
}

impl GradSummary {
    fn record(&mut self, name: &str, errs: &[f64]) {
        let max = errs.iter().copied().fold(0.0, f64::max);
        self.checks.push((name.to_string(), errs.len(), max));
    }

    pub fn probes(&self) -> usize {
        self.checks.iter().map(|c| c.1).sum()
    }

    pub fn max_rel(&self) -> f64 {
        self.checks.iter().map(|c| c.2).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> (usize, f64) {
        let c = self.checks.iter().find(|c| c.0 == name).unwrap_or_else(|| panic!("no check {name}"));
        (c.1, c.2)
    }

    pub fn passes(&self) -> bool {
        self.checks.iter().all(|(name, n, e)| *n > 0 && *e <= if name == "sigmoid" { 1e-6 } else { FD_TOLERANCE })
            && self.get("unet").0 >= 50
    }
}

fn weighted_sum(t: &Tensor<f64>, w: &[f64]) -> f64 {
    t.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

fn conv_case(rng: &mut Xoshiro256, in_shape: &[usize], c_out: usize, k: usize, probes: Option<usize>, errs: &mut Vec<f64>) {
    let c_in = in_shape[0];
    let x = random_tensor(rng, in_shape);
    let kern = random_tensor(rng, &[c_out, c_in, k, k]);
    let bias = random_tensor(rng, &[c_out]);
    let out_len = x.len() / c_in * c_out;
    let w = random_vec(rng, out_len, -1.0, 1.0);
    let grad_out = Tensor::from_vec(&{
        let mut s = in_shape.to_vec();
        s[0] = c_out;
        s
    }, w.clone())
    .unwrap();
    let (gi, gk, gb) = conv2d_backward(&x, &kern, &grad_out).unwrap();

    let loss = |x: &[f64], kd: &[f64], bd: &[f64]| {
        let xt = Tensor::from_vec(in_shape, x.to_vec()).unwrap();
        let kt = Tensor::from_vec(kern.shape(), kd.to_vec()).unwrap();
        let bt = Tensor::from_vec(&[c_out], bd.to_vec()).unwrap();
        weighted_sum(&conv2d_forward(&xt, &kt, &bt).unwrap(), &w)
    };
    let pick = |rng: &mut Xoshiro256, n: usize| -> Vec<usize> {
        match probes {
            None => (0..n).collect(),
            Some(p) => (0..p).map(|_| rng.below(n as u64) as usize).collect(),
        }
    };
    for i in pick(rng, x.len()) {
        let fd = central_diff(x.data(), i, FD_STEP, |v| loss(v, kern.data(), bias.data()));
        errs.push(rel_err(gi.data()[i], fd));
    }
    for i in pick(rng, kern.len()) {
        let fd = central_diff(kern.data(), i, FD_STEP, |v| loss(x.data(), v, bias.data()));
        errs.push(rel_err(gk.data()[i], fd));
    }
    for i in 0..c_out {
        let fd = central_diff(bias.data(), i, FD_STEP, |v| loss(x.data(), kern.data(), v));
        errs.push(rel_err(gb.data()[i], fd));
    }
}

/// Finite-difference checks of every layer backward and of the tiny U-Net.
pub fn gradient_checks(seed: u64) -> GradSummary {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let mut s = GradSummary::default();

    let mut errs = Vec::new();
    conv_case(&mut rng, &[1, 5, 5], 2, 3, None, &mut errs);
    conv_case(&mut rng, &[3, 2, 6, 6], 4, 3, Some(30), &mut errs);
    conv_case(&mut rng, &[2, 4, 4], 3, 1, None, &mut errs);
    s.record("conv2d", &errs);

    // Max pooling, away from ties and with the winner fixed under the step.
    let mut errs = Vec::new();
    for shape in [vec![1usize, 4, 4], vec![2, 2, 6, 4]] {
        let x = random_tensor(&mut rng, &shape);
        let (y, idx) = maxpool2_forward(&x).unwrap();
        let w = random_vec(&mut rng, y.len(), -1.0, 1.0);
        let gi = maxpool2_backward(&idx, &Tensor::from_vec(y.shape(), w.clone()).unwrap()).unwrap();
        for i in 0..x.len() {
            let shifted = |d: f64| {
                let mut v = x.data().to_vec();
                v[i] += d;
                maxpool2_forward(&Tensor::from_vec(&shape, v).unwrap()).unwrap().1
            };
            if shifted(FD_STEP) != idx || shifted(-FD_STEP) != idx {
                s.skipped += 1;
                continue;
            }
            let fd = central_diff(x.data(), i, FD_STEP, |v| {
                weighted_sum(&maxpool2_forward(&Tensor::from_vec(&shape, v.to_vec()).unwrap()).unwrap().0, &w)
            });
            errs.push(rel_err(gi.data()[i], fd));
        }
    }
    s.record("maxpool2", &errs);

    let mut errs = Vec::new();
    let shape = [2usize, 3, 3];
    let x = random_tensor(&mut rng, &shape);
    let w = random_vec(&mut rng, 4 * x.len(), -1.0, 1.0);
    let gi = upsample2_backward(&Tensor::from_vec(&[2, 6, 6], w.clone()).unwrap()).unwrap();
    for i in 0..x.len() {
        let fd = central_diff(x.data(), i, FD_STEP, |v| {
            weighted_sum(&upsample2_forward(&Tensor::from_vec(&shape, v.to_vec()).unwrap()).unwrap(), &w)
        });
        errs.push(rel_err(gi.data()[i], fd));
    }
    s.record("upsample2", &errs);

    let mut errs = Vec::new();
    let a = random_tensor(&mut rng, &[2, 3, 3]);
    let b = random_tensor(&mut rng, &[1, 3, 3]);
    let w = random_vec(&mut rng, 27, -1.0, 1.0);
    let (ga, gb) = split_channels(&Tensor::from_vec(&[3, 3, 3], w.clone()).unwrap(), 2).unwrap();
    for i in 0..a.len() {
        let fd = central_diff(a.data(), i, FD_STEP, |v| {
            weighted_sum(&concat_channels(&Tensor::from_vec(&[2, 3, 3], v.to_vec()).unwrap(), &b).unwrap(), &w)
        });
        errs.push(rel_err(ga.data()[i], fd));
    }
    for i in 0..b.len() {
        let fd = central_diff(b.data(), i, FD_STEP, |v| {
            weighted_sum(&concat_channels(&a, &Tensor::from_vec(&[1, 3, 3], v.to_vec()).unwrap()).unwrap(), &w)
        });
        errs.push(rel_err(gb.data()[i], fd));
    }
    s.record("concat", &errs);

    let mut errs = Vec::new();
    let x = random_tensor(&mut rng, &[40]);
    let w = random_vec(&mut rng, 40, -1.0, 1.0);
    let y = relu_forward(&x);
    let gi = relu_backward(&y, &Tensor::from_vec(&[40], w.clone()).unwrap()).unwrap();
    for i in 0..40 {
        if x.data()[i].abs() <= FD_STEP + 1e-6 {
            s.skipped += 1;
            continue;
        }
        let fd = central_diff(x.data(), i, FD_STEP, |v| weighted_sum(&relu_forward(&Tensor::from_vec(&[40], v.to_vec()).unwrap()), &w));
        errs.push(rel_err(gi.data()[i], fd));
    }
    s.record("relu", &errs);

    let mut errs = Vec::new();
    let x = Tensor::from_vec(&[20], random_vec(&mut rng, 20, -6.0, 6.0)).unwrap();
    let y = sigmoid_forward(&x);
    let gi = sigmoid_backward(&y, &Tensor::full(&[20], 1.0)).unwrap();
    for i in 0..20 {
        let fd = central_diff(x.data(), i, FD_STEP, |v| sigmoid(v[i]));
        errs.push(rel_err(gi.data()[i], fd));
    }
    s.record("sigmoid", &errs);

    let (unet_errs, bce_errs, skipped) = unet_gradient_probes(&mut rng, 60, 20);
    s.skipped += skipped;
    s.record("unet", &unet_errs);
    s.record("unet_bce", &bce_errs);
    s
}

pub fn tiny_unet_config() -> UNetConfig {
    UNetConfig { in_channels: 1, n_classes: 2, base_filters: 4, depth: 1, kernel_size: 3, height: 8, width: 8 }
}

fn flat_get(p: &UNetParams<f64>, i: usize) -> f64 {
    let mut i = i;
    for t in p.tensors() {
        if i < t.len() {
            return t.data()[i];
        }
        i -= t.len();
    }
    panic!("index out of range")
}

fn flat_set(p: &mut UNetParams<f64>, i: usize, v: f64) {
    let mut i = i;
    for t in p.tensors_mut() {
        if i < t.len() {
            t.data_mut()[i] = v;
            return;
        }
        i -= t.len();
    }
    panic!("index out of range")
}

/// Probes random parameters of the tiny U-Net, rejecting any whose ±step
/// perturbation changes the ReLU/pooling pattern. Returns relative errors for
/// a weighted-sum loss on the probabilities and for the fused BCE path,
/// plus the number of rejected probes.
fn unet_gradient_probes(rng: &mut Xoshiro256, n_sum: usize, n_bce: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let cfg = tiny_unet_config();
    let mut params: UNetParams<f64> = init_params(&cfg, 5).unwrap().cast();
    for (name, t) in params.names().to_vec().iter().zip(params.tensors_mut()) {
        if name.ends_with(".bias") {
            for b in t.data_mut() {
                *b = 0.1 * (rng.next_f64() - 0.5);
            }
        }
    }
    let px: Vec<f32> = (0..64).map(|_| rng.next_f64() as f32).collect();
    let image = GrayImage::from_pixels(8, 8, px).unwrap();
    let (probs, cache) = unet_forward(&params, &cfg, &image).unwrap();
    let pattern = cache.activation_pattern();
    let w = random_vec(rng, probs.len(), -1.0, 1.0);
    let grads = unet_backward(&params, &cfg, &cache, &Tensor::from_vec(probs.shape(), w.clone()).unwrap()).unwrap();
    let targets = Tensor::from_vec(probs.shape(), (0..probs.len()).map(|_| (rng.below(2)) as f64).collect()).unwrap();
    let (_, g_logit) = overseg::train::bce_loss_logit_grad(&probs, &targets).unwrap();
    let bce_grads = unet_backward_logits(&params, &cfg, &cache, &g_logit).unwrap();
    let total = params.parameter_count();

    let evaluate = |params: &mut UNetParams<f64>, i: usize, loss: &dyn Fn(&Tensor<f64>) -> f64| -> Option<f64> {
        let orig = flat_get(params, i);
        let mut vals = [0.0; 2];
        for (k, d) in [FD_STEP, -FD_STEP].into_iter().enumerate() {
            flat_set(params, i, orig + d);
            let (p, c) = unet_forward(params, &cfg, &image).unwrap();
            if c.activation_pattern() != pattern {
                flat_set(params, i, orig);
                return None;
            }
            vals[k] = loss(&p);
        }
        flat_set(params, i, orig);
        Some((vals[0] - vals[1]) / (2.0 * FD_STEP))
    };

    let mut skipped = 0;
    let mut sum_errs = Vec::new();
    let sum_loss = |p: &Tensor<f64>| weighted_sum(p, &w);
    while sum_errs.len() < n_sum {
        let i = rng.below(total as u64) as usize;
        match evaluate(&mut params, i, &sum_loss) {
            Some(fd) => sum_errs.push(rel_err(flat_get(&grads, i), fd)),
            None => skipped += 1,
        }
    }
    let mut bce_errs = Vec::new();
    let bce = |p: &Tensor<f64>| overseg::train::bce_loss(p, &targets).unwrap().0;
    while bce_errs.len() < n_bce {
        let i = rng.below(total as u64) as usize;
        match evaluate(&mut params, i, &bce) {
            Some(fd) => bce_errs.push(rel_err(flat_get(&bce_grads, i), fd)),
            None => skipped += 1,
        }
    }
    (sum_errs, bce_errs, skipped)
}

#[derive(Debug, Default, Clone)]
pub struct ForwardOracleSummary {
    pub cases: usize,
    pub conv_max: f64,
    pub pool_max: f64,
    pub pool_index_mismatches: usize,
    pub upsample_max: f64,
    /// 32-bit kernels on 1×4×4 inputs with 2×1×3×3 kernels.
    pub conv_max_f32_small: f64,
}

impl ForwardOracleSummary {
    pub fn passes(&self, tol: f64) -> bool {
        self.conv_max <= tol
            && self.pool_max <= tol
            && self.upsample_max <= tol
            && self.pool_index_mismatches == 0
            && self.conv_max_f32_small <= tol
    }
}

/// Forward kernels against the loop references on `cases` random tensors of
/// each kind, in the 64-bit mode, plus `cases` small 32-bit convolutions.
pub fn forward_oracles(cases: usize, seed: u64) -> ForwardOracleSummary {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let mut s = ForwardOracleSummary { cases, ..Default::default() };
    for case in 0..cases {
        let c_in = 1 + rng.below(3) as usize;
        let n = 1 + rng.below(2) as usize;
        let h = 2 * (1 + rng.below(4) as usize);
        let w = 2 * (1 + rng.below(4) as usize);
        let shape = if case % 2 == 0 { vec![c_in, h, w] } else { vec![c_in, n, h, w] };
        let c_out = 1 + rng.below(3) as usize;
        let k = [1usize, 3, 5][rng.below(3) as usize];

        let x = random_tensor(&mut rng, &shape);
        let kern = random_tensor(&mut rng, &[c_out, c_in, k, k]);
        let bias = random_tensor(&mut rng, &[c_out]);
        let got = conv2d_forward(&x, &kern, &bias).unwrap();
        let want = conv_ref(x.data(), &shape, kern.data(), c_out, k, bias.data());
        s.conv_max = s.conv_max.max(max_abs_diff(got.data(), &want));

        let (pooled, idx) = maxpool2_forward(&x).unwrap();
        let (want, want_idx) = maxpool_ref(x.data(), &shape);
        s.pool_max = s.pool_max.max(max_abs_diff(pooled.data(), &want));
        s.pool_index_mismatches += idx.argmax().iter().zip(&want_idx).filter(|(&a, &b)| a as usize != b).count();

        let up = upsample2_forward(&x).unwrap();
        s.upsample_max = s.upsample_max.max(max_abs_diff(up.data(), &upsample_ref(x.data(), &shape)));

        let x = random_tensor(&mut rng, &[1, 4, 4]).cast::<f32>();
        let kern = random_tensor(&mut rng, &[2, 1, 3, 3]).cast::<f32>();
        let bias = random_tensor(&mut rng, &[2]).cast::<f32>();
        let got: Vec<f64> = conv2d_forward(&x, &kern, &bias).unwrap().data().iter().map(|&v| v as f64).collect();
        let f = |t: &Tensor<f32>| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        let want = conv_ref(&f(&x), &[1, 4, 4], &f(&kern), 2, 3, &f(&bias));
        s.conv_max_f32_small = s.conv_max_f32_small.max(max_abs_diff(&got, &want));
    }
    s
}

/// Every flux vector over {0, 0.05, 0.1, 0.3, 0.5, 0.9}⁵ against every truth
/// set of size 1 or 2. Returns (cases, mismatches).
pub fn classify_grid() -> (usize, usize) {
    let levels = [0.0f32, 0.05, 0.1, 0.3, 0.5, 0.9];
    let cfg = EvalConfig::default();
    let mut truths: Vec<Vec<usize>> = (0..5).map(|c| vec![c]).collect();
    for a in 0..5 {
        for b in a + 1..5 {
            truths.push(vec![a, b]);
        }
    }
    let (mut cases, mut bad) = (0, 0);
    for code in 0..levels.len().pow(5) {
        let mut rest = code;
        let fluxes: Vec<f32> = (0..5)
            .map(|_| {
                let l = levels[rest % levels.len()];
                rest /= levels.len();
                l
            })
            .collect();
        for t in &truths {
            cases += 1;
            if classify_outcome(&fluxes, t, &cfg) != classify_reference(&fluxes, t, &cfg) {
                bad += 1;
            }
        }
    }
    (cases, bad)
}

/// Split pools of a procedurally drawn A–E corpus.
pub fn glyph_corpus(per_class: usize, seed: u64) -> overseg::corpus::LetterCorpus {
    use overseg::corpus::{assign_splits, parse_corpus_csv, SplitFractions};
    let mut csv = Vec::new();
    overseg::glyphs::write_glyph_corpus(&overseg::glyphs::SUPPORTED_CLASSES, per_class, seed, &mut csv).unwrap();
    let corpus = parse_corpus_csv(&csv[..], &overseg::corpus::default_class_set(), 0.5).unwrap();
    assign_splits(corpus, SplitFractions::default(), seed).unwrap()
}

pub fn glyph_pool(per_class: usize, seed: u64) -> overseg::corpus::GlyphPool {
    glyph_corpus(per_class, seed).pool(overseg::corpus::Split::Train)
}

#[derive(Debug, Clone)]
pub struct RecountSummary {
    pub samples: usize,
    pub library: (u64, u64, u64, u64),
    pub report: (u64, u64, u64, u64),
    pub reference: (u64, u64, u64, u64),
    pub ratios_match: bool,
}

impl RecountSummary {
    pub fn passes(&self) -> bool {
        self.library == self.reference && self.report == self.reference && self.ratios_match
    }
}

/// Pixel counts from the training and evaluation paths against a
/// per-pixel recount on `n` samples through a freshly initialised network.
pub fn metric_recount(n: usize, seed: u64) -> RecountSummary {
    use overseg::synth::{generate_dataset, SynthConfig};
    let pool = glyph_pool(20, seed);
    let ds = generate_dataset(&pool, &SynthConfig::default(), n, seed).unwrap();
    let cfg = UNetConfig::default();
    let params = init_params(&cfg, seed).unwrap();
    let m = overseg::train::evaluate_metrics(&params, &cfg, &ds, 0.5).unwrap();
    let r = overseg::eval::test_report(&params, &cfg, &ds, &EvalConfig::default()).unwrap();

    let mut probs = Vec::new();
    let mut targets = Vec::new();
    for s in &ds.samples {
        let p = overseg::eval::predict(&params, &cfg, &s.input).unwrap();
        probs.push(p.planes);
        targets.push(s.masks.iter().map(|m| m.bits().to_vec()).collect::<Vec<_>>());
    }
    let reference = recount(&probs, &targets, 0.5);
    let (tp, fp, tn, fn_) = reference;
    let total = (tp + fp + tn + fn_) as f64;
    let ratios_match = m.binary_accuracy == (tp + tn) as f64 / total
        && (tp + fp == 0 || m.precision == tp as f64 / (tp + fp) as f64)
        && (tp + fn_ == 0 || m.recall == tp as f64 / (tp + fn_) as f64)
        && total as usize == n * cfg.n_classes * cfg.height * cfg.width;
    RecountSummary {
        samples: n,
        library: (m.counts.tp, m.counts.fp, m.counts.tn, m.counts.fn_),
        report: (r.metrics.tp, r.metrics.fp, r.metrics.tn, r.metrics.fn_),
        reference,
        ratios_match,
    }
}

#[derive(Debug, Default, Clone)]
pub struct FormatSummary {
    pub ovls_second_write_identical: bool,
    pub model_second_write_identical: bool,
    pub ovls_bad_magic_at_zero: bool,
    pub model_bad_magic_at_zero: bool,
    pub truncations: usize,
    /// Truncations that panicked or produced something other than a format error.
    pub truncation_failures: usize,
}

impl FormatSummary {
    pub fn passes(&self) -> bool {
        self.ovls_second_write_identical
            && self.model_second_write_identical
            && self.ovls_bad_magic_at_zero
            && self.model_bad_magic_at_zero
            && self.truncations > 0
            && self.truncation_failures == 0
    }
}

fn is_format_error_at_zero<T>(r: overseg::Result<T>) -> bool {
    matches!(r, Err(overseg::Error::Format { at: overseg::error::Location::Offset(0), .. }))
}

fn truncation_fails<T>(read: impl Fn(&[u8]) -> overseg::Result<T> + std::panic::RefUnwindSafe, bytes: &[u8]) -> bool {
    let outcome = std::panic::catch_unwind(|| read(bytes));
    !matches!(outcome, Ok(Err(overseg::Error::Format { .. })))
}

/// write→read→write identity plus corruption and truncation handling for
/// dataset and model files.
pub fn format_roundtrips(seed: u64) -> FormatSummary {
    use overseg::synth::{generate_dataset, read_dataset, write_dataset, SynthConfig};
    let mut s = FormatSummary::default();

    let pool = glyph_pool(10, seed);
    let cfg = SynthConfig { noise_sigma: 0.05, ..Default::default() };
    let ds = generate_dataset(&pool, &cfg, 6, seed).unwrap();
    let mut first = Vec::new();
    write_dataset(&ds, &mut first).unwrap();
    let back = read_dataset(&first[..]).unwrap();
    let mut second = Vec::new();
    write_dataset(&back, &mut second).unwrap();
    s.ovls_second_write_identical =
        first == second && back.samples == ds.quantized().samples && back.global_seed == ds.global_seed;
    let mut bad = first.clone();
    bad[..4].copy_from_slice(b"XXXX");
    s.ovls_bad_magic_at_zero = is_format_error_at_zero(read_dataset(&bad[..]));
    for len in 0..first.len() {
        s.truncations += 1;
        s.truncation_failures += truncation_fails(|b| read_dataset(b), &first[..len]) as usize;
    }

    let mut model_ok = true;
    s.model_bad_magic_at_zero = true;
    for (ucfg, stride) in [(tiny_unet_config(), 1usize), (UNetConfig::default(), 1009)] {
        let params = init_params(&ucfg, seed).unwrap();
        let mut first = Vec::new();
        save_model(&params, &ucfg, &mut first).unwrap();
        let (p2, c2) = load_model(&first[..]).unwrap();
        let mut second = Vec::new();
        save_model(&p2, &c2, &mut second).unwrap();
        model_ok &= first == second && p2 == params && c2 == ucfg;
        let mut bad = first.clone();
        bad[0] = b'X';
        s.model_bad_magic_at_zero &= is_format_error_at_zero(load_model(&bad[..]));
        let lens: Vec<usize> = (0..first.len()).step_by(stride).chain(first.len().saturating_sub(64)..first.len()).collect();
        for len in lens {
            s.truncations += 1;
            s.truncation_failures += truncation_fails(|b| load_model(b), &first[..len]) as usize;
        }
    }
    s.model_second_write_identical = model_ok;
    s
}
