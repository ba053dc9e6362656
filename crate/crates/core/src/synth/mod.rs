//! Deterministic synthesis of overlapping-letter samples.
//!
//! Every sample is a pure function of the glyph pool, the [`SynthConfig`]
//! and its own seed, so datasets can be generated in any order or in parallel
//! and still come out bit-identical.

mod format;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{default_class_set, GlyphPool, Split, DEFAULT_THRESHOLD, GLYPH_SIDE};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Mask};
use crate::rng::Xoshiro256;

pub use crate::rng::derive_seed;
pub use format::{read_dataset, write_dataset, HEADER_LEN, MAGIC, SAMPLE_META_LEN};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub class_set: Vec<u8>,
    /// (height, width)
    pub canvas: (usize, usize),
    pub p_single: f64,
    pub offset_max: u32,
    pub contrast_range: (f32, f32),
    pub noise_sigma: f32,
    pub mask_threshold: f32,
    pub min_ink_pixels: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            class_set: default_class_set(),
            canvas: (GLYPH_SIDE, GLYPH_SIDE),
            p_single: 0.1,
            offset_max: 4,
            contrast_range: (0.5, 1.0),
            noise_sigma: 0.0,
            mask_threshold: DEFAULT_THRESHOLD,
            min_ink_pixels: 10,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (c_min, c_max) = self.contrast_range;
        if self.class_set.is_empty() {
            return Err(Error::arg("class_set is empty"));
        }
        if self.class_set.len() >= 0xFF {
            return Err(Error::arg("at most 254 classes are supported"));
        }
        if !(0.0..=1.0).contains(&self.p_single) {
            return Err(Error::arg(format!("p_single {} outside [0,1]", self.p_single)));
        }
        if !(c_min > 0.0 && c_min <= c_max && c_max <= 1.0) {
            return Err(Error::arg(format!("contrast_range [{c_min}, {c_max}] must satisfy 0 < min <= max <= 1")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::arg(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(Error::arg("mask_threshold outside (0,1)"));
        }
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return Err(Error::arg("canvas dimensions must be positive"));
        }
        if self.class_set.len() < 2 && self.p_single < 1.0 {
            return Err(Error::arg("pairs need at least two classes"));
        }
        Ok(())
    }
}

/// One input image with its per-class ground-truth masks.
///
/// Class fields hold positions in the dataset's class set, which coincide
/// with class ids for the default contiguous set.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: GrayImage,
    pub masks: Vec<Mask>,
    /// The under-letter, or the sole letter of a singleton.
    pub class_a: u8,
    /// The upper letter; `None` for singletons.
    pub class_b: Option<u8>,
    pub contrast: f32,
    pub noise_sigma: f32,
    pub sample_seed: u64,
}

impl Sample {
    pub fn truth_classes(&self) -> Vec<usize> {
        let mut t = vec![self.class_a as usize];
        if let Some(b) = self.class_b {
            t.push(b as usize);
        }
        t.sort_unstable();
        t
    }

    /// The sample as it reads back from an OVLS file.
    pub fn quantized(&self) -> Self {
        Self {
            input: self.input.quantized(),
            masks: self.masks.clone(),
            class_a: self.class_a,
            class_b: self.class_b,
            contrast: dequantize_fraction(quantize_fraction(self.contrast)),
            noise_sigma: dequantize_fraction(quantize_fraction(self.noise_sigma)),
            sample_seed: self.sample_seed,
        }
    }
}

pub(crate) fn quantize_fraction(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16
}

pub(crate) fn dequantize_fraction(q: u16) -> f32 {
    (q as f64 / 65535.0) as f32
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SynthConfig,
    pub samples: Vec<Sample>,
    /// Not stored in the file format.
    pub split: Option<Split>,
    pub global_seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.config.class_set.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.config.canvas
    }

    pub fn quantized(&self) -> Self {
        Self { samples: self.samples.iter().map(Sample::quantized).collect(), ..self.clone() }
    }

    /// Fraction of (sample, class, pixel) slots whose ground truth is 0.
    pub fn background_fraction(&self) -> f64 {
        let mut zeros = 0usize;
        let mut total = 0usize;
        for s in &self.samples {
            for m in &s.masks {
                total += m.bits().len();
                zeros += m.bits().len() - m.ink_count();
            }
        }
        if total == 0 {
            0.0
        } else {
            zeros as f64 / total as f64
        }
    }
}

/// Shifts content right by `dx` and down by `dy`; vacated pixels become 0.
pub fn translate(image: &GrayImage, dx: i64, dy: i64) -> GrayImage {
    let (h, w) = (image.height(), image.width());
    let mut out = GrayImage::zeros(h, w);
    shift_into(image.pixels(), out.pixels_mut(), h, w, dx, dy);
    out
}

pub fn translate_mask(mask: &Mask, dx: i64, dy: i64) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    let mut bits = vec![0u8; h * w];
    shift_into(mask.bits(), &mut bits, h, w, dx, dy);
    Mask::from_bits(h, w, bits).expect("shifted mask stays binary")
}

fn shift_into<T: Copy>(src: &[T], dst: &mut [T], h: usize, w: usize, dx: i64, dy: i64) {
    for y in 0..h as i64 {
        let sy = y - dy;
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        for x in 0..w as i64 {
            let sx = x - dx;
            if sx < 0 || sx >= w as i64 {
                continue;
            }
            dst[(y as usize) * w + x as usize] = src[(sy as usize) * w + sx as usize];
        }
    }
}

/// `max(contrast × under, upper)` per pixel.
pub fn composite(under: &GrayImage, upper: &GrayImage, contrast: f32) -> Result<GrayImage> {
    if under.height() != upper.height() || under.width() != upper.width() {
        return Err(Error::arg(format!(
            "composite of {}x{} and {}x{} images",
            under.height(),
            under.width(),
            upper.height(),
            upper.width()
        )));
    }
    if !(contrast > 0.0 && contrast <= 1.0) {
        return Err(Error::arg(format!("contrast {contrast} outside (0,1]")));
    }
    let pixels = under
        .pixels()
        .iter()
        .zip(upper.pixels())
        .map(|(&a, &b)| (contrast * a).max(b))
        .collect();
    GrayImage::from_pixels(under.height(), under.width(), pixels)
}

/// Adds N(0, sigma²) to every pixel, then clips to [0, 1].
pub fn add_gaussian_noise(image: &GrayImage, sigma: f32, rng: &mut Xoshiro256) -> GrayImage {
    if sigma <= 0.0 {
        return image.clone();
    }
    let sigma = sigma as f64;
    image.map(|p| (p as f64 + sigma * rng.next_normal()).clamp(0.0, 1.0) as f32)
}

fn boxes_intersect(a: &Mask, b: &Mask) -> bool {
    match (a.bounding_box(), b.bounding_box()) {
        (Some((ay0, ax0, ay1, ax1)), Some((by0, bx0, by1, bx1))) => {
            ay0 <= by1 && by0 <= ay1 && ax0 <= bx1 && bx0 <= ax1
        }
        _ => false,
    }
}

/// Builds one sample from `sample_seed`.
///
/// Draw order: singleton-vs-pair, classes, instances, offsets, contrast, then
/// offset redraws for pairs until both masks keep `min_ink_pixels` and their
/// bounding boxes intersect, and finally the background noise.
pub fn make_sample(pool: &GlyphPool, config: &SynthConfig, sample_seed: u64) -> Result<Sample> {
    config.validate()?;
    if pool.classes != config.class_set {
        return Err(Error::arg("glyph pool classes differ from the configured class set"));
    }
    if let Some(pos) = pool.letters.iter().position(Vec::is_empty) {
        return Err(Error::Content(format!("glyph pool for class {} is empty", pool.classes[pos])));
    }
    let (h, w) = config.canvas;
    let n_classes = config.class_set.len();
    let mut rng = Xoshiro256::seed_from_u64(sample_seed);

    let single = rng.next_f64() < config.p_single;
    let classes: Vec<usize> = if single {
        vec![rng.below(n_classes as u64) as usize]
    } else {
        let a = rng.below(n_classes as u64) as usize;
        let mut b = rng.below(n_classes as u64 - 1) as usize;
        if b >= a {
            b += 1;
        }
        vec![a, b]
    };
    let letters: Vec<_> = classes
        .iter()
        .map(|&c| {
            let list = &pool.letters[c];
            &list[rng.below(list.len() as u64) as usize]
        })
        .collect();
    for l in &letters {
        if l.image.height() != h || l.image.width() != w {
            return Err(Error::arg("glyph dimensions differ from the canvas"));
        }
    }

    let m = config.offset_max as i64;
    let draw_offsets = |rng: &mut Xoshiro256| -> Vec<(i64, i64)> {
        classes.iter().map(|_| (rng.range_inclusive(-m, m), rng.range_inclusive(-m, m))).collect()
    };
    let mut offsets = draw_offsets(&mut rng);
    let (c_min, c_max) = config.contrast_range;
    let contrast = (c_min as f64 + (c_max - c_min) as f64 * rng.next_f64()) as f32;

    let place = |offsets: &[(i64, i64)]| -> Vec<Mask> {
        letters.iter().zip(offsets).map(|(l, &(dx, dy))| translate_mask(&l.mask, dx, dy)).collect()
    };
    let mut placed = place(&offsets);
    if !single {
        let mut attempts = 1;
        while !(placed.iter().all(|m| m.ink_count() >= config.min_ink_pixels)
            && boxes_intersect(&placed[0], &placed[1]))
        {
            if attempts == MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::Generation {
                    index: None,
                    msg: format!("no valid placement after {MAX_PLACEMENT_ATTEMPTS} attempts"),
                });
            }
            offsets = draw_offsets(&mut rng);
            placed = place(&offsets);
            attempts += 1;
        }
    }

    let shifted: Vec<GrayImage> =
        letters.iter().zip(&offsets).map(|(l, &(dx, dy))| translate(&l.image, dx, dy)).collect();
    let clean = if single {
        shifted[0].scale(contrast)
    } else {
        composite(&shifted[0], &shifted[1], contrast)?
    };
    let input = add_gaussian_noise(&clean, config.noise_sigma, &mut rng);

    let mut masks = vec![Mask::zeros(h, w); n_classes];
    for (&c, mask) in classes.iter().zip(placed) {
        masks[c] = mask;
    }
    Ok(Sample {
        input,
        masks,
        class_a: classes[0] as u8,
        class_b: classes.get(1).map(|&c| c as u8),
        contrast,
        noise_sigma: config.noise_sigma,
        sample_seed,
    })
}

/// `samples[i] = make_sample(pool, config, derive_seed(global_seed, i))`.
///
/// Runs on the current rayon pool; the result does not depend on the number
/// of worker threads.
pub fn generate_dataset(pool: &GlyphPool, config: &SynthConfig, count: usize, global_seed: u64) -> Result<Dataset> {
    generate_impl(pool, config, count, global_seed, true)
}

/// Single-threaded reference path of [`generate_dataset`].
pub fn generate_dataset_sequential(
    pool: &GlyphPool,
    config: &SynthConfig,
    count: usize,
    global_seed: u64,
) -> Result<Dataset> {
    generate_impl(pool, config, count, global_seed, false)
}

fn generate_impl(pool: &GlyphPool, config: &SynthConfig, count: usize, global_seed: u64, parallel: bool) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::arg("sample count must be at least 1"));
    }
    if count > u32::MAX as usize {
        return Err(Error::arg("sample count exceeds the file format limit"));
    }
    config.validate()?;
    let one = |i: usize| {
        make_sample(pool, config, derive_seed(global_seed, i as u64)).map_err(|e| match e {
            Error::Generation { msg, .. } => Error::Generation { index: Some(i as u64), msg },
            other => other,
        })
    };
    let results: Vec<Result<Sample>> = if parallel {
        (0..count).into_par_iter().map(one).collect()
    } else {
        (0..count).map(one).collect()
    };
    let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset { config: config.clone(), samples, split: None, global_seed })
}
