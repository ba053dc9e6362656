//! Labeled glyph corpus ingestion and split assignment.
//!
//! The input is the A–Z handwritten-letters CSV layout: one record per line,
//! `label,p0,...,p783`, label in 0..=25 and 28×28 row-major pixels in 0..=255
//! with ink stored as high values.

use std::io::BufRead;

use crate::error::{Error, Result};
use crate::image::{binarize_mask, GrayImage, Mask};
use crate::rng::{derive_seed, Xoshiro256};

pub const GLYPH_SIDE: usize = 28;
pub const GLYPH_PIXELS: usize = GLYPH_SIDE * GLYPH_SIDE;
pub const MAX_LABEL: u8 = 25;
pub const DEFAULT_THRESHOLD: f32 = 0.5;

/// Class ids 0 ('A') through 4 ('E').
pub fn default_class_set() -> Vec<u8> {
    (0..5).collect()
}

pub fn class_letter(class_id: u8) -> char {
    (b'A' + class_id.min(MAX_LABEL)) as char
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::arg(format!("unknown split {s:?} (expected train, val or test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LetterInstance {
    pub class_id: u8,
    pub image: GrayImage,
    pub mask: Mask,
}

/// Per-class glyph lists usable for synthesis, indexed by class position.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphPool {
    pub classes: Vec<u8>,
    pub letters: Vec<Vec<LetterInstance>>,
}

impl GlyphPool {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LetterCorpus {
    classes: Vec<u8>,
    threshold: f32,
    instances: Vec<Vec<LetterInstance>>,
    /// Parallel to `instances`.
    splits: Vec<Vec<Split>>,
}

impl LetterCorpus {
    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    /// Instances of the class at position `class_index` in record order.
    pub fn instances(&self, class_index: usize) -> &[LetterInstance] {
        &self.instances[class_index]
    }

    pub fn split_tags(&self, class_index: usize) -> &[Split] {
        &self.splits[class_index]
    }

    pub fn len(&self) -> usize {
        self.instances.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Instance counts of `split` per class position.
    pub fn split_counts(&self, split: Split) -> Vec<usize> {
        self.splits.iter().map(|tags| tags.iter().filter(|&&t| t == split).count()).collect()
    }

    /// Glyphs tagged `split`, grouped per class, in record order.
    pub fn pool(&self, split: Split) -> GlyphPool {
        let letters = self
            .instances
            .iter()
            .zip(&self.splits)
            .map(|(inst, tags)| {
                inst.iter()
                    .zip(tags)
                    .filter(|(_, &t)| t == split)
                    .map(|(i, _)| i.clone())
                    .collect()
            })
            .collect();
        GlyphPool { classes: self.classes.clone(), letters }
    }

    /// Every glyph regardless of split tag.
    pub fn full_pool(&self) -> GlyphPool {
        GlyphPool { classes: self.classes.clone(), letters: self.instances.clone() }
    }

    /// Global (min, max) over every ingested pixel.
    pub fn intensity_range(&self) -> (f32, f32) {
        self.instances
            .iter()
            .flatten()
            .map(|i| i.image.min_max())
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), (lo, hi)| (a.min(lo), b.max(hi)))
    }
}

/// Reads a corpus CSV, keeping only records whose label is in `class_set`.
///
/// A first line whose first field is not numeric is taken as a header.
/// Records of other classes are skipped.
pub fn parse_corpus_csv<R: BufRead>(source: R, class_set: &[u8], threshold: f32) -> Result<LetterCorpus> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::arg(format!("threshold {threshold} outside (0,1)")));
    }
    if class_set.is_empty() {
        return Err(Error::arg("class set is empty"));
    }
    for (i, &c) in class_set.iter().enumerate() {
        if c > MAX_LABEL {
            return Err(Error::arg(format!("class id {c} outside 0..={MAX_LABEL}")));
        }
        if class_set[..i].contains(&c) {
            return Err(Error::arg(format!("class id {c} listed twice")));
        }
    }

    let mut instances: Vec<Vec<LetterInstance>> = vec![Vec::new(); class_set.len()];
    let mut raw = [0u8; GLYPH_PIXELS];
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let first = fields.next().unwrap_or("").trim();
        let label: i64 = match first.parse() {
            Ok(v) => v,
            Err(_) if line_no == 1 => continue,
            Err(_) => return Err(Error::at_line(line_no, format!("non-integer label {first:?}"))),
        };
        if !(0..=MAX_LABEL as i64).contains(&label) {
            return Err(Error::at_line(line_no, format!("label {label} outside 0..={MAX_LABEL}")));
        }
        let mut count = 0usize;
        for field in fields {
            let field = field.trim();
            let v: i64 = field
                .parse()
                .map_err(|_| Error::at_line(line_no, format!("non-integer pixel {field:?}")))?;
            if !(0..=255).contains(&v) {
                return Err(Error::at_line(line_no, format!("pixel value {v} outside 0..=255")));
            }
            if count < GLYPH_PIXELS {
                raw[count] = v as u8;
            }
            count += 1;
        }
        if count != GLYPH_PIXELS {
            return Err(Error::at_line(
                line_no,
                format!("expected {} fields, found {}", GLYPH_PIXELS + 1, count + 1),
            ));
        }
        let Some(pos) = class_set.iter().position(|&c| c as i64 == label) else {
            continue;
        };
        let image = GrayImage::from_u8(GLYPH_SIDE, GLYPH_SIDE, &raw)?;
        let mask = binarize_mask(&image, threshold)?;
        instances[pos].push(LetterInstance { class_id: label as u8, image, mask });
    }

    if let Some(pos) = instances.iter().position(Vec::is_empty) {
        return Err(Error::Content(format!(
            "no records for class {} ('{}')",
            class_set[pos],
            class_letter(class_set[pos])
        )));
    }
    let splits = instances.iter().map(|v| vec![Split::Train; v.len()]).collect();
    Ok(LetterCorpus { classes: class_set.to_vec(), threshold, instances, splits })
}

/// Train/val/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

/// Tags every instance with exactly one split.
///
/// Per class, instance indices are shuffled with a stream seeded by
/// `derive_seed(seed, class_id)`; the first `round(train·n)` go to train, the
/// next `round(val·n)` to val and the rest to test.
pub fn assign_splits(mut corpus: LetterCorpus, fractions: SplitFractions, seed: u64) -> Result<LetterCorpus> {
    let SplitFractions { train, val, test } = fractions;
    if [train, val, test].iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::arg("split fractions must be non-negative"));
    }
    if (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!("split fractions sum to {}, not 1", train + val + test)));
    }

    for (pos, tags) in corpus.splits.iter_mut().enumerate() {
        let n = tags.len();
        let n_train = ((train * n as f64).round() as usize).min(n);
        let n_val = ((val * n as f64).round() as usize).min(n - n_train);
        let n_test = n - n_train - n_val;
        if n >= 3 {
            for (name, frac, size) in [("train", train, n_train), ("val", val, n_val), ("test", test, n_test)] {
                if frac > 0.0 && size == 0 {
                    return Err(Error::Content(format!(
                        "class {} has {n} instances; {name} pool would be empty",
                        corpus.classes[pos]
                    )));
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        Xoshiro256::seed_from_u64(derive_seed(seed, corpus.classes[pos] as u64)).shuffle(&mut order);
        for (rank, &i) in order.iter().enumerate() {
            tags[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(corpus)
}
