//! Shared fixtures for the benchmarks.

use overseg::corpus::{assign_splits, default_class_set, parse_corpus_csv, GlyphPool, Split, SplitFractions};
use overseg::glyphs::{write_glyph_corpus, SUPPORTED_CLASSES};
use overseg::nn::Tensor;
use overseg::rng::Xoshiro256;

/// Training pool of a procedurally drawn A–E corpus.
pub fn glyph_pool(per_class: usize, seed: u64) -> GlyphPool {
    let mut csv = Vec::new();
    write_glyph_corpus(&SUPPORTED_CLASSES, per_class, seed, &mut csv).expect("glyph corpus");
    let corpus = parse_corpus_csv(&csv[..], &default_class_set(), 0.5).expect("parse");
    assign_splits(corpus, SplitFractions::default(), seed).expect("splits").pool(Split::Train)
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.next_f64() as f32 - 0.5).collect()).expect("shape")
}
