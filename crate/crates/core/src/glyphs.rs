//! Procedural stand-in for a handwritten-letter corpus.
//!
//! Letters A–E are drawn as jittered stroke skeletons under a random affine
//! transform and rendered with anti-aliased strokes, ink high, in the
//! `label,p0,...,p783` CSV layout read by [`crate::corpus::parse_corpus_csv`].

use std::f64::consts::PI;
use std::io::Write;

use crate::corpus::{class_letter, GLYPH_PIXELS, GLYPH_SIDE};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Xoshiro256};

type Point = (f64, f64);

/// Class ids that [`render_glyph`] can draw.
pub const SUPPORTED_CLASSES: [u8; 5] = [0, 1, 2, 3, 4];

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64, steps: usize) -> Vec<Point> {
    (0..=steps)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f64 / steps as f64) * PI / 180.0;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Stroke polylines in a unit box, x to the right and y downwards.
fn skeleton(class_id: u8) -> Option<Vec<Vec<Point>>> {
    let strokes = match class_id {
        0 => vec![vec![(0.05, 1.0), (0.5, 0.0), (0.95, 1.0)], vec![(0.25, 0.62), (0.75, 0.62)]],
        1 => {
            let mut upper = vec![(0.12, 0.0), (0.55, 0.0)];
            upper.extend(arc(0.55, 0.24, 0.3, 0.24, -90.0, 90.0, 10));
            upper.push((0.12, 0.48));
            let mut lower = vec![(0.12, 0.48), (0.6, 0.48)];
            lower.extend(arc(0.6, 0.74, 0.33, 0.26, -90.0, 90.0, 10));
            lower.push((0.12, 1.0));
            vec![vec![(0.12, 0.0), (0.12, 1.0)], upper, lower]
        }
        2 => vec![arc(0.55, 0.5, 0.45, 0.5, 40.0, 320.0, 20)],
        3 => {
            let mut bowl = vec![(0.12, 0.0), (0.4, 0.0)];
            bowl.extend(arc(0.4, 0.5, 0.5, 0.5, -90.0, 90.0, 16));
            bowl.push((0.12, 1.0));
            vec![vec![(0.12, 0.0), (0.12, 1.0)], bowl]
        }
        4 => vec![
            vec![(0.85, 0.0), (0.12, 0.0), (0.12, 1.0), (0.85, 1.0)],
            vec![(0.12, 0.5), (0.7, 0.5)],
        ],
        _ => return None,
    };
    Some(strokes)
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Scales the strokes down if needed and moves their bounding-box centre as
/// close to `target` as the canvas margin allows.
fn fit(strokes: &mut [Vec<Point>], target: Point, margin: f64) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in strokes.iter().flatten() {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    let room = GLYPH_SIDE as f64 - 1.0 - 2.0 * margin;
    let k = (room / (x1 - x0).max(1e-9)).min(room / (y1 - y0).max(1e-9)).min(1.0);
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let (hw, hh) = (k * (x1 - x0) / 2.0, k * (y1 - y0) / 2.0);
    let far = GLYPH_SIDE as f64 - 1.0 - margin;
    let nx = target.0.max(margin + hw).min(far - hw);
    let ny = target.1.max(margin + hh).min(far - hh);
    for p in strokes.iter_mut().flatten() {
        *p = (nx + k * (p.0 - cx), ny + k * (p.1 - cy));
    }
}

/// Draws one 28×28 glyph of `class_id` (0 = A … 4 = E), row-major, ink high.
pub fn render_glyph(class_id: u8, rng: &mut Xoshiro256) -> Result<Vec<u8>> {
    let Some(strokes) = skeleton(class_id) else {
        return Err(Error::arg(format!("no glyph model for class {}", class_letter(class_id))));
    };
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.next_f64();
    let height = uniform(16.0, 21.0);
    let width = height * uniform(0.7, 1.0);
    let angle = uniform(-12.0, 12.0) * PI / 180.0;
    let shear = uniform(-0.25, 0.25);
    let (tx, ty) = (uniform(-1.5, 1.5), uniform(-1.5, 1.5));
    let half_width = uniform(0.9, 1.6);
    let peak = uniform(0.85, 1.0);
    let jitter = 0.035;
    let (sin, cos) = angle.sin_cos();
    let centre = (GLYPH_SIDE as f64 - 1.0) / 2.0;

    let mut strokes: Vec<Vec<Point>> = strokes
        .into_iter()
        .map(|stroke| {
            stroke
                .into_iter()
                .map(|(x, y)| {
                    let x = x + uniform(-jitter, jitter);
                    let y = y + uniform(-jitter, jitter);
                    let (u, v) = ((x - 0.5) * width, (y - 0.5) * height);
                    let u = u + shear * v;
                    (cos * u - sin * v, sin * u + cos * v)
                })
                .collect()
        })
        .collect();
    fit(&mut strokes, (centre + tx, centre + ty), half_width + 2.0);

    let mut segments = Vec::new();
    for pts in &strokes {
        segments.extend(pts.windows(2).map(|w| (w[0], w[1])));
    }

    let mut pixels = vec![0u8; GLYPH_PIXELS];
    for y in 0..GLYPH_SIDE {
        for x in 0..GLYPH_SIDE {
            let p = (x as f64, y as f64);
            let d = segments.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min);
            let coverage = (half_width + 0.5 - d).clamp(0.0, 1.0);
            pixels[y * GLYPH_SIDE + x] = (coverage * peak * 255.0).round() as u8;
        }
    }
    Ok(pixels)
}

/// Writes `per_class` glyphs of every class in `classes` as headerless CSV,
/// interleaving classes. Record `r` is drawn from `derive_seed(seed, r)`.
pub fn write_glyph_corpus<W: Write>(classes: &[u8], per_class: usize, seed: u64, mut sink: W) -> Result<u64> {
    if classes.is_empty() || per_class == 0 {
        return Err(Error::arg("need at least one class and one glyph per class"));
    }
    let mut records = 0u64;
    let mut line = String::with_capacity(4 * GLYPH_PIXELS);
    for _ in 0..per_class {
        for &c in classes {
            let mut rng = Xoshiro256::seed_from_u64(derive_seed(seed, records));
            let pixels = render_glyph(c, &mut rng)?;
            line.clear();
            line.push_str(&c.to_string());
            for p in pixels {
                line.push(',');
                line.push_str(&p.to_string());
            }
            line.push('\n');
            sink.write_all(line.as_bytes())?;
            records += 1;
        }
    }
    Ok(records)
}
