use crate::corpus::class_letter;
use crate::error::{Error, Result};
use crate::image::{quantize_unit, Raster};
use crate::synth::Sample;

use super::{EvalConfig, Outcome, PredictedMasks};

/// Separator width between tiles, in panel pixels.
pub const SEPARATOR: usize = 2;
const SEPARATOR_SHADE: u8 = 128;
const BLANK_SHADE: u8 = 255;

/// Panel geometry: three rows (input, ground-truth masks, predicted masks)
/// of `cols` tiles, framed and separated by [`SEPARATOR`] pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PanelLayout {
    pub tile_height: usize,
    pub tile_width: usize,
    pub rows: usize,
    pub cols: usize,
    pub height: usize,
    pub width: usize,
}

impl PanelLayout {
    /// Top-left panel pixel of tile (row, col).
    pub fn origin(&self, row: usize, col: usize) -> (usize, usize) {
        (SEPARATOR + row * (self.tile_height + SEPARATOR), SEPARATOR + col * (self.tile_width + SEPARATOR))
    }
}

pub fn panel_layout(height: usize, width: usize, n_classes: usize, scale: usize) -> PanelLayout {
    let (rows, cols) = (3, n_classes.max(1));
    let (th, tw) = (height * scale, width * scale);
    PanelLayout {
        tile_height: th,
        tile_width: tw,
        rows,
        cols,
        height: rows * (th + SEPARATOR) + SEPARATOR,
        width: cols * (tw + SEPARATOR) + SEPARATOR,
    }
}

/// (x − min)/(max − min), or all zeros for a constant plane.
pub fn minmax_scale(plane: &[f32]) -> Vec<f32> {
    let (lo, hi) = plane.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![0.0; plane.len()];
    }
    let span = hi - lo;
    plane.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

fn blit(panel: &mut Raster, layout: &PanelLayout, row: usize, col: usize, values: &[f32], width: usize, scale: usize) {
    let (oy, ox) = layout.origin(row, col);
    for ty in 0..layout.tile_height {
        for tx in 0..layout.tile_width {
            let v = values[(ty / scale) * width + tx / scale];
            panel.set(oy + ty, ox + tx, 255 - quantize_unit(v));
        }
    }
}

/// Renders input, ground-truth masks and min-max scaled predictions, with
/// ink shown dark on a light background.
pub fn render_panel(sample: &Sample, predicted: &PredictedMasks, config: &EvalConfig) -> Result<Raster> {
    let (h, w) = (sample.input.height(), sample.input.width());
    let n = sample.masks.len();
    if predicted.height != h || predicted.width != w || predicted.n_classes() != n {
        return Err(Error::arg(format!(
            "prediction {}x{}x{} does not match sample {n}x{h}x{w}",
            predicted.n_classes(),
            predicted.height,
            predicted.width
        )));
    }
    let s = config.render_scale.max(1);
    let layout = panel_layout(h, w, n, s);
    let mut panel = Raster::new(layout.height, layout.width, SEPARATOR_SHADE);
    for row in 0..layout.rows {
        for col in 0..layout.cols {
            let (oy, ox) = layout.origin(row, col);
            for y in oy..oy + layout.tile_height {
                panel.data[y * layout.width + ox..][..layout.tile_width].fill(BLANK_SHADE);
            }
        }
    }
    blit(&mut panel, &layout, 0, 0, sample.input.pixels(), w, s);
    for (c, m) in sample.masks.iter().enumerate() {
        let plane: Vec<f32> = m.bits().iter().map(|&b| b as f32).collect();
        blit(&mut panel, &layout, 1, c, &plane, w, s);
    }
    for (c, p) in predicted.planes.iter().enumerate() {
        blit(&mut panel, &layout, 2, c, &minmax_scale(p), w, s);
    }
    Ok(panel)
}

/// `panel_<index>_<truthclasses>_<category>.pgm`, truth classes as letters.
pub fn panel_file_name(index: usize, truth_ids: &[u8], outcome: Outcome) -> String {
    let letters: String = truth_ids.iter().map(|&c| class_letter(c)).collect();
    format!("panel_{index:05}_{letters}_{}.pgm", outcome.name())
}
