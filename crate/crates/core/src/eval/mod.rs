//! Inference, max-flux statistics, the outcome taxonomy and test reports.
//!
//! "Flux" is a predicted mask value on the sigmoid's (0, 1) scale. Min-max
//! scaling is applied for display only; classification always uses raw
//! fluxes.

mod render;
mod report;

use serde::{Deserialize, Serialize};

pub use render::{minmax_scale, panel_file_name, panel_layout, render_panel, PanelLayout, SEPARATOR};
pub use report::{
    flux_histogram, report_from_predictions, test_report, write_histogram_csv, EvalReport, HistogramBin,
    OutcomeRecord,
};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::nn::{unet_forward, Tensor, UNetConfig, UNetParams};

/// Probability threshold for the pixel metrics in reports.
pub const METRIC_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Minimum max-flux for a class to count as detected.
    pub detect_threshold: f32,
    /// Largest wrong-class max-flux still treated as negligible.
    pub noise_threshold: f32,
    pub histogram_bins: usize,
    pub render_scale: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { detect_threshold: 0.5, noise_threshold: 0.1, histogram_bins: 20, render_scale: 4 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_threshold > 0.0 && self.noise_threshold <= self.detect_threshold && self.detect_threshold < 1.0) {
            return Err(Error::arg("thresholds must satisfy 0 < noise_threshold <= detect_threshold < 1"));
        }
        if self.histogram_bins < 2 {
            return Err(Error::arg("histogram_bins must be at least 2"));
        }
        if self.render_scale == 0 {
            return Err(Error::arg("render_scale must be at least 1"));
        }
        Ok(())
    }
}

/// Per-class probability planes for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedMasks {
    pub height: usize,
    pub width: usize,
    pub planes: Vec<Vec<f32>>,
}

impl PredictedMasks {
    pub fn n_classes(&self) -> usize {
        self.planes.len()
    }

    /// Splits a `[n_classes, N, H, W]` (or `[n_classes, H, W]`) probability
    /// tensor into one `PredictedMasks` per image.
    pub fn from_batch(probabilities: &Tensor<f32>) -> Result<Vec<Self>> {
        let (c, n, h, w) = match *probabilities.shape() {
            [c, h, w] => (c, 1, h, w),
            [c, n, h, w] => (c, n, h, w),
            _ => return Err(Error::arg("expected a [C,N,H,W] probability tensor")),
        };
        let d = probabilities.data();
        Ok((0..n)
            .map(|i| PredictedMasks {
                height: h,
                width: w,
                planes: (0..c).map(|k| d[(k * n + i) * h * w..][..h * w].to_vec()).collect(),
            })
            .collect())
    }
}

/// Network probabilities for one image.
pub fn predict(params: &UNetParams<f32>, config: &UNetConfig, image: &GrayImage) -> Result<PredictedMasks> {
    let (probs, _) = unet_forward(params, config, image)?;
    Ok(PredictedMasks::from_batch(&probs)?.remove(0))
}

/// Maximum of every class plane (0 for an empty plane).
pub fn mask_max_fluxes(masks: &PredictedMasks) -> Vec<f32> {
    masks.planes.iter().map(|p| p.iter().copied().fold(0.0f32, f32::max)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Correct,
    CorrectWithResiduals,
    Confused,
    Spurious,
    Missed,
}

impl Outcome {
    pub const ALL: [Outcome; 5] =
        [Outcome::Correct, Outcome::CorrectWithResiduals, Outcome::Confused, Outcome::Spurious, Outcome::Missed];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Correct => "CORRECT",
            Outcome::CorrectWithResiduals => "CORRECT_WITH_RESIDUALS",
            Outcome::Confused => "CONFUSED",
            Outcome::Spurious => "SPURIOUS",
            Outcome::Missed => "MISSED",
        }
    }

    pub fn is_success(self) -> bool {
        matches!(self, Outcome::Correct | Outcome::CorrectWithResiduals)
    }
}

/// Assigns one outcome from per-class max fluxes and the true class set.
///
/// With `D` the classes at or above the detection threshold and `R` the
/// largest wrong-class flux, the first matching rule wins:
/// 1. `D == truth` and `R < noise` → correct
/// 2. `D == truth` → correct with residuals
/// 3. `|D| == |truth|` → confused
/// 4. `D ⊋ truth`, or `R ≥ detect` → spurious
/// 5. otherwise → missed
pub fn classify_outcome(max_fluxes: &[f32], truth: &[usize], config: &EvalConfig) -> Outcome {
    let detected: Vec<usize> =
        (0..max_fluxes.len()).filter(|&c| max_fluxes[c] >= config.detect_threshold).collect();
    let residual = (0..max_fluxes.len())
        .filter(|c| !truth.contains(c))
        .map(|c| max_fluxes[c])
        .fold(0.0f32, f32::max);
    let mut truth_sorted = truth.to_vec();
    truth_sorted.sort_unstable();
    truth_sorted.dedup();

    let exact = detected == truth_sorted;
    if exact && residual < config.noise_threshold {
        Outcome::Correct
    } else if exact {
        Outcome::CorrectWithResiduals
    } else if detected.len() == truth_sorted.len() {
        Outcome::Confused
    } else if truth_sorted.iter().all(|c| detected.contains(c)) || residual >= config.detect_threshold {
        // `detected` is a strict superset here since it differs from truth in size
        // and contains it; the residual clause covers the remaining size mismatches.
        Outcome::Spurious
    } else {
        Outcome::Missed
    }
}
