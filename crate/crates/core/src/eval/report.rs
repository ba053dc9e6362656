use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{UNetConfig, UNetParams};
use crate::synth::{Dataset, Sample};
use crate::train::loss::clipped_bce;
use crate::train::{predict_chunks, MetricsReport, PixelCounts};

use super::{classify_outcome, mask_max_fluxes, EvalConfig, Outcome, PredictedMasks, METRIC_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
}

/// Uniform bins over [0, 1]; every bin is right-open except the last.
/// Values outside [0, 1] fall into the nearest end bin.
pub fn flux_histogram(values: &[f32], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins < 2 {
        return Err(Error::arg("histogram needs at least 2 bins"));
    }
    let mut counts = vec![0u64; bins];
    for &v in values {
        let i = ((v as f64) * bins as f64).floor();
        counts[(i.max(0.0) as usize).min(bins - 1)] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin { bin_lo: i as f64 / bins as f64, bin_hi: (i + 1) as f64 / bins as f64, count })
        .collect())
}

pub fn write_histogram_csv<W: Write>(bins: &[HistogramBin], mut sink: W) -> Result<()> {
    writeln!(sink, "bin_lo,bin_hi,count")?;
    for b in bins {
        writeln!(sink, "{},{},{}", b.bin_lo, b.bin_hi, b.count)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub index: usize,
    /// Class positions within the dataset's class set, ascending.
    pub truth: Vec<usize>,
    /// Truth classes as letters, e.g. "AC".
    pub label: String,
    pub max_fluxes: Vec<f32>,
    pub category: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub loss: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    /// Fraction of (sample, class, pixel) target slots that are 0.
    pub background_fraction: f64,
}

impl ReportMetrics {
    pub fn metrics_report(&self) -> MetricsReport {
        let counts = PixelCounts { tp: self.tp, fp: self.fp, tn: self.tn, fn_: self.fn_ };
        MetricsReport::from_counts(counts, self.loss)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeShare {
    pub count: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub struct OutcomeCounts {
    pub correct: OutcomeShare,
    pub correct_with_residuals: OutcomeShare,
    pub confused: OutcomeShare,
    pub spurious: OutcomeShare,
    pub missed: OutcomeShare,
}

impl OutcomeCounts {
    pub fn get(&self, o: Outcome) -> OutcomeShare {
        match o {
            Outcome::Correct => self.correct,
            Outcome::CorrectWithResiduals => self.correct_with_residuals,
            Outcome::Confused => self.confused,
            Outcome::Spurious => self.spurious,
            Outcome::Missed => self.missed,
        }
    }

    fn get_mut(&mut self, o: Outcome) -> &mut OutcomeShare {
        match o {
            Outcome::Correct => &mut self.correct,
            Outcome::CorrectWithResiduals => &mut self.correct_with_residuals,
            Outcome::Confused => &mut self.confused,
            Outcome::Spurious => &mut self.spurious,
            Outcome::Missed => &mut self.missed,
        }
    }
}

/// Aggregate test results. Field order is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub metrics: ReportMetrics,
    pub outcomes: OutcomeCounts,
    pub success_rate: f64,
    pub histogram: Vec<HistogramBin>,
    pub config: EvalConfig,
    pub samples: Vec<OutcomeRecord>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    /// Every per-panel maximum flux, sample-major.
    pub fn all_max_fluxes(&self) -> Vec<f32> {
        self.samples.iter().flat_map(|r| r.max_fluxes.iter().copied()).collect()
    }
}

struct SampleEval {
    counts: PixelCounts,
    loss_sum: f64,
    background: u64,
    record: OutcomeRecord,
}

fn evaluate_sample(index: usize, sample: &Sample, pred: &PredictedMasks, class_set: &[u8], config: &EvalConfig) -> Result<SampleEval> {
    let (h, w) = (sample.input.height(), sample.input.width());
    if pred.height != h || pred.width != w || pred.n_classes() != sample.masks.len() {
        return Err(Error::arg(format!("prediction for sample {index} does not match its dimensions")));
    }
    let mut counts = PixelCounts::default();
    let mut loss_sum = 0.0;
    for (plane, mask) in pred.planes.iter().zip(&sample.masks) {
        for (&p, &b) in plane.iter().zip(mask.bits()) {
            counts.add(p >= METRIC_THRESHOLD, b == 1);
            loss_sum += clipped_bce(p as f64, b as f64);
        }
    }
    let background = sample.masks.iter().map(|m| (m.bits().len() - m.ink_count()) as u64).sum();
    let truth = sample.truth_classes();
    let max_fluxes = mask_max_fluxes(pred);
    let category = classify_outcome(&max_fluxes, &truth, config);
    let ids: Vec<u8> = truth.iter().map(|&c| class_set[c]).collect();
    Ok(SampleEval {
        counts,
        loss_sum,
        background,
        record: OutcomeRecord {
            index,
            truth,
            label: ids.iter().map(|&c| crate::corpus::class_letter(c)).collect(),
            max_fluxes,
            category,
        },
    })
}

/// Builds the report from externally supplied per-sample predictions.
pub fn report_from_predictions(dataset: &Dataset, predictions: &[PredictedMasks], config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::arg("cannot evaluate an empty dataset"));
    }
    if predictions.len() != dataset.len() {
        return Err(Error::arg(format!("{} predictions for {} samples", predictions.len(), dataset.len())));
    }
    let class_set = &dataset.config.class_set;
    let per_sample: Vec<Result<SampleEval>> = dataset
        .samples
        .par_iter()
        .zip(predictions.par_iter())
        .enumerate()
        .map(|(i, (s, p))| evaluate_sample(i, s, p, class_set, config))
        .collect();

    let mut counts = PixelCounts::default();
    let mut loss_sum = 0.0;
    let mut background = 0u64;
    let mut outcomes = OutcomeCounts::default();
    let mut samples = Vec::with_capacity(dataset.len());
    for r in per_sample {
        let e = r?;
        counts = counts.merge(e.counts);
        loss_sum += e.loss_sum;
        background += e.background;
        outcomes.get_mut(e.record.category).count += 1;
        samples.push(e.record);
    }
    let n = dataset.len();
    for o in Outcome::ALL {
        let share = outcomes.get_mut(o);
        share.fraction = share.count as f64 / n as f64;
    }
    let successes = outcomes.correct.count + outcomes.correct_with_residuals.count;
    let total = counts.total();
    let m = MetricsReport::from_counts(counts, loss_sum / total as f64);
    let fluxes: Vec<f32> = samples.iter().flat_map(|r| r.max_fluxes.iter().copied()).collect();
    Ok(EvalReport {
        n_samples: n,
        metrics: ReportMetrics {
            accuracy: m.binary_accuracy,
            precision: m.precision,
            recall: m.recall,
            tp: counts.tp,
            fp: counts.fp,
            tn: counts.tn,
            fn_: counts.fn_,
            loss: m.loss,
            precision_undefined: m.precision_undefined,
            recall_undefined: m.recall_undefined,
            background_fraction: background as f64 / total as f64,
        },
        outcomes,
        success_rate: successes as f64 / n as f64,
        histogram: flux_histogram(&fluxes, config.histogram_bins)?,
        config: config.clone(),
        samples,
    })
}

/// Predicts every sample of `dataset` and aggregates metrics, outcomes and
/// the max-flux histogram.
pub fn test_report(params: &UNetParams<f32>, unet: &UNetConfig, dataset: &Dataset, config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::arg("cannot evaluate an empty dataset"));
    }
    let mut predictions = Vec::with_capacity(dataset.len());
    for chunk in predict_chunks(params, unet, &dataset.samples)? {
        predictions.extend(PredictedMasks::from_batch(&chunk)?);
    }
    report_from_predictions(dataset, &predictions, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, tests::block_pool, SynthConfig};

    fn dataset(n: usize) -> Dataset {
        let cfg = SynthConfig { min_ink_pixels: 4, ..Default::default() };
        generate_dataset(&block_pool(5), &cfg, n, 7).unwrap()
    }

    fn truth_predictions(d: &Dataset, eps: f32) -> Vec<PredictedMasks> {
        d.samples
            .iter()
            .map(|s| PredictedMasks {
                height: s.input.height(),
                width: s.input.width(),
                planes: s
                    .masks
                    .iter()
                    .map(|m| m.bits().iter().map(|&b| if b == 1 { 1.0 - eps } else { eps }).collect())
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn histogram_examples() {
        let h = flux_histogram(&[], 4).unwrap();
        assert!(h.iter().all(|b| b.count == 0));
        let h = flux_histogram(&[1.0], 4).unwrap();
        assert_eq!(h[3].count, 1);
        let h = flux_histogram(&[0.0, 0.25, 0.2499, 0.5], 4).unwrap();
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 1, 1, 0]);
        assert!(flux_histogram(&[0.1], 1).is_err());
    }

    #[test]
    fn oracle_predictor_is_perfect() {
        let d = dataset(40);
        let r = report_from_predictions(&d, &truth_predictions(&d, 1e-3), &EvalConfig::default()).unwrap();
        assert_eq!(r.success_rate, 1.0);
        assert_eq!(r.outcomes.correct.count, 40);
        assert_eq!(r.metrics.precision, 1.0);
        assert_eq!(r.metrics.recall, 1.0);
        assert!(r.metrics.background_fraction > 0.5);
    }

    #[test]
    fn zero_predictor_misses_everything() {
        let d = dataset(40);
        let preds = truth_predictions(&d, 0.0)
            .into_iter()
            .map(|mut p| {
                p.planes.iter_mut().for_each(|pl| pl.fill(0.0));
                p
            })
            .collect::<Vec<_>>();
        let r = report_from_predictions(&d, &preds, &EvalConfig::default()).unwrap();
        assert_eq!(r.success_rate, 0.0);
        assert_eq!(r.outcomes.missed.count, 40);
        assert!(r.metrics.precision_undefined);
    }

    #[test]
    fn json_keys_in_fixed_order() {
        let d = dataset(5);
        let r = report_from_predictions(&d, &truth_predictions(&d, 0.01), &EvalConfig::default()).unwrap();
        let json = r.to_json().unwrap();
        let keys = ["\"n_samples\"", "\"metrics\"", "\"outcomes\"", "\"success_rate\"", "\"histogram\"", "\"config\"", "\"samples\""];
        let pos: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        let inner = ["\"accuracy\"", "\"precision\"", "\"recall\"", "\"tp\"", "\"fp\"", "\"tn\"", "\"fn\"", "\"loss\""];
        let pos: Vec<usize> = inner.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
