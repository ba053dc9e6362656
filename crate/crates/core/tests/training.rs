mod common;

use common::checks::glyph_pool;
use common::scalar_adam_on_square;
use overseg::nn::{UNetConfig, UNetParams};
use overseg::synth::{generate_dataset, SynthConfig};
use overseg::train::{adam_step, train, train_with, AdamConfig, AdamState, TrainConfig};

#[test]
fn adam_matches_scalar_reference_on_square() {
    let cfg = UNetConfig { n_classes: 1, base_filters: 1, depth: 1, height: 4, width: 4, ..Default::default() };
    let mut params = UNetParams::<f32>::zeros(&cfg);
    for t in params.tensors_mut() {
        t.data_mut().fill(1.0);
    }
    let mut state = AdamState::new(&params);
    let adam = AdamConfig { learning_rate: 0.1, ..Default::default() };
    for _ in 0..100 {
        let mut grads = params.clone();
        for t in grads.tensors_mut() {
            t.data_mut().iter_mut().for_each(|g| *g *= 2.0);
        }
        adam_step(&mut params, &grads, &mut state, &adam).unwrap();
    }
    let want = scalar_adam_on_square(1.0, 0.1, 100);
    assert!(want.abs() < 0.05, "{want}");
    for t in params.tensors() {
        for &v in t.data() {
            assert!((v as f64 - want).abs() < 1e-4, "{v} vs {want}");
            assert!(v.abs() < 0.05);
        }
    }
}

fn tiny_setup() -> (overseg::synth::Dataset, overseg::synth::Dataset, UNetConfig) {
    let pool = glyph_pool(20, 5);
    let synth = SynthConfig::default();
    let tr = generate_dataset(&pool, &synth, 48, 1).unwrap();
    let va = generate_dataset(&pool, &synth, 16, 2).unwrap();
    let cfg = UNetConfig { base_filters: 4, ..Default::default() };
    (tr, va, cfg)
}

#[test]
fn identical_seeds_give_identical_runs_and_checkpoints() {
    let (tr, va, cfg) = tiny_setup();
    let tc = TrainConfig { epochs: 2, batch_size: 16, shuffle_seed: 3, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let a = train_with(&tr, &va, &cfg, &tc, 9, Some(&dir.path().join("a")), |_| {}).unwrap();
    let b = train_with(&tr, &va, &cfg, &tc, 9, Some(&dir.path().join("b")), |_| {}).unwrap();
    assert_eq!(a.history.len(), 2);
    assert_eq!(a.history[0].train_loss, b.history[0].train_loss);
    assert_eq!(a.params, b.params);
    assert_eq!(a.checkpoints.len(), 2);
    for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let c = train(&tr, &va, &cfg, &TrainConfig { shuffle_seed: 4, ..tc.clone() }, 9).unwrap();
    assert_ne!(c.params, a.params);
}

#[test]
fn history_has_one_entry_per_epoch() {
    let (tr, va, cfg) = tiny_setup();
    let tc = TrainConfig { epochs: 3, batch_size: 20, ..Default::default() };
    let mut seen = Vec::new();
    let out = train_with(&tr, &va, &cfg, &tc, 1, None, |r| seen.push(r.epoch)).unwrap();
    assert_eq!(seen, vec![1, 2, 3]);
    assert_eq!(out.history.len(), 3);
    let mut csv = Vec::new();
    overseg::train::write_history_csv(&out.history, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
}

#[test]
fn default_dataset_is_mostly_background() {
    let pool = glyph_pool(20, 6);
    let ds = generate_dataset(&pool, &SynthConfig::default(), 500, 3).unwrap();
    let f = ds.background_fraction();
    assert!(f > 0.8, "{f}");
}

#[test]
fn early_training_loss_mostly_decreases() {
    let pool = glyph_pool(100, 7);
    let synth = SynthConfig::default();
    let tr = generate_dataset(&pool, &synth, 1000, 11).unwrap();
    let va = generate_dataset(&pool, &synth, 64, 12).unwrap();
    let tc = TrainConfig { epochs: 3, ..Default::default() };
    let out = train(&tr, &va, &UNetConfig::default(), &tc, 0).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
    let drops = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    // Statistical smoke property: report rather than fail.
    if drops < 2 {
        eprintln!("warning: training loss rose in more than one of the first epochs: {losses:?}");
    }
    assert!(losses.iter().all(|l| l.is_finite()));
}
