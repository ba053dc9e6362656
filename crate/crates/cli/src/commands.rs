use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use overseg::corpus::{assign_splits, class_letter, parse_corpus_csv, LetterCorpus, Split, SplitFractions};
use overseg::eval::{mask_max_fluxes, minmax_scale, panel_file_name, predict as predict_masks, render_panel, test_report, write_histogram_csv};
use overseg::image::{quantize_unit, read_pgm, write_pgm, GrayImage, Raster};
use overseg::nn::{load_model, save_model};
use overseg::synth::{generate_dataset, read_dataset, write_dataset, Dataset};
use overseg::train::{train_with, write_history_csv};

use crate::config::{apply, CliConfig};
use crate::failure::Failure;
use crate::{CorpusArgs, CorpusStatsArgs, EvalArgs, GenerateArgs, PredictArgs, SynthCorpusArgs, TrainArgs};

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), Failure> {
    w.flush().map_err(|e| Failure::io(path, e))
}

fn load_corpus(args: &CorpusArgs, cfg: &mut CliConfig) -> Result<LetterCorpus, Failure> {
    apply(&mut cfg.synth.class_set, args.classes.clone());
    let corpus = parse_corpus_csv(open(&args.corpus)?, &cfg.synth.class_set, cfg.synth.mask_threshold)
        .map_err(|e| Failure::at(&args.corpus, e))?;
    assign_splits(corpus, SplitFractions::default(), args.split_seed).map_err(|e| Failure::at(&args.corpus, e))
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    read_dataset(open(path)?).map_err(|e| Failure::at(path, e))
}

fn letters(ids: &[u8]) -> String {
    ids.iter().map(|&c| class_letter(c)).collect()
}

pub fn corpus_stats(args: CorpusStatsArgs) -> Result<(), Failure> {
    let mut cfg = CliConfig::load(args.corpus.config.as_deref())?;
    let corpus = load_corpus(&args.corpus, &mut cfg)?;
    let splits = [Split::Train, Split::Val, Split::Test].map(|s| corpus.split_counts(s));
    println!("instances: {}", corpus.len());
    println!("class  count  train  val  test");
    for (i, &c) in corpus.classes().iter().enumerate() {
        println!(
            "{:<5}  {:>5}  {:>5}  {:>3}  {:>4}",
            class_letter(c),
            corpus.instances(i).len(),
            splits[0][i],
            splits[1][i],
            splits[2][i]
        );
    }
    let (lo, hi) = corpus.intensity_range();
    println!("intensity range: [{lo:.4}, {hi:.4}]");
    Ok(())
}

pub fn synth_corpus(args: SynthCorpusArgs) -> Result<(), Failure> {
    let mut out = create(&args.out)?;
    let n = overseg::glyphs::write_glyph_corpus(&overseg::glyphs::SUPPORTED_CLASSES, args.per_class, args.seed, &mut out)
        .map_err(|e| Failure::at(&args.out, e))?;
    finish(out, &args.out)?;
    println!("wrote {n} glyphs to {}", args.out.display());
    Ok(())
}

pub fn generate(args: GenerateArgs) -> Result<(), Failure> {
    if args.count == 0 {
        return Err(Failure::argument("--count must be at least 1"));
    }
    let split = Split::from_str(&args.split).map_err(|e| Failure::argument(e.to_string()))?;
    let mut cfg = CliConfig::load(args.corpus.config.as_deref())?;
    let s = &mut cfg.synth;
    apply(&mut s.p_single, args.p_single);
    apply(&mut s.offset_max, args.offset_max);
    apply(&mut s.contrast_range.0, args.contrast_min);
    apply(&mut s.contrast_range.1, args.contrast_max);
    apply(&mut s.noise_sigma, args.noise_sigma);
    apply(&mut s.min_ink_pixels, args.min_ink_pixels);
    if let Some(classes) = &args.corpus.classes {
        s.class_set = classes.clone();
    }
    cfg.synth.validate()?;
    let corpus = load_corpus(&args.corpus, &mut cfg)?;
    let mut dataset = generate_dataset(&corpus.pool(split), &cfg.synth, args.count, args.seed)?;
    dataset.split = Some(split);
    let mut out = create(&args.out)?;
    let bytes = write_dataset(&dataset, &mut out).map_err(|e| Failure::at(&args.out, e))?;
    finish(out, &args.out)?;
    println!("wrote {} {} samples ({bytes} bytes) to {}", dataset.len(), split.name(), args.out.display());
    Ok(())
}

/// `out` with a trailing `.unet` removed.
fn model_prefix(out: &Path) -> PathBuf {
    match out.extension() {
        Some(ext) if ext == "unet" => out.with_extension(""),
        _ => out.to_path_buf(),
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = CliConfig::load(args.config.as_deref())?;
    apply(&mut cfg.train.epochs, args.epochs);
    apply(&mut cfg.train.batch_size, args.batch);
    apply(&mut cfg.train.learning_rate, args.lr);
    apply(&mut cfg.train.shuffle_seed, args.shuffle_seed);
    apply(&mut cfg.unet.base_filters, args.base_filters);
    apply(&mut cfg.unet.depth, args.depth);
    if args.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg).map_err(|e| Failure::argument(e.to_string()))?);
        return Ok(());
    }
    cfg.train.validate()?;

    let train_set = load_dataset(&args.train)?;
    let val_set = load_dataset(&args.val)?;
    (cfg.unet.height, cfg.unet.width) = train_set.dims();
    cfg.unet.n_classes = train_set.n_classes();
    cfg.unet.validate()?;

    let prefix = model_prefix(&args.out);
    let history_path = args.history.clone().unwrap_or_else(|| with_suffix(&prefix, ".history.csv"));
    let epochs = cfg.train.epochs;
    let outcome = train_with(&train_set, &val_set, &cfg.unet, &cfg.train, args.seed, Some(&prefix), |r| {
        println!(
            "epoch {:>2}/{epochs}  train_loss {:.5}  val_loss {:.5}  accuracy {:.4}  precision {:.4}  recall {:.4}",
            r.epoch, r.train_loss, r.val.loss, r.val.binary_accuracy, r.val.precision, r.val.recall
        );
    })
    .map_err(|e| Failure::at(&prefix, e))?;

    let mut out = create(&args.out)?;
    save_model(&outcome.params, &cfg.unet, &mut out).map_err(|e| Failure::at(&args.out, e))?;
    finish(out, &args.out)?;
    let mut hist = create(&history_path)?;
    write_history_csv(&outcome.history, &mut hist).map_err(|e| Failure::at(&history_path, e))?;
    finish(hist, &history_path)?;
    println!("wrote model {} and history {}", args.out.display(), history_path.display());
    Ok(())
}

/// `<dir>/<stem>.histogram.csv` for a report at `<dir>/<stem>.json`.
fn histogram_path(report: &Path) -> PathBuf {
    let stem = report.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    report.with_file_name(format!("{stem}.histogram.csv"))
}

pub fn eval(args: EvalArgs) -> Result<(), Failure> {
    let mut cfg = CliConfig::load(args.config.as_deref())?;
    let e = &mut cfg.eval;
    apply(&mut e.detect_threshold, args.detect_threshold);
    apply(&mut e.noise_threshold, args.noise_threshold);
    apply(&mut e.histogram_bins, args.bins);
    apply(&mut e.render_scale, args.render_scale);
    cfg.eval.validate()?;
    if args.render_count > 0 && args.render_dir.is_none() {
        return Err(Failure::argument("--render-count needs --render-dir"));
    }

    let (params, unet) = load_model(open(&args.model)?).map_err(|e| Failure::at(&args.model, e))?;
    let dataset = load_dataset(&args.data)?;
    let report = test_report(&params, &unet, &dataset, &cfg.eval)?;

    let mut out = create(&args.report)?;
    out.write_all(report.to_json()?.as_bytes()).map_err(|e| Failure::io(&args.report, e))?;
    out.write_all(b"\n").map_err(|e| Failure::io(&args.report, e))?;
    finish(out, &args.report)?;
    let hpath = histogram_path(&args.report);
    let mut h = create(&hpath)?;
    write_histogram_csv(&report.histogram, &mut h).map_err(|e| Failure::at(&hpath, e))?;
    finish(h, &hpath)?;

    if let Some(dir) = &args.render_dir {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        for rec in report.samples.iter().take(args.render_count) {
            let sample = &dataset.samples[rec.index];
            let pred = predict_masks(&params, &unet, &sample.input)?;
            let panel = render_panel(sample, &pred, &cfg.eval)?;
            let ids: Vec<u8> = rec.truth.iter().map(|&c| dataset.config.class_set[c]).collect();
            let path = dir.join(panel_file_name(rec.index, &ids, rec.category));
            let mut f = create(&path)?;
            write_pgm(&panel, &mut f).map_err(|e| Failure::at(&path, e))?;
            finish(f, &path)?;
        }
    }

    let m = &report.metrics;
    println!("samples {}  accuracy {:.4}  precision {:.4}  recall {:.4}  loss {:.5}", report.n_samples, m.accuracy, m.precision, m.recall, m.loss);
    for o in overseg::eval::Outcome::ALL {
        let s = report.outcomes.get(o);
        println!("{:<24}{:>6}  {:.4}", o.name(), s.count, s.fraction);
    }
    println!("success_rate {:.4}", report.success_rate);
    println!("wrote {} and {}", args.report.display(), hpath.display());
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<(), Failure> {
    let mut cfg = CliConfig::load(args.config.as_deref())?;
    apply(&mut cfg.eval.detect_threshold, args.detect_threshold);
    cfg.eval.validate()?;
    let (params, unet) = load_model(open(&args.model)?).map_err(|e| Failure::at(&args.model, e))?;
    let raster = read_pgm(open(&args.image)?).map_err(|e| Failure::at(&args.image, e))?;
    if (raster.height, raster.width) != (unet.height, unet.width) {
        return Err(Failure::argument(format!(
            "{}: image is {}x{}, the model expects {}x{}",
            args.image.display(),
            raster.height,
            raster.width,
            unet.height,
            unet.width
        )));
    }
    // Files show ink dark on light; the network sees ink high.
    let inverted: Vec<u8> = raster.data.iter().map(|&v| 255 - v).collect();
    let image = GrayImage::from_u8(raster.height, raster.width, &inverted)?;
    let pred = predict_masks(&params, &unet, &image)?;
    let fluxes = mask_max_fluxes(&pred);

    let mut detected = Vec::new();
    for (c, plane) in pred.planes.iter().enumerate() {
        let letter = class_letter(c as u8);
        let path = with_suffix(&args.out_prefix, &format!("_{letter}.pgm"));
        let data = minmax_scale(plane).iter().map(|&v| 255 - quantize_unit(v)).collect();
        let mut f = create(&path)?;
        write_pgm(&Raster { height: pred.height, width: pred.width, data }, &mut f).map_err(|e| Failure::at(&path, e))?;
        finish(f, &path)?;
        println!("{letter} {:.6}", fluxes[c]);
        if fluxes[c] >= cfg.eval.detect_threshold {
            detected.push(c as u8);
        }
    }
    let d = letters(&detected);
    println!("detected: {}", if d.is_empty() { "(none)" } else { &d });
    Ok(())
}
