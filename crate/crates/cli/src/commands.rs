use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use glosslink::corpus::{compute_stats, load_keyfile, sample_dev_split, CorpusFormat};
use glosslink::encoder::{Encoder, EncoderConfig, ReferenceEncoder};
use glosslink::eval::{
    emit_report, evaluate_by_split, mcs_predictions, predictions_from_records, read_predictions,
    score_f1, write_predictions, ReportEntry, ReportFormat,
};
use glosslink::inventory::InventoryFormat;
use glosslink::manifest::RunManifest;
use glosslink::model::{checkpoint_format, extract_frozen_features, FROZEN_LAYERS};
use glosslink::pipeline::{run_demo, DemoConfig};
use glosslink::train::{
    train_biencoder, train_cls_baseline, FeatureMode, Mixing, TrainConfig, TrainOptions,
    BEST_CHECKPOINT, REPORT_FILE,
};
use glosslink::transfer::{
    run_transfer, write_pairs, write_pharaoh, DictionaryProvider, HttpProvider, IdentityProvider,
    TransferOptions, TranslationProvider,
};
use glosslink::{BiEncoderModel, Corpus, Error, Inventory, LinearSenseClassifier, PredictionRecord};
use indexmap::IndexMap;
use serde_json::json;

use crate::{
    BuildInventoryArgs, Command, CorpusArgs, DemoArgs, EvaluateArgs, InventoryFormatArg, ModelKind,
    PredictArgs, ProviderArg, ReportFormatArg, StatsArgs, TrainArgs, TransferArgs,
};

const BIENCODER_FORMAT: &str = "glosslink.biencoder";
const CLS_FORMAT: &str = "glosslink.cls";

pub struct Failure {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            kind: "usage".into(),
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: 1,
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 1,
            kind: "io".into(),
            message: e.to_string(),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

pub fn dispatch(command: Command) -> Outcome {
    match command {
        Command::BuildInventory(a) => build_inventory(a),
        Command::Stats(a) => stats(a),
        Command::Transfer(a) => transfer(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Demo(a) => demo(a),
    }
}

fn inventory_format(arg: Option<InventoryFormatArg>, path: &Path) -> InventoryFormat {
    match arg {
        Some(InventoryFormatArg::Tsv) => InventoryFormat::Tsv,
        Some(InventoryFormatArg::Jsonl) => InventoryFormat::JsonLines,
        None => InventoryFormat::from_path(path),
    }
}

fn load_inventory(path: &Path) -> Outcome<Inventory> {
    Ok(Inventory::load(path, InventoryFormat::from_path(path))?)
}

fn is_xml(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("xml")
}

fn load_corpus(path: &Path, keys: Option<&Path>) -> Outcome<Corpus> {
    if is_xml(path) {
        return Ok(Corpus::read(path, CorpusFormat::Xml { keyfile: keys })?);
    }
    let corpus = Corpus::read(path, CorpusFormat::Jsonl)?;
    Ok(match keys {
        Some(k) => corpus.with_gold(load_keyfile(k)?)?,
        None => corpus,
    })
}

fn corpus_inputs(args: &CorpusArgs) -> Vec<PathBuf> {
    let mut inputs = vec![args.corpus.clone()];
    inputs.extend(args.keys.clone());
    inputs
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Outcome {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    write(&mut w).and_then(|_| w.flush()).map_err(io)?;
    Ok(())
}

fn build_inventory(a: BuildInventoryArgs) -> Outcome {
    let manifest = RunManifest::new(
        "build-inventory",
        json!({
            "input_format": format!("{:?}", inventory_format(a.input_format, &a.input)),
            "output_format": format!("{:?}", inventory_format(a.output_format, &a.output)),
        }),
        None,
        &[&a.input],
    )?;
    let inv = Inventory::load(&a.input, inventory_format(a.input_format, &a.input))?;
    inv.save(&a.output, inventory_format(a.output_format, &a.output))?;
    let mut manifest = manifest;
    manifest.add_output(&a.output);
    manifest.write(RunManifest::location_for(&a.output))?;
    println!(
        "{} entries, {} senses written to {}",
        inv.len(),
        inv.senses().count(),
        a.output.display()
    );
    Ok(())
}

fn stats(a: StatsArgs) -> Outcome {
    let corpus = load_corpus(&a.corpus.corpus, a.corpus.keys.as_deref())?;
    let inv = load_inventory(&a.inventory)?;
    let s = compute_stats(&corpus, &inv);
    let name = a.name.unwrap_or_else(|| {
        a.corpus
            .corpus
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    if !s.missing.is_empty() {
        log::warn!("{} instance(s) have no inventory entry", s.missing.len());
    }
    println!("| Dataset | Instances | Word avg. senses | Instance avg. senses |");
    println!("|---|---:|---:|---:|");
    println!(
        "| {name} | {} | {:.2} | {:.2} |",
        s.instance_count, s.word_avg_senses, s.instance_avg_senses
    );
    Ok(())
}

fn transfer(a: TransferArgs) -> Outcome {
    let mut inputs = corpus_inputs(&a.corpus);
    let provider: Box<dyn TranslationProvider> = match a.provider {
        ProviderArg::Identity => Box::new(IdentityProvider),
        ProviderArg::Dict => {
            let path = a
                .dictionary
                .clone()
                .ok_or_else(|| Failure::usage("--provider dict requires --dictionary"))?;
            inputs.push(path.clone());
            Box::new(DictionaryProvider::load(&path)?)
        }
        ProviderArg::Http => Box::new(HttpProvider::from_env()?),
    };
    let mut manifest = RunManifest::new(
        "transfer",
        json!({
            "target_lang": a.target_lang,
            "provider": provider.name(),
            "em_iterations": a.em_iterations,
            "null_threshold": a.null_threshold,
        }),
        None,
        &inputs,
    )?;
    let corpus = load_corpus(&a.corpus.corpus, a.corpus.keys.as_deref())?;
    let opts = TransferOptions {
        em_iterations: a.em_iterations,
        null_threshold: a.null_threshold,
    };
    let out = run_transfer(&corpus, provider.as_ref(), &a.target_lang, opts)?;

    create_dir(&a.out)?;
    let pairs = a.out.join("pairs.jsonl");
    write_file(&pairs, |w| write_pairs(&out.pairs, w))?;
    let alignments = a.out.join("alignments.txt");
    write_file(&alignments, |w| write_pharaoh(&out.alignments, w))?;
    let projected = a.out.join("projected.jsonl");
    out.projected.save(&projected)?;
    let report = a.out.join("transfer_report.json");
    let text = serde_json::to_string_pretty(&out.report).map_err(Error::from)?;
    write_file(&report, |w| writeln!(w, "{text}"))?;
    for p in [&pairs, &alignments, &projected, &report] {
        manifest.add_output(p);
    }
    manifest.write(RunManifest::location_for(&a.out))?;

    let r = &out.report;
    println!(
        "projected {}/{} annotations ({} unaligned, {} collisions, {} without POS, {} failed sentences)",
        r.projected,
        r.source_annotations,
        r.dropped_unaligned,
        r.dropped_collision,
        r.dropped_missing_pos,
        r.failed_sentences.len()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Outcome {
    let base = match a.model {
        ModelKind::Biencoder => TrainConfig::biencoder(),
        ModelKind::Cls => TrainConfig::cls_baseline(),
    };
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::load(path, base)?,
        None => base,
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(epochs) = a.epochs {
        cfg.epochs = epochs;
    }
    if let Some(batch_size) = a.batch_size {
        cfg.batch_size = batch_size;
    }
    if a.joint {
        cfg.mixing = Mixing::Joint;
    }
    if a.balance {
        cfg.balance = true;
    }
    cfg.validate()?;
    if cfg.mixing == Mixing::Single && a.corpora.len() > 1 {
        return Err(Failure::usage("several --corpus files need --joint"));
    }
    if a.encoder.is_some() && a.model == ModelKind::Biencoder {
        return Err(Failure::usage("--encoder only applies to --model cls"));
    }
    let encoder_cfg = EncoderConfig {
        dim: a.dim,
        layers: a.layers,
        ff_dim: a.ff_dim,
        init_seed: cfg.seed,
        ..EncoderConfig::default()
    };

    let mut inputs: Vec<PathBuf> = vec![a.inventory.clone()];
    inputs.extend(a.corpora.iter().cloned());
    inputs.extend(a.config.iter().cloned());
    inputs.extend(a.dev.iter().cloned());
    inputs.extend(a.eval_pool.iter().cloned());
    inputs.extend(a.encoder.iter().cloned());
    let mut manifest = RunManifest::new(
        "train",
        json!({
            "model": format!("{:?}", a.model).to_lowercase(),
            "train": cfg,
            "encoder": encoder_cfg,
        }),
        Some(cfg.seed),
        &inputs,
    )?;

    let inv = load_inventory(&a.inventory)?;
    let corpora = a
        .corpora
        .iter()
        .map(|p| load_corpus(p, None))
        .collect::<Outcome<Vec<_>>>()?;
    create_dir(&a.out)?;
    let dev = match (&a.dev, &a.eval_pool) {
        (Some(p), _) => Some(load_corpus(p, None)?),
        (None, Some(p)) => {
            let pool = load_corpus(p, None)?;
            let (dev, test) = sample_dev_split(&pool, cfg.dev_fraction, cfg.seed)?;
            for (name, part) in [("dev.jsonl", &dev), ("test.jsonl", &test)] {
                let path = a.out.join(name);
                part.save(&path)?;
                manifest.add_output(path);
            }
            Some(dev)
        }
        (None, None) => None,
    };
    let opts = TrainOptions {
        dev: dev.as_ref(),
        checkpoint_dir: Some(&a.out),
    };
    let report = match a.model {
        ModelKind::Biencoder => {
            let model = BiEncoderModel::from_config(encoder_cfg)?;
            train_biencoder(model, &corpora, &inv, &cfg, opts)?.1
        }
        ModelKind::Cls => {
            let encoder = match &a.encoder {
                Some(path) => BiEncoderModel::load(path)?.context_encoder().clone(),
                None => ReferenceEncoder::new(encoder_cfg)?,
            };
            let cls = LinearSenseClassifier::new(inv.senses().cloned(), FROZEN_LAYERS * encoder.dim());
            train_cls_baseline(cls, &encoder, &corpora, &inv, &cfg, FeatureMode::Precompute, opts)?.1
        }
    };
    manifest.add_output(a.out.join(BEST_CHECKPOINT));
    manifest.add_output(a.out.join(REPORT_FILE));
    manifest.write(RunManifest::location_for(&a.out))?;

    let selected = report
        .epochs
        .iter()
        .find(|e| e.epoch == report.selected_epoch);
    println!(
        "trained on {} instances ({} skipped); selected epoch {}{}",
        report.train_instances,
        report.skipped.total(),
        report.selected_epoch,
        selected
            .and_then(|e| e.dev_f1)
            .map(|f| format!(", dev F1 {f:.2}"))
            .unwrap_or_default()
    );
    log::info!("training took {:.1}s", report.wall_time_secs);
    Ok(())
}

fn predict(a: PredictArgs) -> Outcome {
    let mut inputs = vec![a.model.clone(), a.inventory.clone()];
    inputs.extend(corpus_inputs(&a.corpus));
    let mut manifest = RunManifest::new(
        "predict",
        json!({ "gloss_cache": !a.no_cache }),
        None,
        &inputs,
    )?;
    let inv = load_inventory(&a.inventory)?;
    let corpus = load_corpus(&a.corpus.corpus, a.corpus.keys.as_deref())?;
    let records: Vec<PredictionRecord> = match checkpoint_format(&a.model)?.as_str() {
        BIENCODER_FORMAT => BiEncoderModel::load(&a.model)?.predict_all(corpus.instances(), &inv, !a.no_cache)?,
        CLS_FORMAT => {
            let (cls, encoder) = LinearSenseClassifier::load_with_encoder(&a.model)?;
            corpus
                .instances()
                .iter()
                .map(|inst| {
                    let f = extract_frozen_features(&encoder, inst)?;
                    Ok(cls.classify_with_backoff(&f, inst, &inv))
                })
                .collect::<glosslink::Result<_>>()?
        }
        other => return Err(Error::Config(format!("unknown checkpoint format {other:?}")).into()),
    };
    let preds = predictions_from_records(&records);
    write_file(&a.output, |w| write_predictions(&preds, w))?;
    manifest.add_output(&a.output);
    if let Some(path) = &a.records {
        write_file(path, |w| {
            for r in &records {
                writeln!(w, "{}", serde_json::to_string(r)?)?;
            }
            Ok(())
        })?;
        manifest.add_output(path);
    }
    manifest.write(RunManifest::location_for(&a.output))?;
    let backoff = records.iter().filter(|r| r.backoff_used).count();
    println!(
        "{} predictions for {} instances ({} by back-off)",
        preds.len(),
        records.len(),
        backoff
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Outcome {
    let mut inputs = vec![a.gold.clone(), a.pred.clone(), a.inventory.clone()];
    inputs.extend(a.keys.iter().cloned());
    let manifest = RunManifest::new(
        "evaluate",
        json!({ "split_mcs_lcs": a.split_mcs_lcs, "with_mcs": a.with_mcs, "name": a.name }),
        None,
        &inputs,
    )?;
    let gold = load_corpus(&a.gold, a.keys.as_deref())?;
    let inv = load_inventory(&a.inventory)?;
    let file = File::open(&a.pred).map_err(|e| Error::Io {
        path: a.pred.clone(),
        source: e,
    })?;
    let preds = read_predictions(std::io::BufReader::new(file))?;

    let entry = |preds: &[(String, glosslink::SenseKey)]| -> Outcome<ReportEntry> {
        Ok(if a.split_mcs_lcs {
            ReportEntry::Split(evaluate_by_split(&gold, preds, &inv)?)
        } else {
            ReportEntry::Overall(score_f1(&gold, preds)?)
        })
    };
    let mut results = IndexMap::new();
    if a.with_mcs {
        results.insert("mcs".to_string(), entry(&mcs_predictions(&gold, &inv))?);
    }
    results.insert(a.name.clone(), entry(&preds)?);
    let format = match a.format {
        ReportFormatArg::Markdown => ReportFormat::Markdown,
        ReportFormatArg::Jsonl => ReportFormat::Jsonl,
    };
    let text = emit_report(&results, format)?;
    match &a.output {
        Some(path) => {
            write_file(path, |w| w.write_all(text.as_bytes()))?;
            let mut manifest = manifest;
            manifest.add_output(path);
            manifest.write(RunManifest::location_for(path))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn demo(a: DemoArgs) -> Outcome {
    let mut cfg = match a.seed {
        Some(seed) => DemoConfig::with_seed(seed),
        None => DemoConfig::default(),
    };
    if let Some(epochs) = a.epochs {
        cfg.train.epochs = epochs;
    }
    let model_dir = a.out.as_ref().map(|o| o.join("model"));
    let out = run_demo(&cfg, model_dir.as_deref())?;
    let r = &out.report;
    println!(
        "transfer: projected {}/{} annotations ({} dropped)",
        r.transfer.projected,
        r.transfer.source_annotations,
        r.transfer.dropped()
    );
    println!(
        "training: {} instances, selected epoch {} of {}",
        r.train.train_instances,
        r.train.selected_epoch,
        r.train.epochs.len()
    );
    println!("train F1: {:.2}", r.train_f1.f1);
    println!("MCS baseline F1: {:.2}", r.mcs.f1);
    println!(
        "test F1 by part: MCS {:.2}, LCS {:.2}",
        r.test_split.mcs.f1, r.test_split.lcs.f1
    );
    println!("final test F1: {:.2}", r.test.f1);
    log::info!("demo took {:.1}s", r.wall_time_secs);

    if let Some(dir) = &a.out {
        let mut manifest = RunManifest::new::<&Path>("demo", serde_json::to_value(&cfg).map_err(Error::from)?, Some(cfg.train.seed), &[])?;
        let data = dir.join("data");
        out.task.write_to(&data)?;
        let projected = dir.join("projected.jsonl");
        out.projected.save(&projected)?;
        let records = out.model.predict_all(out.task.test.instances(), &out.task.inventory, true)?;
        let preds_path = dir.join("test.pred.key");
        write_file(&preds_path, |w| write_predictions(&predictions_from_records(&records), w))?;
        let mut results = IndexMap::new();
        results.insert("mcs".to_string(), ReportEntry::Overall(r.mcs));
        results.insert("biencoder".to_string(), ReportEntry::Overall(r.test));
        results.insert("biencoder-split".to_string(), ReportEntry::Split(r.test_split));
        let report_path = dir.join("report.md");
        let text = emit_report(&results, ReportFormat::Markdown)?;
        write_file(&report_path, |w| w.write_all(text.as_bytes()))?;
        for p in [
            data.clone(),
            projected,
            dir.join("model").join(BEST_CHECKPOINT),
            dir.join("model").join(REPORT_FILE),
            preds_path,
            report_path,
        ] {
            manifest.add_output(p);
        }
        manifest.write(RunManifest::location_for(dir))?;
    }
    Ok(())
}
