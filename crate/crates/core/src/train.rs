//! Training loops for the bi-encoder and the frozen-feature classifier,
//! with seeded batching, dev-F1 model selection and checkpointing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Instance};
use crate::encoder::{Encoder, ReferenceEncoder};
use crate::error::{Error, Result};
use crate::eval::{predictions_from_records, score_f1};
use crate::inventory::Inventory;
use crate::model::{extract_frozen_features, LinearSenseClassifier};
use crate::model::{prepare_examples, BiEncoderModel, Example, SkipCounts};
use crate::nn::{softmax, Adam, AdamConfig, Graph, Matrix, ParamStore};

/// File name of the best-epoch checkpoint inside a checkpoint directory.
pub const BEST_CHECKPOINT: &str = "best.ckpt.json";
/// File name of the per-epoch training report.
pub const REPORT_FILE: &str = "train_report.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mixing {
    Single,
    Joint,
}

impl FromStr for Mixing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Mixing::Single),
            "joint" => Ok(Mixing::Joint),
            other => Err(Error::Argument(format!("unknown mixing mode {other:?}"))),
        }
    }
}

/// Optimization settings. Adam is the only optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mixing: Mixing,
    pub dev_fraction: f64,
    /// Resample languages by `n_i^(1/temperature)` each epoch instead of
    /// pooling everything once.
    pub balance: bool,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::biencoder()
    }
}

impl TrainConfig {
    pub fn biencoder() -> Self {
        TrainConfig {
            lr: 1e-5,
            epochs: 20,
            batch_size: 40,
            seed: 0,
            mixing: Mixing::Single,
            dev_fraction: crate::corpus::DEFAULT_DEV_FRACTION,
            balance: false,
            temperature: 1.0,
        }
    }

    pub fn cls_baseline() -> Self {
        TrainConfig {
            lr: 2e-5,
            epochs: 50,
            batch_size: 128,
            ..TrainConfig::biencoder()
        }
    }

    /// Parses a TOML table; missing keys keep the bi-encoder defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_over(text, TrainConfig::biencoder())
    }

    /// Parses a TOML table; missing keys keep the values of `base`.
    pub fn from_toml_over(text: &str, base: TrainConfig) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let mut table = toml::Table::try_from(base).map_err(|e| bad(&e))?;
        let overrides: toml::Table = toml::from_str(text).map_err(|e| bad(&e))?;
        table.extend(overrides);
        let cfg: TrainConfig = table.try_into().map_err(|e| bad(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, base: TrainConfig) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_over(&text, base)
    }

    /// `lr` may be zero (a null update); everything else must be positive.
    /// Zero epochs is allowed and yields an untrained model.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::Config("dev_fraction must be in (0, 1)".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the returned model; 0 when no epoch ran.
    pub selected_epoch: usize,
    pub skipped: SkipCounts,
    pub train_instances: usize,
    /// Not persisted, so reruns produce identical report files.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn dev_f1(&self) -> Vec<Option<f64>> {
        self.epochs.iter().map(|e| e.dev_f1).collect()
    }

    /// One record per epoch.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            #[serde(flatten)]
            record: &'a EpochRecord,
            selected: bool,
        }
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for record in &self.epochs {
            let line = serde_json::to_string(&Line {
                record,
                selected: record.epoch == self.selected_epoch,
            })?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Where training writes its outputs and what it selects on.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions<'a> {
    pub dev: Option<&'a Corpus>,
    pub checkpoint_dir: Option<&'a Path>,
}

/// Index batches over corpora of the given sizes for one epoch, as
/// `(corpus, instance)` pairs. The order is seeded with `seed + epoch`.
pub fn batch_indices(sizes: &[usize], cfg: &TrainConfig, epoch: usize) -> Result<Vec<Vec<(usize, usize)>>> {
    if sizes.is_empty() {
        return Err(Error::Argument("no training corpora".into()));
    }
    if cfg.mixing == Mixing::Single && sizes.len() != 1 {
        return Err(Error::Argument(format!(
            "single mixing takes exactly one corpus, got {}",
            sizes.len()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Argument("no training instances".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
    let mut pool: Vec<(usize, usize)> = if cfg.balance && sizes.len() > 1 {
        balanced_sample(sizes, cfg.temperature, total, &mut rng)
    } else {
        sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |i| (c, i)))
            .collect()
    };
    pool.shuffle(&mut rng);
    Ok(pool.chunks(cfg.batch_size).map(<[_]>::to_vec).collect())
}

/// Draws `total` instances with replacement, picking corpus `c` with
/// probability proportional to `n_c^(1/temperature)`.
fn balanced_sample(sizes: &[usize], temperature: f64, total: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let weights: Vec<f64> = sizes
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { (n as f64).powf(1.0 / temperature) })
        .collect();
    let sum: f64 = weights.iter().sum();
    (0..total)
        .map(|_| {
            let mut u = rng.gen::<f64>() * sum;
            let mut c = 0;
            while c + 1 < sizes.len() && (u >= weights[c] || sizes[c] == 0) {
                u -= weights[c];
                c += 1;
            }
            (c, rng.gen_range(0..sizes[c]))
        })
        .collect()
}

/// Instance batches for one epoch.
pub fn build_batches<'a>(corpora: &'a [Corpus], cfg: &TrainConfig, epoch: usize) -> Result<Vec<Vec<&'a Instance>>> {
    let sizes: Vec<usize> = corpora.iter().map(Corpus::len).collect();
    Ok(batch_indices(&sizes, cfg, epoch)?
        .into_iter()
        .map(|b| b.into_iter().map(|(c, i)| &corpora[c].instances()[i]).collect())
        .collect())
}

fn check_gold(corpora: &[Corpus]) -> Result<()> {
    for inst in corpora.iter().flat_map(Corpus::instances) {
        if inst.gold.is_empty() {
            return Err(Error::Argument(format!("training instance {} has no gold sense", inst.id)));
        }
    }
    Ok(())
}

/// Best epoch so far: strictly better dev F1 wins, so ties go to the
/// earliest. Without dev data the last epoch is selected.
fn improves(best: Option<(usize, Option<f64>)>, dev_f1: Option<f64>) -> bool {
    match (best, dev_f1) {
        (None, _) => true,
        (Some((_, Some(b))), Some(f)) => f > b,
        (Some(_), None) => true,
        (Some((_, None)), Some(_)) => true,
    }
}

fn finish_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains both encoders of `model` with Adam on cross-entropy over the
/// candidate scores. Returns the best-dev-F1 model.
pub fn train_biencoder(
    mut model: BiEncoderModel,
    corpora: &[Corpus],
    inv: &Inventory,
    cfg: &TrainConfig,
    opts: TrainOptions<'_>,
) -> Result<(BiEncoderModel, TrainReport)> {
    cfg.validate()?;
    check_gold(corpora)?;
    let start = Instant::now();
    let glosses = inv.resolve_glosses(model.gloss_preference());
    let mut skipped = SkipCounts::default();
    let mut examples: Vec<Vec<Example<'_>>> = Vec::with_capacity(corpora.len());
    for corpus in corpora {
        let (ex, skip) = prepare_examples(corpus.instances(), inv, &glosses);
        skipped.no_candidates += skip.no_candidates;
        skipped.gold_not_candidate += skip.gold_not_candidate;
        examples.push(ex);
    }
    let sizes: Vec<usize> = examples.iter().map(Vec::len).collect();
    let train_instances: usize = sizes.iter().sum();
    if train_instances == 0 {
        return Err(Error::Argument("every training instance was skipped".into()));
    }

    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut ctx_opt = Adam::new(adam_cfg, model.context_encoder().params());
    let mut gloss_opt = Adam::new(adam_cfg, model.gloss_encoder().params());

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Option<f64>)> = None;
    let mut best_model = model.clone();
    for epoch in 1..=cfg.epochs {
        let batches = batch_indices(&sizes, cfg, epoch)?;
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch_id, idx) in batches.iter().enumerate() {
            let batch: Vec<Example<'_>> = idx.iter().map(|&(c, i)| examples[c][i].clone()).collect();
            let (loss, ctx_grads, gloss_grads) = {
                let mut g = Graph::new();
                let c = g.register(model.context_encoder().params());
                let s = g.register(model.gloss_encoder().params());
                let root = model.batch_graph(&mut g, (c, s), &batch)?;
                let loss = g.scalar(root);
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss {loss} at epoch {epoch}, batch {batch_id}"
                    )));
                }
                let grads = g.backward(root);
                if !grads.all_finite() {
                    return Err(Error::NonFinite(format!(
                        "gradient at epoch {epoch}, batch {batch_id}"
                    )));
                }
                (loss, grads.store(c).to_vec(), grads.store(s).to_vec())
            };
            let (ctx, gloss) = model.encoders_mut();
            ctx_opt.step(ctx.params_mut(), &ctx_grads);
            gloss_opt.step(gloss.params_mut(), &gloss_grads);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = loss_sum / seen as f64;
        let dev_f1 = match opts.dev {
            Some(dev) => {
                let records = model.predict_all(dev.instances(), inv, true)?;
                Some(score_f1(dev, &predictions_from_records(&records))?.f1)
            }
            None => None,
        };
        log::info!(
            "epoch {epoch}/{}: loss {train_loss:.4}{}",
            cfg.epochs,
            dev_f1.map(|f| format!(", dev F1 {f:.2}")).unwrap_or_default()
        );
        if improves(best, dev_f1) {
            best = Some((epoch, dev_f1));
            best_model = model.clone();
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            dev_f1,
        });
    }

    let report = TrainReport {
        epochs: records,
        selected_epoch: best.map_or(0, |(e, _)| e),
        skipped,
        train_instances,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = opts.checkpoint_dir {
        finish_dir(dir)?;
        best_model.save(dir.join(BEST_CHECKPOINT))?;
        report.write_jsonl(dir.join(REPORT_FILE))?;
    }
    Ok((best_model, report))
}

/// How the classifier baseline obtains features each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Extract once before training.
    Precompute,
    /// Re-extract every epoch; equivalent because the encoder is frozen.
    Recompute,
}

struct ClsExample<'a> {
    instance: &'a Instance,
    gold: usize,
}

/// Trains the linear classifier on frozen features with a softmax over the
/// whole sense vocabulary. Senses become "seen" as training visits them.
pub fn train_cls_baseline(
    mut classifier: LinearSenseClassifier,
    encoder: &ReferenceEncoder,
    corpora: &[Corpus],
    inv: &Inventory,
    cfg: &TrainConfig,
    mode: FeatureMode,
    opts: TrainOptions<'_>,
) -> Result<(LinearSenseClassifier, TrainReport)> {
    cfg.validate()?;
    check_gold(corpora)?;
    let start = Instant::now();
    let mut skipped = SkipCounts::default();
    let mut examples: Vec<Vec<ClsExample<'_>>> = Vec::new();
    for corpus in corpora {
        let mut ex = Vec::new();
        for inst in corpus.instances() {
            match inst.gold.iter().find_map(|s| classifier.sense_index(s)) {
                Some(gold) => ex.push(ClsExample { instance: inst, gold }),
                None => skipped.gold_not_candidate += 1,
            }
        }
        examples.push(ex);
    }
    let sizes: Vec<usize> = examples.iter().map(Vec::len).collect();
    let train_instances: usize = sizes.iter().sum();
    if train_instances == 0 {
        return Err(Error::Argument("every training instance was skipped".into()));
    }
    let width = classifier.feature_dim();
    let extract = |inst: &Instance| -> Result<Vec<f64>> {
        let f = extract_frozen_features(encoder as &dyn Encoder, inst)?;
        if f.len() != width {
            return Err(Error::Config(format!(
                "feature width {} does not match classifier width {width}",
                f.len()
            )));
        }
        Ok(f)
    };
    let cached: Option<Vec<Vec<Vec<f64>>>> = match mode {
        FeatureMode::Precompute => Some(
            examples
                .iter()
                .map(|ex| ex.iter().map(|e| extract(e.instance)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?,
        ),
        FeatureMode::Recompute => None,
    };

    let mut store = ParamStore::default();
    let n = classifier.num_senses();
    store.push("weights", classifier.weights().clone());
    store.push("bias", Matrix::from_vec(1, n, classifier.bias().to_vec()));
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), &store);

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Option<f64>)> = None;
    let mut best_cls = classifier.clone();
    for epoch in 1..=cfg.epochs {
        let batches = batch_indices(&sizes, cfg, epoch)?;
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for (batch_id, idx) in batches.iter().enumerate() {
            let mut grad_w = Matrix::zeros(n, width);
            let mut grad_b = Matrix::zeros(1, n);
            let mut batch_loss = 0.0;
            let inv_len = 1.0 / idx.len() as f64;
            for &(c, i) in idx {
                let ex = &examples[c][i];
                let owned;
                let x: &[f64] = match &cached {
                    Some(cache) => &cache[c][i],
                    None => {
                        owned = extract(ex.instance)?;
                        &owned
                    }
                };
                let gold_key = classifier.sense_at(ex.gold).clone();
                classifier.mark_seen(&gold_key);
                let logits: Vec<f64> = (0..n)
                    .map(|r| crate::nn::dot(store.get(0).row(r), x) + store.get(1).data()[r])
                    .collect();
                let p = softmax(&logits);
                batch_loss -= p[ex.gold].ln() * inv_len;
                for (r, pr) in p.iter().enumerate() {
                    let delta = (pr - if r == ex.gold { 1.0 } else { 0.0 }) * inv_len;
                    if delta == 0.0 {
                        continue;
                    }
                    for (gw, xv) in grad_w.row_mut(r).iter_mut().zip(x) {
                        *gw += delta * xv;
                    }
                    grad_b.data_mut()[r] += delta;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {batch_loss} at epoch {epoch}, batch {batch_id}"
                )));
            }
            opt.step(&mut store, &[Some(grad_w), Some(grad_b)]);
            loss_sum += batch_loss * idx.len() as f64;
            count += idx.len();
        }
        {
            let (w, b) = classifier.weights_mut();
            *w = store.get(0).clone();
            b.copy_from_slice(store.get(1).data());
        }
        let train_loss = loss_sum / count as f64;
        let dev_f1 = match opts.dev {
            Some(dev) => {
                let mut preds = Vec::new();
                for inst in dev.instances() {
                    let rec = classifier.classify_with_backoff(&extract(inst)?, inst, inv);
                    preds.push(rec);
                }
                Some(score_f1(dev, &predictions_from_records(&preds))?.f1)
            }
            None => None,
        };
        log::info!(
            "epoch {epoch}/{}: loss {train_loss:.4}{}",
            cfg.epochs,
            dev_f1.map(|f| format!(", dev F1 {f:.2}")).unwrap_or_default()
        );
        if improves(best, dev_f1) {
            best = Some((epoch, dev_f1));
            best_cls = classifier.clone();
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            dev_f1,
        });
    }

    let report = TrainReport {
        epochs: records,
        selected_epoch: best.map_or(0, |(e, _)| e),
        skipped,
        train_instances,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = opts.checkpoint_dir {
        finish_dir(dir)?;
        best_cls.save_with_encoder(encoder, dir.join(BEST_CHECKPOINT))?;
        report.write_jsonl(dir.join(REPORT_FILE))?;
    }
    Ok((best_cls, report))
}

/// Path of the best checkpoint inside `dir`.
pub fn best_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join(BEST_CHECKPOINT)
}
