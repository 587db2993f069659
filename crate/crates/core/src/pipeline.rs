//! End-to-end run on the synthetic task: transfer the source annotations
//! into the target language, train jointly, and evaluate on the target
//! test split against the most-common-sense baseline.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::corpus::Corpus;
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::eval::{baseline_mcs, evaluate_by_split, predictions_from_records, score_f1, EvalResult, SplitResult};
use crate::model::BiEncoderModel;
use crate::synth::{SynthConfig, SynthTask};
use crate::train::{train_biencoder, Mixing, TrainConfig, TrainOptions, TrainReport};
use crate::transfer::{run_transfer, TransferOptions, TransferReport};

#[derive(Debug, Clone, Serialize)]
pub struct DemoConfig {
    pub synth: SynthConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    #[serde(skip)]
    pub transfer: TransferOptions,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig::with_seed(13)
    }
}

impl DemoConfig {
    /// One seed drives data generation, initialization and shuffling. The
    /// learning rate is far above the bi-encoder default because the
    /// reference encoder starts from random weights.
    pub fn with_seed(seed: u64) -> Self {
        DemoConfig {
            synth: SynthConfig {
                seed,
                ..SynthConfig::default()
            },
            encoder: EncoderConfig {
                init_seed: seed,
                ..EncoderConfig::default()
            },
            train: TrainConfig {
                lr: 1e-3,
                epochs: 30,
                batch_size: 16,
                seed,
                mixing: Mixing::Joint,
                ..TrainConfig::biencoder()
            },
            transfer: TransferOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoReport {
    pub transfer: TransferReport,
    pub train: TrainReport,
    /// Source training data plus projected target data.
    pub train_f1: EvalResult,
    pub test: EvalResult,
    pub test_split: SplitResult,
    pub mcs: EvalResult,
    pub wall_time_secs: f64,
}

pub struct DemoOutput {
    pub task: SynthTask,
    pub projected: Corpus,
    pub model: BiEncoderModel,
    pub report: DemoReport,
}

pub fn run_demo(cfg: &DemoConfig, checkpoint_dir: Option<&Path>) -> Result<DemoOutput> {
    let start = Instant::now();
    let task = SynthTask::generate(cfg.synth.clone())?;
    let provider = task.provider();
    let transfer = run_transfer(&task.train, &provider, &cfg.synth.target_lang, cfg.transfer)?;
    let corpora = [task.train.clone(), transfer.projected.clone()];

    let model = BiEncoderModel::from_config(cfg.encoder)?;
    let opts = TrainOptions {
        dev: Some(&task.dev),
        checkpoint_dir,
    };
    let (model, train) = train_biencoder(model, &corpora, &task.inventory, &cfg.train, opts)?;

    let pooled = Corpus::concat(&corpora)?;
    let train_preds = predictions_from_records(&model.predict_all(pooled.instances(), &task.inventory, true)?);
    let train_f1 = score_f1(&pooled, &train_preds)?;
    let test_preds = predictions_from_records(&model.predict_all(task.test.instances(), &task.inventory, true)?);
    let test = score_f1(&task.test, &test_preds)?;
    let test_split = evaluate_by_split(&task.test, &test_preds, &task.inventory)?;
    let mcs = baseline_mcs(&task.test, &task.inventory)?;
    let report = DemoReport {
        transfer: transfer.report,
        train,
        train_f1,
        test,
        test_split,
        mcs,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(DemoOutput {
        task,
        projected: transfer.projected,
        model,
        report,
    })
}
