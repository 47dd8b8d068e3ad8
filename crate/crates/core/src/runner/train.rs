use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{DataSpec, ExperimentConfig, Task};
use super::model::{evaluate, BatchInputs, Model};
use crate::cell::{CellDims, InitOptions};
use crate::data::{
    batch_iter, load_idx, load_token_file, pixelwise, rowwise, standardize, InputKind,
    SequenceDataset, Standardizer,
};
use crate::error::{Error, Result};
use crate::optim::{rmsprop_step, EarlyStop, LrSchedule, RmsState, StopDecision};

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Learning rate used for the last batch of the epoch.
    pub lr: f64,
    pub seconds: f64,
}

/// Training and test sequences plus the pixel statistics used to build them.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: SequenceDataset,
    pub test: SequenceDataset,
    pub standardizer: Option<Standardizer>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<MetricsRecord>,
    /// State at the epoch with the best test accuracy (the initialization
    /// when no epoch ran).
    pub checkpoint: Checkpoint,
}

fn sequence_images(task: Task, images: &crate::data::StandardizedImages) -> SequenceDataset {
    match task {
        Task::Pixelwise => pixelwise(images),
        _ => rowwise(images),
    }
}

/// Loads a split as the task expects, relative to `base`.
///
/// Image splits are standardized with `stats` when given, otherwise with
/// statistics fitted on the (subset) split itself, which are returned.
pub fn load_split(
    config: &ExperimentConfig,
    spec: &str,
    size: usize,
    stats: Option<Standardizer>,
    base: &Path,
) -> Result<(SequenceDataset, Option<Standardizer>)> {
    let spec = spec.parse::<DataSpec>()?.resolve(base);
    match (config.task, spec) {
        (Task::Pixelwise | Task::Rowwise, DataSpec::Idx { images, labels }) => {
            let raw = load_idx(images, labels)?.take(size);
            let stats = match stats {
                Some(s) => s,
                None => Standardizer::fit(&raw)?,
            };
            let st = standardize(&raw, &stats)?;
            Ok((sequence_images(config.task, &st), Some(stats)))
        }
        (Task::Tokens, DataSpec::Tokens { path }) => {
            let mut samples = load_token_file(path, config.vocab_limit)?;
            if size > 0 && size < samples.len() {
                samples.sequences.truncate(size);
                samples.labels.truncate(size);
            }
            Ok((samples.into_dataset(config.maxlen), None))
        }
        (task, spec) => Err(Error::Config(format!("task {task} cannot read {spec:?}"))),
    }
}

pub fn load_datasets(config: &ExperimentConfig, base: &Path) -> Result<Datasets> {
    let (train, standardizer) = load_split(config, &config.train_data, config.train_size, None, base)?;
    let (test, _) = load_split(config, &config.test_data, config.test_size, standardizer, base)?;
    Ok(Datasets { train, test, standardizer })
}

/// Loads the configured data (paths relative to the working directory) and trains.
pub fn train(config: &ExperimentConfig) -> Result<TrainOutcome> {
    let data = load_datasets(config, Path::new(""))?;
    train_on(config, &data, |_| {})
}

fn model_dims(config: &ExperimentConfig, data: &SequenceDataset) -> Result<CellDims> {
    let input = match (config.task, data.kind()) {
        (Task::Tokens, InputKind::Tokens) => config.embedding_dim,
        (Task::Pixelwise | Task::Rowwise, InputKind::Dense) => data.input_dim(),
        (task, kind) => {
            return Err(Error::Contract(format!("task {task} cannot train on {kind:?} data")))
        }
    };
    CellDims::new(input, config.hidden)
}

/// Fresh model and optimizer state for `config`, drawing from `rng`.
pub fn initial_state(
    config: &ExperimentConfig,
    data: &SequenceDataset,
    rng: &mut ChaCha8Rng,
) -> Result<(Model, RmsState)> {
    let dims = model_dims(config, data)?;
    let (outputs, embedding_rows) = match config.task {
        Task::Tokens => (1, Some(config.embedding_rows())),
        _ => (data.num_classes(), None),
    };
    let options = InitOptions {
        forget_bias_one: config.forget_bias_one,
    };
    let model = Model::init(config.variant, dims, outputs, embedding_rows, options, rng);
    let state = RmsState::new(model.tensors().iter().map(|(_, _, d)| d.len()));
    Ok((model, state))
}

/// Trains on in-memory data, calling `observe` after every epoch.
///
/// All randomness comes from the run seed: the model is initialized and
/// dropout is drawn from one generator in that order, while each epoch's
/// batch order comes from [`batch_iter`].
pub fn train_on(
    config: &ExperimentConfig,
    data: &Datasets,
    mut observe: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Degenerate("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut model, mut optimizer) = initial_state(config, &data.train, &mut rng)?;
    model.check_dataset(&data.train)?;
    model.check_dataset(&data.test)?;

    let schedule = LrSchedule::new(config.eta0)?;
    let mut stopper = EarlyStop::new(config.patience);
    let mut history = Vec::new();
    let mut best = Checkpoint {
        config: config.clone(),
        model: model.clone(),
        optimizer: optimizer.clone(),
        standardizer: data.standardizer,
        best_epoch: None,
    };
    let started = Instant::now();

    for epoch in 0..config.max_epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut lr = 0.0;
        for (b, idx) in batch_iter(data.train.len(), config.batch_size, config.seed, epoch)
            .iter()
            .enumerate()
        {
            let labels = data.train.batch_labels(idx);
            let dense;
            let tokens;
            let inputs = match data.train.kind() {
                InputKind::Dense => {
                    dense = data.train.dense_batch(idx);
                    BatchInputs::Dense(&dense)
                }
                InputKind::Tokens => {
                    tokens = data.train.token_batch(idx);
                    BatchInputs::Tokens(&tokens)
                }
            };
            let out = model.train_batch(inputs, &labels, config.dropout, &mut rng)?;
            if !out.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: out.loss,
                });
            }
            lr = schedule.lr_from_loss(out.loss)?;
            let grads: Vec<&[f64]> = out.grads.tensors().into_iter().map(|(_, _, d)| d).collect();
            let mut params: Vec<&mut [f64]> = model.tensors_mut().into_iter().map(|(_, d)| d).collect();
            rmsprop_step(&mut params, &grads, &mut optimizer, lr)?;
            loss_sum += out.loss * idx.len() as f64;
            correct += out.correct;
        }
        let (_, test_acc) = evaluate(&model, &data.test)?;
        let n = data.train.len() as f64;
        let record = MetricsRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            test_acc,
            lr,
            seconds: if config.record_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        observe(&record);
        history.push(record);
        let improved_before = stopper.best_epoch;
        let decision = stopper.observe(test_acc, epoch);
        if stopper.best_epoch != improved_before {
            best.model = model.clone();
            best.optimizer = optimizer.clone();
            best.best_epoch = Some(epoch);
        }
        if decision == StopDecision::Stop {
            break;
        }
    }
    Ok(TrainOutcome {
        history,
        checkpoint: best,
    })
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVES_FILE: &str = "curves.svg";
pub const CHECKPOINT_FILE: &str = "best.ckpt";

/// Writes the metrics CSV, the curves SVG (when any epoch ran) and the best
/// checkpoint into `dir`, creating it if needed.
pub fn write_run_outputs(outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    super::report::emit_metrics_csv(&outcome.history, dir.join(METRICS_FILE))?;
    if !outcome.history.is_empty() {
        super::report::emit_curves_svg(&outcome.history, dir.join(CURVES_FILE))?;
    }
    outcome.checkpoint.save(dir.join(CHECKPOINT_FILE))
}

/// Loads `spec` the way `checkpoint` was trained: same task, vocabulary
/// limit, sequence length and pixel statistics.
pub fn load_for_checkpoint(checkpoint: &Checkpoint, spec: &str) -> Result<SequenceDataset> {
    let (data, _) = load_split(
        &checkpoint.config,
        spec,
        0,
        checkpoint.standardizer,
        Path::new(""),
    )?;
    Ok(data)
}
