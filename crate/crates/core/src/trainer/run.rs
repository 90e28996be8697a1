use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{batch_objective, ObjectiveConfig, TrainConfig};
use crate::data::{assemble_batch, Corpus, FeatureBag};
use crate::error::{Error, Result};
use crate::evalkit::{auc_if_defined, score_bags};
use crate::model::{init_params, read_checkpoint, write_checkpoint, Checkpoint, ModelDims, ModelParams, ParamBlock};
use crate::optim::clip_grad_norm;

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        epoch: u32,
        step: u64,
        l_mil: f64,
        l_pide: f64,
        l_total: f64,
        lambda: f64,
    },
    Epoch(EpochSummary),
}

impl LogRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

/// Mean losses over an epoch's batches. `train_auc` is computed from the
/// scores produced during the epoch's own forward passes and is absent when
/// the training bags lack frame labels or a class.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: u32,
    pub step: u64,
    pub l_mil: f64,
    pub l_pide: f64,
    pub l_total: f64,
    pub train_auc: Option<f64>,
}

/// Owns the model and optimizer state while iterating over a training set.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    objective: ObjectiveConfig,
    train: &'a [FeatureBag],
    state: Checkpoint,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &TrainConfig, train: &'a [FeatureBag]) -> Result<Self> {
        let dims = dims_for(cfg, train)?;
        let params = init_params(dims, cfg.seed)?.with_tau_p(cfg.tau_p as f32);
        Self::from_checkpoint(cfg, train, Checkpoint::fresh(params, cfg.adam()))
    }

    /// Continues from a saved state; model dimensions must match `cfg` and
    /// the data.
    pub fn from_checkpoint(cfg: &TrainConfig, train: &'a [FeatureBag], mut state: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let dims = dims_for(cfg, train)?;
        if state.params.dims() != dims {
            return Err(Error::config(format!(
                "checkpoint dimensions {:?} do not match configuration {:?}",
                state.params.dims(),
                dims
            )));
        }
        state.params.prototypes.tau_p = cfg.tau_p as f32;
        Ok(Self {
            cfg: cfg.clone(),
            objective: cfg.objective(),
            train,
            state,
        })
    }

    pub fn epochs_completed(&self) -> u32 {
        self.state.epochs_completed
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.state.params
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.state
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.state
    }

    /// Runs one shuffled pass over the training bags. On error the state is
    /// left as it was after the last successful step.
    pub fn run_epoch(&mut self, mut on_step: impl FnMut(&LogRecord) -> Result<()>) -> Result<EpochSummary> {
        let epoch = self.state.epochs_completed + 1;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let (mut sum_mil, mut sum_pide, mut sum_total, mut batches) = (0.0, 0.0, 0.0, 0usize);
        let mut seen_scores = Vec::new();
        let mut seen_labels = Vec::new();
        let names = ParamBlock::ALL.map(ParamBlock::name);

        for chunk in order.chunks(self.cfg.batch_size) {
            let bags: Vec<&FeatureBag> = chunk.iter().map(|&i| &self.train[i]).collect();
            let batch = assemble_batch(&bags, None)?;
            let mut obj = batch_objective(
                &self.state.params,
                &batch.features,
                &batch.lengths,
                &batch.bag_labels,
                &self.objective,
            )
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}")),
                other => other,
            })?;

            clip_grad_norm(&mut obj.grads.blocks, self.cfg.clip_grad_norm);
            let grads: Vec<_> = obj.grads.blocks.iter().collect();
            self.state
                .optimizer
                .step(&mut self.state.params.blocks_mut(), &grads, &names)?;

            let scores = obj.pass.instance_scores();
            for (b, fl) in batch.frame_labels.iter().enumerate() {
                if let Some(fl) = fl {
                    seen_scores.extend(scores.bag_scores(b).iter().map(|&s| s as f64));
                    seen_labels.extend_from_slice(fl);
                }
            }
            let l = obj.losses;
            sum_mil += l.l_mil;
            sum_pide += l.l_pide;
            sum_total += l.l_total;
            batches += 1;
            on_step(&LogRecord::Step {
                epoch,
                step: self.state.optimizer.step,
                l_mil: l.l_mil,
                l_pide: l.l_pide,
                l_total: l.l_total,
                lambda: l.lambda,
            })?;
        }
        self.state.epochs_completed = epoch;
        let n = batches.max(1) as f64;
        Ok(EpochSummary {
            epoch,
            step: self.state.optimizer.step,
            l_mil: sum_mil / n,
            l_pide: sum_pide / n,
            l_total: sum_total / n,
            train_auc: auc_if_defined(&seen_scores, &seen_labels),
        })
    }
}

fn dims_for(cfg: &TrainConfig, train: &[FeatureBag]) -> Result<ModelDims> {
    let first = train.first().ok_or(Error::Empty("training set"))?;
    cfg.dims(first.dim())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochSummary>,
    pub train_auc: Option<f64>,
    pub test_auc: Option<f64>,
}

/// Trains until `cfg.epochs` epochs are complete, starting fresh or from
/// `start`. Touches no files.
pub fn train_in_memory(
    cfg: &TrainConfig,
    train: &[FeatureBag],
    test: &[FeatureBag],
    start: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    let mut trainer = match start {
        Some(ckpt) => Trainer::from_checkpoint(cfg, train, ckpt)?,
        None => Trainer::new(cfg, train)?,
    };
    let mut epochs = Vec::new();
    while trainer.epochs_completed() < cfg.epochs {
        epochs.push(trainer.run_epoch(|_| Ok(()))?);
    }
    finish(cfg, trainer.into_checkpoint(), epochs, test)
}

fn finish(
    cfg: &TrainConfig,
    checkpoint: Checkpoint,
    epochs: Vec<EpochSummary>,
    test: &[FeatureBag],
) -> Result<TrainOutcome> {
    let test_auc = if test.is_empty() {
        None
    } else {
        let scored = score_bags(&checkpoint.params, test, cfg.ablation.uses_pil())?;
        let (s, l) = flatten_labelled(&scored, test);
        auc_if_defined(&s, &l)
    };
    Ok(TrainOutcome {
        train_auc: epochs.last().and_then(|e| e.train_auc),
        checkpoint,
        epochs,
        test_auc,
    })
}

fn flatten_labelled(scores: &[Vec<f32>], bags: &[FeatureBag]) -> (Vec<f64>, Vec<u8>) {
    let mut s = Vec::new();
    let mut l = Vec::new();
    for (bag, sc) in bags.iter().zip(scores) {
        if let Some(fl) = bag.frame_labels() {
            s.extend(sc.iter().map(|&x| x as f64));
            l.extend_from_slice(fl);
        }
    }
    (s, l)
}

pub const FINAL_CHECKPOINT: &str = "checkpoint.pdvh";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.pdvh";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_ECHO: &str = "config.txt";

/// Trains from `cfg.corpus_dir`, writing the log, periodic checkpoints and
/// the final checkpoint under `cfg.out_dir`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    run_to_disk(cfg, None)
}

/// Restores model and optimizer state from `checkpoint` and trains until
/// `cfg.epochs` epochs are complete in total.
pub fn resume(checkpoint: impl AsRef<Path>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let state = read_checkpoint(checkpoint)?;
    run_to_disk(cfg, Some(state))
}

fn run_to_disk(cfg: &TrainConfig, start: Option<Checkpoint>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let corpus_dir = cfg
        .corpus_dir
        .as_ref()
        .ok_or_else(|| Error::config("corpus_dir is not set"))?;
    let out_dir = cfg
        .out_dir
        .as_ref()
        .ok_or_else(|| Error::config("out_dir is not set"))?;
    let corpus = Corpus::open(corpus_dir)?;
    let train_bags = corpus.load_split_or_all("train")?;
    let test_bags = if corpus.has_split("test") {
        corpus.load(&corpus.split("test"))?
    } else {
        Vec::new()
    };

    let resuming = start.is_some();
    let mut trainer = match start {
        Some(ckpt) => Trainer::from_checkpoint(cfg, &train_bags, ckpt)?,
        None => Trainer::new(cfg, &train_bags)?,
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let echo = out_dir.join(CONFIG_ECHO);
    std::fs::write(&echo, cfg.to_config_text()).map_err(|e| Error::io(&echo, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log = open_log(&log_path, resuming)?;

    let mut epochs = Vec::new();
    while trainer.epochs_completed() < cfg.epochs {
        let result = trainer.run_epoch(|rec| write_line(&mut log, &log_path, rec));
        let summary = match result {
            Ok(s) => s,
            Err(e) => {
                let _ = log.flush();
                if matches!(e, Error::NonFinite(_)) {
                    write_checkpoint(out_dir.join(LAST_GOOD_CHECKPOINT), trainer.checkpoint())?;
                }
                return Err(e);
            }
        };
        write_line(&mut log, &log_path, &LogRecord::Epoch(summary.clone()))?;
        if cfg.checkpoint_every > 0 && summary.epoch % cfg.checkpoint_every == 0 {
            write_checkpoint(
                out_dir.join(format!("checkpoint_epoch_{:04}.pdvh", summary.epoch)),
                trainer.checkpoint(),
            )?;
        }
        epochs.push(summary);
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    write_checkpoint(out_dir.join(FINAL_CHECKPOINT), trainer.checkpoint())?;
    finish(cfg, trainer.into_checkpoint(), epochs, &test_bags)
}

fn open_log(path: &PathBuf, append: bool) -> Result<BufWriter<File>> {
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

fn write_line(log: &mut BufWriter<File>, path: &Path, rec: &LogRecord) -> Result<()> {
    writeln!(log, "{}", rec.to_json()).map_err(|e| Error::io(path, e))
}
