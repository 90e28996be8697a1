//! Training configuration, the epoch loop, checkpointing and resume.

mod objective;
mod run;

use std::path::PathBuf;
use std::str::FromStr;

pub use objective::{batch_objective, BatchObjective, ObjectiveConfig};
pub use run::{resume, train, train_in_memory, EpochSummary, LogRecord, TrainOutcome, Trainer};

use crate::config::{parse_value, Configurable};
use crate::error::{Error, Result};
use crate::losses::MilReduction;
use crate::model::ModelDims;
use crate::optim::AdamConfig;

/// Which components are active, mirroring the ablation table: the classifier
/// with MIL alone, plus the prototype layer, plus the contrastive term, or
/// both.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Ablation {
    Baseline,
    Pil,
    Pide,
    #[default]
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Baseline, Ablation::Pil, Ablation::Pide, Ablation::Full];

    pub fn uses_pil(self) -> bool {
        matches!(self, Ablation::Pil | Ablation::Full)
    }

    pub fn uses_pide(self) -> bool {
        matches!(self, Ablation::Pide | Ablation::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::Pil => "pil",
            Ablation::Pide => "pide",
            Ablation::Full => "full",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Ablation::Baseline),
            "pil" => Ok(Ablation::Pil),
            "pide" => Ok(Ablation::Pide),
            "full" => Ok(Ablation::Full),
            other => Err(Error::config(format!(
                "unknown ablation `{other}` (expected baseline, pil, pide or full)"
            ))),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Feature width; taken from the corpus when unset.
    pub d: Option<usize>,
    pub k: usize,
    pub h: usize,
    pub tau_p: f64,
    pub tau_c: f64,
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: u32,
    pub seed: u64,
    pub ablation: Ablation,
    pub corpus_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_grad_norm: f64,
    /// Write an intermediate checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: u32,
    /// Pool the top-k instance scores per bag for the MIL loss; 1 is max.
    pub mil_topk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: None,
            k: 5,
            h: 256,
            tau_p: 0.1,
            tau_c: 0.1,
            lambda: 5.0,
            lr: 0.005,
            batch_size: 60,
            epochs: 50,
            seed: 0,
            ablation: Ablation::Full,
            corpus_dir: None,
            out_dir: None,
            clip_grad_norm: 0.0,
            checkpoint_every: 0,
            mil_topk: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(m));
        if self.k == 0 || self.h == 0 || self.d == Some(0) {
            return fail("d, k and h must be >= 1");
        }
        if !(self.tau_p > 0.0) || !(self.tau_c > 0.0) {
            return fail("temperatures must be > 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be >= 0");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if !(self.clip_grad_norm >= 0.0) {
            return fail("clip_grad_norm must be >= 0");
        }
        if self.mil_topk == 0 {
            return fail("mil_topk must be >= 1");
        }
        self.adam().validate()
    }

    pub fn dims(&self, d: usize) -> Result<ModelDims> {
        if let Some(want) = self.d {
            if want != d {
                return Err(Error::config(format!(
                    "config sets d = {want} but the features have width {d}"
                )));
            }
        }
        ModelDims::new(d, self.k, self.h)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// λ actually applied, zero when the ablation disables the contrastive
    /// term.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablation.uses_pide() {
            self.lambda
        } else {
            0.0
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            use_pil: self.ablation.uses_pil(),
            lambda: self.effective_lambda(),
            tau_c: self.tau_c,
            mil: if self.mil_topk == 1 {
                MilReduction::Max
            } else {
                MilReduction::TopKMean(self.mil_topk)
            },
        }
    }

    /// Renders the configuration in the file format it is read from.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        if let Some(d) = self.d {
            line("d", d.to_string());
        }
        line("k", self.k.to_string());
        line("h", self.h.to_string());
        line("tau_p", self.tau_p.to_string());
        line("tau_c", self.tau_c.to_string());
        line("lambda", self.lambda.to_string());
        line("lr", self.lr.to_string());
        line("batch_size", self.batch_size.to_string());
        line("epochs", self.epochs.to_string());
        line("seed", self.seed.to_string());
        line("ablation", self.ablation.to_string());
        if let Some(p) = &self.corpus_dir {
            line("corpus_dir", p.display().to_string());
        }
        if let Some(p) = &self.out_dir {
            line("out_dir", p.display().to_string());
        }
        line("clip_grad_norm", self.clip_grad_norm.to_string());
        line("checkpoint_every", self.checkpoint_every.to_string());
        line("mil_topk", self.mil_topk.to_string());
        out
    }
}

impl Configurable for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = Some(parse_value(key, value)?),
            "k" => self.k = parse_value(key, value)?,
            "h" => self.h = parse_value(key, value)?,
            "tau_p" => self.tau_p = parse_value(key, value)?,
            "tau_c" => self.tau_c = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "corpus_dir" => self.corpus_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "clip_grad_norm" => self.clip_grad_norm = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "mil_topk" => self.mil_topk = parse_value(key, value)?,
            other => return Err(Error::config(format!("unknown train config key `{other}`"))),
        }
        Ok(())
    }
}
