//! Weakly-supervised anomaly scoring over pre-extracted instance features.
//!
//! The head enriches every instance feature with context drawn from a small
//! bank of learnable normal prototypes, scores it with a two-layer classifier,
//! and is trained from bag labels alone with a max-instance MIL loss plus a
//! supervised-contrastive term on each bag's highest- and lowest-scoring
//! instances.
//!
//! Modules:
//! - [`diffcore`]: dense arrays, the numeric kernels the head needs, their
//!   vector-Jacobian products and a finite-difference gradient checker.
//! - [`model`]: prototype interaction layer, classifier, parameters, forward
//!   and backward passes, checkpoint encoding.
//! - [`losses`]: MIL loss, extreme-instance selection, contrastive loss.
//! - [`optim`]: Adam and gradient-norm clipping.
//! - [`data`]: feature-bag files, synthetic corpora, batching.
//! - [`trainer`]: configuration, training loop, resume.
//! - [`evalkit`]: frame-level ROC-AUC, evaluation reports, exports.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod config;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod losses;
pub mod model;
pub mod optim;
pub mod trainer;

pub use data::{assemble_batch, Batch, Corpus, FeatureBag, SynthConfig};
pub use diffcore::{GradSlot, Real, RealArray};
pub use error::{Error, FormatError, Result};
pub use evalkit::{compute_auc, EvalReport};
pub use losses::{ExtremeSelection, InstanceScores, LossBreakdown};
pub use model::{ModelDims, ModelGrads, ModelParams};
pub use optim::{Adam, AdamConfig};
pub use trainer::{Ablation, TrainConfig};
