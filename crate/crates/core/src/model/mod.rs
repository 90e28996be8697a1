//! The scoring head: a prototype interaction layer followed by a two-layer
//! classifier.
//!
//! For an instance feature `f`, the prototype interaction layer computes
//! cosine similarities against `K` key prototypes, turns them into attention
//! weights with a temperature softmax, mixes the value prototypes into a
//! context vector `c`, and returns `f' = f + c·W_c + b_c`. The classifier maps
//! `f'` through `D → H → 1` with a ReLU in between and a sigmoid on top.
//!
//! Weight matrices are stored `[inputs × outputs]` and applied to row
//! vectors.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{backward, forward, pil_forward, score_instances, ForwardPass, PilOutput};
pub use params::{
    init_params, ClassifierHead, FusionTransform, ModelDims, ModelGrads, ModelParams, ParamBlock,
    PrototypeBank, DEFAULT_TAU_P,
};
