//! Feature bags: the on-disk format, corpus manifests, a synthetic corpus
//! generator and padded batch assembly.

mod bag;
mod batch;
mod corpus;
mod synth;

pub use bag::{read_bag, write_bag, FeatureBag, BAG_MAGIC, BAG_VERSION};
pub use batch::{assemble_batch, Batch};
pub use corpus::{write_corpus, Corpus, MANIFEST_NAME};
pub use synth::{generate_synthetic, SynthConfig, SynthCorpus};
