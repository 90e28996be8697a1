//! Fixtures shared by the benchmarks.

use prodisc_core::data::{assemble_batch, generate_synthetic, Batch, SynthConfig};
use prodisc_core::model::{init_params, ModelDims, ModelParams};

/// A batch of `bags` synthetic bags of width `d` and fresh parameters.
pub fn fixture(bags: usize, d: usize, h: usize) -> (ModelParams<f32>, Batch<f32>) {
    let cfg = SynthConfig {
        d,
        train_bags_per_class: bags.div_ceil(2),
        test_bags_per_class: 0,
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&cfg).expect("valid synth config");
    let refs: Vec<_> = corpus.train.iter().take(bags).collect();
    let batch = assemble_batch(&refs, None).expect("uniform width");
    let params = init_params(ModelDims::new(d, 5, h).expect("dims"), 0).expect("init");
    (params, batch)
}
