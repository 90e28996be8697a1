use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::diffcore::{Real, RealArray};
use crate::error::{Error, Result};

/// Attention temperature used when none is configured.
pub const DEFAULT_TAU_P: f64 = 0.1;

/// Feature width `d`, prototype count `k` and classifier hidden width `h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelDims {
    pub d: usize,
    pub k: usize,
    pub h: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { d: 512, k: 5, h: 256 }
    }
}

impl ModelDims {
    pub fn new(d: usize, k: usize, h: usize) -> Result<Self> {
        let dims = Self { d, k, h };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 || self.h == 0 {
            return Err(Error::config(format!(
                "model dimensions must be >= 1 (d={}, k={}, h={})",
                self.d, self.k, self.h
            )));
        }
        Ok(())
    }

    /// `2·K·D + D·D + D + D·H + H + H + 1`
    pub fn parameter_count(&self) -> usize {
        let ModelDims { d, k, h } = *self;
        2 * k * d + d * d + d + d * h + h + h + 1
    }

    pub fn block_shape(&self, block: ParamBlock) -> Vec<usize> {
        let ModelDims { d, k, h } = *self;
        match block {
            ParamBlock::PrototypeKeys | ParamBlock::PrototypeValues => vec![k, d],
            ParamBlock::FusionWeight => vec![d, d],
            ParamBlock::FusionBias => vec![d],
            ParamBlock::HiddenWeight => vec![d, h],
            ParamBlock::HiddenBias => vec![h],
            ParamBlock::OutputWeight => vec![h, 1],
            ParamBlock::OutputBias => vec![1],
        }
    }
}

/// Parameter tensors in checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamBlock {
    PrototypeKeys,
    PrototypeValues,
    FusionWeight,
    FusionBias,
    HiddenWeight,
    HiddenBias,
    OutputWeight,
    OutputBias,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 8] = [
        ParamBlock::PrototypeKeys,
        ParamBlock::PrototypeValues,
        ParamBlock::FusionWeight,
        ParamBlock::FusionBias,
        ParamBlock::HiddenWeight,
        ParamBlock::HiddenBias,
        ParamBlock::OutputWeight,
        ParamBlock::OutputBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamBlock::PrototypeKeys => "prototype_keys",
            ParamBlock::PrototypeValues => "prototype_values",
            ParamBlock::FusionWeight => "fusion_weight",
            ParamBlock::FusionBias => "fusion_bias",
            ParamBlock::HiddenWeight => "hidden_weight",
            ParamBlock::HiddenBias => "hidden_bias",
            ParamBlock::OutputWeight => "output_weight",
            ParamBlock::OutputBias => "output_bias",
        }
    }
}

/// Learnable key/value prototypes and the attention temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank<T = f32> {
    /// `[K × D]`
    pub keys: RealArray<T>,
    /// `[K × D]`
    pub values: RealArray<T>,
    pub tau_p: T,
}

impl<T: Real> PrototypeBank<T> {
    pub fn count(&self) -> usize {
        self.keys.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.keys.shape()[1]
    }
}

/// Linear map applied to the context vector before the residual add.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionTransform<T = f32> {
    /// `[D × D]`
    pub weight: RealArray<T>,
    /// `[D]`
    pub bias: RealArray<T>,
}

/// `D → H → 1` MLP with a ReLU between the layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead<T = f32> {
    /// `[D × H]`
    pub hidden_weight: RealArray<T>,
    /// `[H]`
    pub hidden_bias: RealArray<T>,
    /// `[H × 1]`
    pub output_weight: RealArray<T>,
    /// `[1]`
    pub output_bias: RealArray<T>,
}

impl<T: Real> ClassifierHead<T> {
    pub fn hidden_width(&self) -> usize {
        self.hidden_bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    pub prototypes: PrototypeBank<T>,
    pub fusion: FusionTransform<T>,
    pub classifier: ClassifierHead<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d: self.prototypes.dim(),
            k: self.prototypes.count(),
            h: self.classifier.hidden_width(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn block(&self, block: ParamBlock) -> &RealArray<T> {
        match block {
            ParamBlock::PrototypeKeys => &self.prototypes.keys,
            ParamBlock::PrototypeValues => &self.prototypes.values,
            ParamBlock::FusionWeight => &self.fusion.weight,
            ParamBlock::FusionBias => &self.fusion.bias,
            ParamBlock::HiddenWeight => &self.classifier.hidden_weight,
            ParamBlock::HiddenBias => &self.classifier.hidden_bias,
            ParamBlock::OutputWeight => &self.classifier.output_weight,
            ParamBlock::OutputBias => &self.classifier.output_bias,
        }
    }

    pub fn blocks(&self) -> [&RealArray<T>; 8] {
        ParamBlock::ALL.map(|b| self.block(b))
    }

    pub fn blocks_mut(&mut self) -> [&mut RealArray<T>; 8] {
        [
            &mut self.prototypes.keys,
            &mut self.prototypes.values,
            &mut self.fusion.weight,
            &mut self.fusion.bias,
            &mut self.classifier.hidden_weight,
            &mut self.classifier.hidden_bias,
            &mut self.classifier.output_weight,
            &mut self.classifier.output_bias,
        ]
    }

    /// Rebuilds parameters from blocks in [`ParamBlock::ALL`] order.
    pub fn from_blocks(dims: ModelDims, blocks: Vec<RealArray<T>>, tau_p: T) -> Result<Self> {
        dims.validate()?;
        if blocks.len() != ParamBlock::ALL.len() {
            return Err(Error::config(format!("expected 8 parameter blocks, got {}", blocks.len())));
        }
        for (block, arr) in ParamBlock::ALL.iter().zip(&blocks) {
            let want = dims.block_shape(*block);
            if arr.shape() != want.as_slice() {
                return Err(Error::Shape {
                    op: block.name(),
                    lhs: want,
                    rhs: arr.shape().to_vec(),
                });
            }
        }
        let mut it = blocks.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(Self {
            prototypes: PrototypeBank {
                keys: next(),
                values: next(),
                tau_p,
            },
            fusion: FusionTransform {
                weight: next(),
                bias: next(),
            },
            classifier: ClassifierHead {
                hidden_weight: next(),
                hidden_bias: next(),
                output_weight: next(),
                output_bias: next(),
            },
        })
    }

    pub fn with_tau_p(mut self, tau_p: T) -> Self {
        self.prototypes.tau_p = tau_p;
        self
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let blocks = self.blocks().iter().map(|b| b.cast()).collect();
        let tau = U::from(self.prototypes.tau_p).expect("finite tau");
        ModelParams::from_blocks(self.dims(), blocks, tau).expect("shapes preserved")
    }

    pub fn zero_grads(&self) -> ModelGrads<T> {
        ModelGrads {
            blocks: self.blocks().iter().map(|b| RealArray::zeros(b.shape())).collect(),
        }
    }
}

/// Gradient for every parameter block, in [`ParamBlock::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads<T = f32> {
    pub blocks: Vec<RealArray<T>>,
}

impl<T: Real> ModelGrads<T> {
    pub fn block(&self, block: ParamBlock) -> &RealArray<T> {
        &self.blocks[block as usize]
    }

    pub fn block_mut(&mut self, block: ParamBlock) -> &mut RealArray<T> {
        &mut self.blocks[block as usize]
    }

    pub fn global_norm(&self) -> T {
        self.blocks
            .iter()
            .map(|b| b.sum_squares())
            .sum::<T>()
            .sqrt()
    }
}

/// Fresh parameters for `dims`, deterministic in `seed`.
///
/// Prototypes are drawn from `N(0, 1/D)`; every linear layer weight and bias
/// from `U(-1/√fan_in, 1/√fan_in)`.
pub fn init_params(dims: ModelDims, seed: u64) -> Result<ModelParams<f32>> {
    dims.validate()?;
    let ModelDims { d, k, h } = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let proto = Normal::new(0.0f32, 1.0 / (d as f32).sqrt()).expect("positive std");
    let normal = |shape: &[usize], rng: &mut ChaCha8Rng| {
        RealArray::from_fn(shape, |_| proto.sample(rng))
    };
    let keys = normal(&[k, d], &mut rng);
    let values = normal(&[k, d], &mut rng);

    let uniform = |shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng| {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        RealArray::from_fn(shape, |_| dist.sample(rng))
    };
    let fusion = FusionTransform {
        weight: uniform(&[d, d], d, &mut rng),
        bias: uniform(&[d], d, &mut rng),
    };
    let classifier = ClassifierHead {
        hidden_weight: uniform(&[d, h], d, &mut rng),
        hidden_bias: uniform(&[h], d, &mut rng),
        output_weight: uniform(&[h, 1], h, &mut rng),
        output_bias: uniform(&[1], h, &mut rng),
    };
    Ok(ModelParams {
        prototypes: PrototypeBank {
            keys,
            values,
            tau_p: DEFAULT_TAU_P as f32,
        },
        fusion,
        classifier,
    })
}
