use std::path::Path;

use super::params::{ModelDims, ModelParams, DEFAULT_TAU_P};
use crate::binio::{verify_length_and_crc, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::optim::{Adam, AdamConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PDVH";
pub const CHECKPOINT_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 3 * 4;
const OPTIM_HEADER_LEN: usize = 2 * 4 + 4 * 4;

/// Model parameters plus the optimizer state needed to resume training.
///
/// Layout, little-endian: `"PDVH"`, u16 version, u32 D, u32 K, u32 H, the
/// eight parameter blocks as f32 in [`ParamBlock::ALL`](super::ParamBlock)
/// order, then u32 epochs completed, u32 Adam step, f32 lr, beta1, beta2,
/// eps, the eight first-moment blocks, the eight second-moment blocks, and a
/// CRC32 of all preceding bytes.
///
/// The attention temperature is not stored; decoded parameters carry the
/// default and callers apply their configured value.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub optimizer: Adam<f32>,
    pub epochs_completed: u32,
}

impl Checkpoint {
    pub fn fresh(params: ModelParams<f32>, config: AdamConfig) -> Self {
        let optimizer = Adam::new(config, &params.blocks());
        Self {
            params,
            optimizer,
            epochs_completed: 0,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let dims = self.params.dims();
        let n = dims.parameter_count();
        let mut w = Writer::with_capacity(HEADER_LEN + OPTIM_HEADER_LEN + 12 * n + 4);
        w.bytes(&CHECKPOINT_MAGIC);
        w.u16(CHECKPOINT_VERSION);
        for x in [dims.d, dims.k, dims.h] {
            w.u32(to_u32(x, "dimension")?);
        }
        for block in self.params.blocks() {
            w.f32s(block.as_slice());
        }
        let opt = &self.optimizer;
        if opt.m.len() != 8 || opt.v.len() != 8 {
            return Err(Error::config("optimizer state does not match the model"));
        }
        w.u32(self.epochs_completed);
        w.u32(to_u32(opt.step as usize, "optimizer step")?);
        let c = opt.config;
        for x in [c.lr, c.beta1, c.beta2, c.eps] {
            w.f32(x as f32);
        }
        for (block, (m, v)) in self.params.blocks().iter().zip(opt.m.iter().zip(&opt.v)) {
            if m.shape() != block.shape() || v.shape() != block.shape() {
                return Err(Error::config("optimizer moment shape does not match parameters"));
            }
        }
        for m in &opt.m {
            w.f32s(m.as_slice());
        }
        for v in &opt.v {
            w.f32s(v.as_slice());
        }
        Ok(w.finish())
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(buf);
        r.magic(CHECKPOINT_MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let d = r.u32()? as usize;
        let k = r.u32()? as usize;
        let h = r.u32()? as usize;
        let dims = ModelDims { d, k, h };
        dims.validate()
            .map_err(|e| FormatError::Invalid(e.to_string()))?;
        let n = checked_param_count(dims)?;
        let payload = n
            .checked_mul(12)
            .and_then(|x| x.checked_add(HEADER_LEN + OPTIM_HEADER_LEN))
            .ok_or_else(|| FormatError::Invalid("dimensions overflow".into()))?;
        verify_length_and_crc(buf, payload)?;

        let read_blocks = |r: &mut Reader| -> Result<Vec<_>, FormatError> {
            super::ParamBlock::ALL
                .iter()
                .map(|&b| {
                    let shape = dims.block_shape(b);
                    let data = r.f32s(shape.iter().product())?;
                    crate::diffcore::RealArray::new(shape, data)
                        .map_err(|e| FormatError::Invalid(e.to_string()))
                })
                .collect()
        };
        let blocks = read_blocks(&mut r)?;
        let params = ModelParams::from_blocks(dims, blocks, DEFAULT_TAU_P as f32)
            .map_err(|e| FormatError::Invalid(e.to_string()))?;
        let epochs_completed = r.u32()?;
        let step = r.u32()? as u64;
        let config = AdamConfig {
            lr: r.f32()? as f64,
            beta1: r.f32()? as f64,
            beta2: r.f32()? as f64,
            eps: r.f32()? as f64,
        };
        let m = read_blocks(&mut r)?;
        let v = read_blocks(&mut r)?;
        for x in params.blocks().iter().chain(&m.iter().collect::<Vec<_>>()).chain(&v.iter().collect::<Vec<_>>()) {
            if !x.is_finite() {
                return Err(FormatError::Invalid("non-finite value in checkpoint".into()));
            }
        }
        Ok(Self {
            params,
            optimizer: Adam { config, step, m, v },
            epochs_completed,
        })
    }
}

fn checked_param_count(dims: ModelDims) -> Result<usize, FormatError> {
    let ModelDims { d, k, h } = dims;
    let overflow = || FormatError::Invalid("dimensions overflow".into());
    let kd = k.checked_mul(d).and_then(|x| x.checked_mul(2)).ok_or_else(overflow)?;
    let dd = d.checked_mul(d).ok_or_else(overflow)?;
    let dh = d.checked_mul(h).ok_or_else(overflow)?;
    [kd, dd, d, dh, h, h, 1]
        .iter()
        .try_fold(0usize, |acc, &x| acc.checked_add(x))
        .ok_or_else(overflow)
}

fn to_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::config(format!("{what} {x} does not fit in u32")))
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.encode()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn sample() -> Checkpoint {
        let params = init_params(ModelDims::new(6, 2, 3).unwrap(), 11).unwrap();
        let mut ckpt = Checkpoint::fresh(params, AdamConfig::default());
        let grads: Vec<_> = ckpt
            .params
            .blocks()
            .iter()
            .map(|b| crate::diffcore::RealArray::from_fn(b.shape(), |i| (i as f32 * 0.37).sin()))
            .collect();
        let mut blocks = ckpt.params.blocks_mut();
        ckpt.optimizer
            .step(&mut blocks, &grads.iter().collect::<Vec<_>>(), &[])
            .unwrap();
        ckpt.epochs_completed = 3;
        ckpt
    }

    #[test]
    fn round_trip_is_exact() {
        let ckpt = sample();
        let bytes = ckpt.encode().unwrap();
        let n = ckpt.params.parameter_count();
        assert_eq!(bytes.len(), HEADER_LEN + OPTIM_HEADER_LEN + 12 * n + 4);
        assert_eq!(&bytes[..4], b"PDVH");
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back.params, ckpt.params);
        assert_eq!(back.optimizer.m, ckpt.optimizer.m);
        assert_eq!(back.optimizer.v, ckpt.optimizer.v);
        assert_eq!(back.optimizer.step, 1);
        assert_eq!(back.epochs_completed, 3);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().encode().unwrap();
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 3);
        let first = f32::from_le_bytes(bytes[18..22].try_into().unwrap());
        assert_eq!(first, sample().params.prototypes.keys.as_slice()[0]);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().encode().unwrap();
        let mut bad_crc = bytes.clone();
        *bad_crc.last_mut().unwrap() ^= 0x01;
        assert!(matches!(Checkpoint::decode(&bad_crc), Err(FormatError::Crc { .. })));

        let mut flipped = bytes.clone();
        flipped[40] ^= 0x80;
        assert!(matches!(Checkpoint::decode(&flipped), Err(FormatError::Crc { .. })));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::decode(&magic), Err(FormatError::BadMagic { .. })));

        let mut version = bytes.clone();
        version[4] = 2;
        assert!(matches!(Checkpoint::decode(&version), Err(FormatError::Version { found: 2, .. })));

        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 9]),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(Checkpoint::decode(&bytes[..3]), Err(FormatError::Truncated { .. })));
    }
}
