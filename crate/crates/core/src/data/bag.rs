use std::path::Path;

use crate::binio::{verify_length_and_crc, Reader, Writer};
use crate::diffcore::RealArray;
use crate::error::{Error, FormatError, Result};

pub const BAG_MAGIC: [u8; 4] = *b"PDVB";
pub const BAG_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 1 + 1;

/// One video: `T` instance features of width `D`, the bag label and, for
/// evaluation data, a label per instance.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBag {
    pub id: String,
    features: RealArray<f32>,
    bag_label: u8,
    frame_labels: Option<Vec<u8>>,
}

impl FeatureBag {
    /// Validates shape and label consistency: a bag is abnormal exactly when
    /// one of its frame labels is.
    pub fn new(
        id: impl Into<String>,
        features: RealArray<f32>,
        bag_label: u8,
        frame_labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let id = id.into();
        let &[t, d] = features.shape() else {
            return Err(Error::Shape {
                op: "FeatureBag features [T×D]",
                lhs: features.shape().to_vec(),
                rhs: vec![],
            });
        };
        if t == 0 || d == 0 {
            return Err(Error::config(format!("bag {id}: T and D must be >= 1, got {t}×{d}")));
        }
        features.ensure_finite(&format!("bag {id} features"))?;
        if bag_label > 1 {
            return Err(Error::config(format!("bag {id}: label must be 0 or 1, got {bag_label}")));
        }
        if let Some(fl) = &frame_labels {
            if fl.len() != t {
                return Err(Error::config(format!(
                    "bag {id}: {} frame labels for {t} instances",
                    fl.len()
                )));
            }
            if fl.iter().any(|&l| l > 1) {
                return Err(Error::config(format!("bag {id}: frame labels must be 0 or 1")));
            }
            let any_pos = fl.contains(&1);
            if any_pos != (bag_label == 1) {
                return Err(Error::config(format!(
                    "bag {id}: bag label {bag_label} inconsistent with frame labels"
                )));
            }
        }
        Ok(Self {
            id,
            features,
            bag_label,
            frame_labels,
        })
    }

    /// Number of instances `T`.
    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn features(&self) -> &RealArray<f32> {
        &self.features
    }

    pub fn bag_label(&self) -> u8 {
        self.bag_label
    }

    pub fn frame_labels(&self) -> Option<&[u8]> {
        self.frame_labels.as_deref()
    }

    /// Encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + 4 * self.features.len()
            + self.frame_labels.as_ref().map_or(0, Vec::len)
            + 4
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(self.encoded_len());
        w.bytes(&BAG_MAGIC);
        w.u16(BAG_VERSION);
        w.u32(self.len() as u32);
        w.u32(self.dim() as u32);
        w.u8(self.bag_label);
        w.u8(self.frame_labels.is_some() as u8);
        w.f32s(self.features.as_slice());
        if let Some(fl) = &self.frame_labels {
            w.bytes(fl);
        }
        w.finish()
    }

    pub fn decode(id: impl Into<String>, buf: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(buf);
        r.magic(BAG_MAGIC)?;
        r.version(BAG_VERSION)?;
        let t = r.u32()? as usize;
        let d = r.u32()? as usize;
        let bag_label = r.u8()?;
        let has_frames = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(FormatError::Invalid(format!("frame-label flag {other}"))),
        };
        let payload = t
            .checked_mul(d)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN + if has_frames { t } else { 0 }))
            .ok_or_else(|| FormatError::Invalid("dimensions overflow".into()))?;
        verify_length_and_crc(buf, payload)?;
        let data = r.f32s(t * d)?;
        let frame_labels = if has_frames {
            Some(r.take(t)?.to_vec())
        } else {
            None
        };
        let features =
            RealArray::new(vec![t, d], data).map_err(|e| FormatError::Invalid(e.to_string()))?;
        FeatureBag::new(id, features, bag_label, frame_labels)
            .map_err(|e| FormatError::Invalid(e.to_string()))
    }
}

pub fn write_bag(bag: &FeatureBag, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bag.encode()).map_err(|e| Error::io(path, e))
}

/// Reads a bag; its id is the file stem.
pub fn read_bag(path: impl AsRef<Path>) -> Result<FeatureBag> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureBag::decode(id, &bytes).map_err(|e| Error::format(path, e))
}
