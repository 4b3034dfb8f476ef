//! Binary checkpoint format for [`FieldModel`].
//!
//! All integers and floats are little-endian.
//!
//! | offset | type        | content                                  |
//! |--------|-------------|------------------------------------------|
//! | 0      | `[u8; 8]`   | magic `IFMCKPT\0`                        |
//! | 8      | `u32`       | format version (currently 1)             |
//! | 12     | `u64`       | training seed                            |
//! | 20     | `u32`       | data dimension `D`                       |
//! | 24     | `u32`       | number of hidden layers `H`              |
//! | 28     | `u32 * H`   | hidden widths                            |
//! | ..     | `u32`       | activation id (0 = SiLU, 1 = tanh)       |
//! | ..     | `f64`       | EMA decay                                |
//! | ..     | `u64`       | parameter count `P`                      |
//! | ..     | `f64 * P`   | live parameters                          |
//! | ..     | `f64 * P`   | EMA parameters                           |
//!
//! Parameters are stored layer by layer: the `in x out` weight matrix in
//! row-major order, then the bias of length `out`. The network maps
//! `D + 1` inputs to `D + 1` outputs.

use std::path::Path;

use crate::error::{IfmError, Result};
use crate::nn::{Activation, Mlp};
use crate::trainer::FieldModel;

pub const MAGIC: [u8; 8] = *b"IFMCKPT\0";
pub const VERSION: u32 = 1;

pub fn encode(model: &FieldModel) -> Vec<u8> {
    let mlp = model.mlp();
    let hidden = mlp.hidden();
    let p = mlp.param_count();
    let mut out = Vec::with_capacity(64 + 4 * hidden.len() + 16 * p);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.seed().to_le_bytes());
    out.extend_from_slice(&(model.data_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(hidden.len() as u32).to_le_bytes());
    for &w in hidden {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.extend_from_slice(&mlp.activation().id().to_le_bytes());
    out.extend_from_slice(&model.ema_decay().to_le_bytes());
    out.extend_from_slice(&(p as u64).to_le_bytes());
    for v in model.params().iter().chain(model.ema_params()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            IfmError::InvalidValue(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<FieldModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(IfmError::InvalidValue("not a field-model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(IfmError::Unsupported(format!("checkpoint version {version}")));
    }
    let seed = r.u64()?;
    let dim = r.u32()? as usize;
    let layers = r.u32()? as usize;
    if layers > 1024 {
        return Err(IfmError::InvalidValue(format!("implausible hidden layer count {layers}")));
    }
    let hidden = (0..layers).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
    let activation = Activation::from_id(r.u32()?)?;
    let ema_decay = r.f64()?;
    let count = r.u64()? as usize;
    let mlp = Mlp::new(dim + 1, &hidden, dim + 1, activation)?;
    if count != mlp.param_count() {
        return Err(IfmError::DimensionMismatch { expected: mlp.param_count(), got: count });
    }
    if bytes.len() - r.pos != 16 * count {
        return Err(IfmError::InvalidValue(format!(
            "checkpoint body holds {} bytes, expected {}",
            bytes.len() - r.pos,
            16 * count
        )));
    }
    let params = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let ema = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    FieldModel::from_parts(mlp, params, ema, ema_decay, seed)
}

pub fn save(path: &Path, model: &FieldModel) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<FieldModel> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn model() -> FieldModel {
        let mut m = FieldModel::new(2, &[5, 3], Activation::Tanh, 0.95, 42, &mut rng_from_seed(1)).unwrap();
        m.params_mut()[0] = 1.25;
        m.update_ema();
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = decode(&encode(&m)).unwrap();
        assert_eq!(back, m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, &m).unwrap();
        assert_eq!(load(&path).unwrap(), m);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&model());
        assert_eq!(&bytes[..8], b"IFMCKPT\0");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 42);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[32..36].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[36..40].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 0.95);
        // 3x5 + 5, 5x3 + 3, 3x3 + 3
        assert_eq!(u64::from_le_bytes(bytes[48..56].try_into().unwrap()), 50);
        assert_eq!(bytes.len(), 56 + 16 * 50);
        assert_eq!(f64::from_le_bytes(bytes[56..64].try_into().unwrap()), 1.25);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode(&model());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(&bytes[..30]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut v2 = bytes;
        v2[8] = 2;
        assert!(matches!(decode(&v2), Err(IfmError::Unsupported(_))));
    }
}
