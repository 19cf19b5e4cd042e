use std::fs;
use std::path::Path;

use super::model::{MostModel, Param};
use super::MostConfig;
use crate::error::{Error, Result};
use crate::ndnum::Tensor;

const MAGIC: &[u8; 8] = b"MOSTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

// Layout, all integers little-endian:
//   magic[8] version:u32 config_len:u32 config_json
//   d1:u64 d2:u64 has_perm:u8 [perm_len:u64 perm:u64*]
//   n_params:u32 { name_len:u32 name ndim:u32 dims:u64* data:f64* }*

pub fn checkpoint_bytes(model: &MostModel) -> Result<Vec<u8>> {
    let cfg = serde_json::to_vec(&model.config)
        .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.d1 as u64).to_le_bytes());
    out.extend_from_slice(&(model.d2 as u64).to_le_bytes());
    match &model.permutation {
        Some(p) => {
            out.push(1);
            out.extend_from_slice(&(p.len() as u64).to_le_bytes());
            for &k in p {
                out.extend_from_slice(&(k as u64).to_le_bytes());
            }
        }
        None => out.push(0),
    }
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("size {v} overflows")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<MostModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg_len = r.u32()? as usize;
    let config: MostConfig = serde_json::from_slice(r.take(cfg_len)?)
        .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    let d1 = r.u64()?;
    let d2 = r.u64()?;
    let permutation = match r.u8()? {
        0 => None,
        1 => {
            let n = r.u64()?;
            if n > buf.len() {
                return Err(Error::Checkpoint(format!("permutation length {n} exceeds file")));
            }
            Some((0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?)
        }
        b => return Err(Error::Checkpoint(format!("bad permutation flag {b}"))),
    };
    let n_params = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_params.min(1024));
    for _ in 0..n_params {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("parameter {name} shape {shape:?} too large")))?;
        let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.push(Param {
            name,
            value: Tensor::new(shape, data)?,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    MostModel::from_parts(config, d1, d2, params, permutation)
}

pub fn save_checkpoint(path: &Path, model: &MostModel) -> Result<()> {
    fs::write(path, checkpoint_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MostModel> {
    checkpoint_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{forward, EncoderVariant};
    use crate::ttsdata::TtsWindow;

    fn model(variant: EncoderVariant) -> MostModel {
        let cfg = MostConfig {
            h: 6,
            levels: 1,
            max_window: 16,
            variant,
            seed: 3,
            ..Default::default()
        };
        MostModel::new(cfg, 2, 3).unwrap()
    }

    #[test]
    fn round_trip_every_variant() {
        for v in EncoderVariant::ALL {
            let m = model(v);
            let back = checkpoint_from_bytes(&checkpoint_bytes(&m).unwrap()).unwrap();
            assert_eq!(m, back, "{v}");
        }
    }

    #[test]
    fn forward_identical_after_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model(EncoderVariant::Random);
        save_checkpoint(&path, &m).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let x = TtsWindow::new((0..48).map(|k| (k as f64).sin()).collect(), 2, 3, 8).unwrap();
        assert_eq!(forward(&m, &x, 0).unwrap(), forward(&back, &x, 0).unwrap());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = checkpoint_bytes(&model(EncoderVariant::Full)).unwrap();
        for cut in [0, 5, 12, bytes.len() / 2, bytes.len() - 1] {
            let err = checkpoint_from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)), "{cut}: {err}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(checkpoint_from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(checkpoint_from_bytes(&bad).is_err());
    }
}
