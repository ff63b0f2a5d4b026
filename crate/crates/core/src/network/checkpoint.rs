//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `DASM`, `u16` version, `u32` length of a
//! UTF-8 architecture text block, the block, `u32` record count, then per
//! record: `u32` name length, name, `u32` rank, `u32` dims, `f32` payload.

use std::path::Path;

use super::model::{Classifier, ModelSpec};
use super::tensor::{Param, Real, Tensor};
use super::{Module, NetError, StateVisitor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DASM";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Architecture, free-form metadata and every named parameter and buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    /// Extra `key=value` pairs stored in the architecture block (for
    /// example the feature variant the model was trained on).
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

struct Collect<'a>(&'a mut Vec<(String, Tensor<f32>)>);

impl<T: Real> StateVisitor<T> for Collect<'_> {
    fn param(&mut self, name: &str, p: &mut Param<T>) {
        self.0.push((name.to_string(), p.value.cast()));
    }
    fn buffer(&mut self, name: &str, b: &mut Tensor<T>) {
        self.0.push((name.to_string(), b.cast()));
    }
}

struct Restore<'a> {
    tensors: &'a [(String, Tensor<f32>)],
    used: usize,
    error: Option<NetError>,
}

impl Restore<'_> {
    fn take<T: Real>(&mut self, name: &str, dst: &mut Tensor<T>) {
        if self.error.is_some() {
            return;
        }
        match self.tensors.iter().find(|(n, _)| n == name) {
            None => self.error = Some(NetError::Checkpoint(format!("missing tensor {name}"))),
            Some((_, t)) if t.shape() != dst.shape() => {
                self.error = Some(NetError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    t.shape(),
                    dst.shape()
                )))
            }
            Some((_, t)) => {
                *dst = t.cast();
                self.used += 1;
            }
        }
    }
}

impl<T: Real> StateVisitor<T> for Restore<'_> {
    fn param(&mut self, name: &str, p: &mut Param<T>) {
        self.take(name, &mut p.value);
    }
    fn buffer(&mut self, name: &str, b: &mut Tensor<T>) {
        self.take(name, b);
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), NetError> {
    let v = u32::try_from(v).map_err(|_| NetError::Checkpoint(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            NetError::Checkpoint(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String, NetError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| NetError::Checkpoint("non-UTF-8 text".into()))
    }
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &mut Classifier<T>, metadata: Vec<(String, String)>) -> Self {
        let mut tensors = Vec::new();
        model.visit("", &mut Collect(&mut tensors));
        Self {
            spec: model.spec.clone(),
            metadata,
            tensors,
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Copies every stored tensor into `model`, checking names and shapes.
    pub fn load_into<T: Real>(&self, model: &mut Classifier<T>) -> Result<(), NetError> {
        let mut r = Restore {
            tensors: &self.tensors,
            used: 0,
            error: None,
        };
        model.visit("", &mut r);
        if let Some(e) = r.error {
            return Err(e);
        }
        if r.used != self.tensors.len() {
            return Err(NetError::Checkpoint(format!(
                "checkpoint holds {} tensors, model consumed {}",
                self.tensors.len(),
                r.used
            )));
        }
        Ok(())
    }

    /// Builds a classifier with this architecture and loads the weights.
    pub fn to_model<T: Real>(&self) -> Result<Classifier<T>, NetError> {
        let mut m = Classifier::new(self.spec.clone(), 0)?;
        self.load_into(&mut m)?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NetError> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let mut text = self.spec.to_text();
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(NetError::Checkpoint(format!("metadata entry {k:?} is not a single key=value line")));
            }
            text.push_str(&format!("{k}={v}\n"));
        }
        put_u32(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        put_u32(&mut out, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(NetError::Checkpoint("bad magic (expected DASM)".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(NetError::Checkpoint(format!("unsupported version {version}")));
        }
        let text = r.string()?;
        let (spec, metadata) = ModelSpec::parse_text(&text)?;
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| NetError::Checkpoint(format!("shape {shape:?} overflows")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| NetError::Checkpoint("payload overflows".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(NetError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            spec,
            metadata,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), NetError> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|source| NetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, NetError> {
        let bytes = std::fs::read(path).map_err(|source| NetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Mode;

    #[test]
    fn bytes_round_trip_and_reload_gives_same_logits() {
        let mut m = Classifier::<f32>::new(ModelSpec::default(), 3).unwrap();
        let ck = Checkpoint::from_model(&mut m, vec![("variant".into(), "STFF".into())]);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let mut m2: Classifier<f32> = back.to_model().unwrap();
        let x = Tensor::from_fn(&[2, 1, 96, 96], |i| (i as f32 * 0.01).sin());
        assert_eq!(m.forward(&x, Mode::Eval).unwrap(), m2.forward(&x, Mode::Eval).unwrap());
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let mut m = Classifier::<f32>::new(ModelSpec::default(), 3).unwrap();
        let bytes = Checkpoint::from_model(&mut m, vec![]).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
