use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub kind: ParamKind,
}

/// Named tensors of a network, in creation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub(crate) fn push(&mut self, name: String, tensor: Tensor<T>, kind: ParamKind) -> ParamId {
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, tensor, kind });
        ParamId(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.find(name).map(|id| self.get(id))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].kind == ParamKind::Trainable)
            .map(ParamId)
            .collect()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Trainable scalars whose name contains `fragment`.
    pub fn num_trainable_matching(&self, fragment: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable && e.name.contains(fragment))
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Mutable references to the trainable tensors with their names, in
    /// the order of [`ParamStore::trainable_ids`].
    pub fn trainable_mut(&mut self) -> (Vec<&mut Tensor<T>>, Vec<String>) {
        let mut tensors = Vec::new();
        let mut names = Vec::new();
        for e in self.entries.iter_mut().filter(|e| e.kind == ParamKind::Trainable) {
            names.push(e.name.clone());
            tensors.push(&mut e.tensor);
        }
        (tensors, names)
    }

    /// Replaces every tensor from `named`, which must contain exactly the
    /// same names and shapes.
    pub fn load(&mut self, named: &[(String, Tensor<T>)]) -> Result<()> {
        for e in &self.entries {
            if !named.iter().any(|(n, _)| *n == e.name) {
                return Err(Error::Checkpoint(alloc::format!("missing tensor `{}`", e.name)));
            }
        }
        for (name, t) in named {
            let id = self
                .find(name)
                .ok_or_else(|| Error::Checkpoint(alloc::format!("unexpected tensor `{name}`")))?;
            if self.get(id).shape() != t.shape() {
                return Err(Error::Checkpoint(alloc::format!(
                    "tensor `{name}` has shape {:?}, network expects {:?}",
                    t.shape(),
                    self.get(id).shape()
                )));
            }
        }
        for (name, t) in named {
            let id = self.find(name).expect("checked above");
            *self.get_mut(id) = t.clone();
        }
        Ok(())
    }
}

/// Magic bytes at the start of every checkpoint file.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSBCKPT1";
const META_EPOCH: &str = "meta.epoch";
const META_SEED: &str = "meta.seed";

/// Trained parameters and running statistics plus training metadata.
///
/// Encoding (little-endian): magic `SSBCKPT1`, `u32` tensor count, then per
/// tensor a `u32` name length, the UTF-8 name, a `u32` rank, `rank` `u64`
/// dimensions and the `f32` payload. The epoch and seed travel as two
/// extra tensors, `meta.epoch` (`[1]`) and `meta.seed` (`[4]`, 16-bit
/// limbs, low first), so they are exact in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub epoch: u64,
    pub seed: u64,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(alloc::format!("truncated file: {what} at byte {} needs {n} bytes", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let meta = self.meta_tensors();
        out.extend_from_slice(&((self.tensors.len() + meta.len()) as u32).to_le_bytes());
        for (name, t) in self.tensors.iter().chain(meta.iter()) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn meta_tensors(&self) -> [(String, Tensor<f32>); 2] {
        let limbs = (0..4).map(|k| ((self.seed >> (16 * k)) & 0xffff) as f32).collect();
        [
            (META_EPOCH.into(), Tensor::scalar(self.epoch as f32)),
            (META_SEED.into(), Tensor::new(&[4], limbs).expect("4 limbs")),
        ]
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(alloc::format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(magic),
                "SSBCKPT1"
            )));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        let (mut epoch, mut seed) = (None, None);
        for i in 0..count {
            let len = r.u32("name length")? as usize;
            let name: String = core::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Checkpoint(alloc::format!("tensor {i}: name is not UTF-8")))?
                .into();
            let rank = r.u32("rank")? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::Checkpoint(alloc::format!("tensor `{name}`: unsupported rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("dimension")? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::Checkpoint(alloc::format!("tensor `{name}`: shape {shape:?} is too large")))?;
            let payload = r.take(numel * 4, "payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(alloc::format!("tensor `{name}`: {e}")))?;
            match name.as_str() {
                META_EPOCH => epoch = Some(t.data()[0] as u64),
                META_SEED if t.len() == 4 => {
                    seed = Some(t.data().iter().enumerate().fold(0u64, |a, (k, &v)| a | ((v as u64) << (16 * k))))
                }
                _ => tensors.push((name, t)),
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(alloc::format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            tensors,
            epoch: epoch.unwrap_or(0),
            seed: seed.unwrap_or(0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample() -> Checkpoint {
        Checkpoint {
            tensors: vec![
                ("a.w".into(), Tensor::new(&[2, 3], vec![1.5, -0.0, f32::MIN_POSITIVE, 3.25, 1e-30, -7.0]).unwrap()),
                ("b".into(), Tensor::scalar(0.1)),
            ],
            epoch: 17,
            seed: 0xDEAD_BEEF_1234_5678,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let bytes = c.encode();
        assert_eq!(&bytes[..8], b"SSBCKPT1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        let d = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(d.epoch, 17);
        assert_eq!(d.seed, 0xDEAD_BEEF_1234_5678);
        for ((n1, t1), (n2, t2)) in c.tensors.iter().zip(&d.tensors) {
            assert_eq!(n1, n2);
            let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        assert_eq!(d.encode(), bytes);
    }

    #[test]
    fn truncation_and_magic_errors() {
        let bytes = sample().encode();
        for cut in [0, 5, 12, 20, bytes.len() - 1] {
            assert!(matches!(Checkpoint::decode(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[7] = b'2';
        let err = Checkpoint::decode(&bad).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn big_endian_count_is_rejected() {
        // A byte-swapped tensor count claims far more tensors than present.
        let mut bytes = sample().encode();
        bytes[8..12].copy_from_slice(&4u32.to_be_bytes());
        assert!(Checkpoint::decode(&bytes).is_err());
    }
}
