//! Named little-endian f32 tensor container shared by checkpoints and
//! extractor weights.
//!
//! Layout: magic `LDWS`, u32 version, u32 tensor count, then per tensor a
//! u32 name length, UTF-8 name, u32 rank, u32 dims, and `prod(dims)` f32
//! values. All integers little-endian.

use std::path::Path;

use crate::error::{ContainerError, Error, Result};
use crate::tensor::{lit, Real, Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"LDWS";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        dims: Vec<usize>,
        data: Vec<f32>,
    ) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(ContainerError::BadName.into());
        }
        if self.get(&name).is_some() {
            return Err(ContainerError::DuplicateName(name).into());
        }
        let expected: usize = dims.iter().product();
        if dims.len() > MAX_RANK || expected != data.len() {
            return Err(ContainerError::SizeMismatch {
                name,
                declared: data.len(),
                expected,
            }
            .into());
        }
        self.tensors.push(NamedTensor { name, dims, data });
        Ok(())
    }

    /// Stores a rank-4 tensor under `name`.
    pub fn insert_tensor<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) -> Result<()> {
        let data = t.data().iter().map(|&v| Real::to_f64(v) as f32).collect();
        self.insert(name, t.shape().dims().to_vec(), data)
    }

    pub fn insert_scalars(&mut self, name: impl Into<String>, values: &[f32]) -> Result<()> {
        self.insert(name, vec![values.len()], values.to_vec())
    }

    pub fn require(&self, name: &str) -> Result<&NamedTensor> {
        self.get(name)
            .ok_or_else(|| ContainerError::Missing(name.to_string()).into())
    }

    /// Reads `name` as a tensor of `shape`. Any dims whose product and
    /// non-unit extents agree with `shape` are accepted, so `[c]` loads as
    /// `[1, c, 1, 1]`.
    pub fn tensor<T: Real>(&self, name: &str, shape: Shape) -> Result<Tensor<T>> {
        let t = self.require(name)?;
        let squeeze = |d: &[usize]| d.iter().copied().filter(|&v| v != 1).collect::<Vec<_>>();
        if squeeze(&t.dims) != squeeze(&shape.dims()) {
            return Err(ContainerError::WrongShape {
                name: name.to_string(),
                found: t.dims.clone(),
                expected: shape.dims().to_vec(),
            }
            .into());
        }
        Tensor::new(shape, t.data.iter().map(|&v| lit(v as f64)).collect())
    }

    pub fn scalars(&self, name: &str) -> Result<&[f32]> {
        Ok(&self.require(name)?.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(ContainerError::BadMagic(magic).into());
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion(version).into());
        }
        let count = r.u32("tensor count")? as usize;
        let mut c = Container::new();
        for k in 0..count {
            let len = r.u32(&format!("name length of tensor {k}"))? as usize;
            let name = std::str::from_utf8(r.take(len, &format!("name of tensor {k}"))?)
                .map_err(|_| ContainerError::BadName)?
                .to_string();
            let rank = r.u32(&format!("rank of '{name}'"))? as usize;
            if rank > MAX_RANK {
                return Err(
                    ContainerError::Truncated(format!("'{name}' declares rank {rank}")).into(),
                );
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32(&format!("dims of '{name}'"))? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| ContainerError::Truncated(format!("'{name}' dims overflow")))?;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| ContainerError::Truncated(format!("'{name}' dims overflow")))?,
                &format!("data of '{name}'"),
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            c.insert(name, dims, data)?;
        }
        if r.pos != bytes.len() {
            return Err(ContainerError::TrailingBytes(bytes.len() - r.pos).into());
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Container::from_bytes(&bytes)
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let file_err = |source| Error::File {
        path: path.to_path_buf(),
        source,
    };
    std::fs::write(&tmp, bytes).map_err(file_err)?;
    std::fs::rename(&tmp, path).map_err(file_err)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                ContainerError::Truncated(format!(
                    "{what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.insert(
            "a.weight",
            vec![2, 1, 3, 3],
            (0..18).map(|v| v as f32 * 0.5 - 3.0).collect(),
        )
        .unwrap();
        c.insert("a.bias", vec![2], vec![f32::MIN_POSITIVE, -0.0])
            .unwrap();
        c.insert("meta.step", vec![1], vec![7.0]).unwrap();
        c
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in c.tensors().iter().zip(back.tensors()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.dims, b.dims);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
    }

    #[test]
    fn wrong_magic_is_unrecognized() {
        let mut b = sample().to_bytes();
        b[0] = b'X';
        let e = Container::from_bytes(&b).unwrap_err();
        assert!(e.to_string().contains("unrecognized container"), "{e}");
    }

    #[test]
    fn every_truncation_is_reported() {
        let b = sample().to_bytes();
        for cut in 0..b.len() {
            let e = Container::from_bytes(&b[..cut]).unwrap_err();
            assert!(
                matches!(e, Error::Container(ContainerError::Truncated(_))),
                "cut {cut}: {e}"
            );
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut b = sample().to_bytes();
        b.push(0);
        assert!(matches!(
            Container::from_bytes(&b),
            Err(Error::Container(ContainerError::TrailingBytes(1)))
        ));
    }

    #[test]
    fn version_and_duplicates() {
        let mut b = sample().to_bytes();
        b[4] = 9;
        assert!(Container::from_bytes(&b)
            .unwrap_err()
            .to_string()
            .contains('9'));
        let mut c = sample();
        assert!(c.insert("a.bias", vec![1], vec![0.0]).is_err());
        assert!(c.insert("x", vec![2, 2], vec![0.0]).is_err());
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let c = sample();
        let e = c
            .tensor::<f32>("a.weight", Shape::new(2, 2, 3, 3))
            .unwrap_err();
        assert!(e.to_string().contains("a.weight"), "{e}");
        let b = c.tensor::<f64>("a.bias", Shape::vector(2)).unwrap();
        assert_eq!(b.shape(), Shape::vector(2));
        let e = c.tensor::<f32>("nope", Shape::scalar()).unwrap_err();
        assert!(e.to_string().contains("nope"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ldws");
        sample().save(&p).unwrap();
        assert_eq!(Container::load(&p).unwrap(), sample());
        assert!(Container::load(&dir.path().join("missing")).is_err());
    }
}
