//! Versioned binary container for model parameters.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic  b"NNAR"
//! u32    format version (currently 1)
//! u32    entry count
//! entry* sorted by name:
//!   u32  name length, then UTF-8 name bytes
//!   u8   kind: 0 = f64 tensor, 1 = raw bytes
//!   tensor: u32 ndim, u64 dims..., f64 values (row-major)
//!   bytes:  u64 length, raw payload
//! ```
//!
//! Entries are kept in a sorted map so serialization is byte-deterministic.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"NNAR";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a model archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error("archive entry not found: {0}")]
    MissingEntry(String),
    #[error("archive entry {0} has the wrong kind")]
    WrongKind(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Tensor { shape: Vec<usize>, data: Vec<f64> },
    Bytes(Vec<u8>),
}

/// Named collection of tensors and metadata blobs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    entries: BTreeMap<String, Entry>,
}

impl Archive {
    pub fn new() -> Self {
        Archive::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn insert_tensor(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length must match its shape"
        );
        self.entries
            .insert(name.to_string(), Entry::Tensor { shape, data });
    }

    pub fn insert_array2(&mut self, name: &str, a: &Array2<f64>) {
        let (r, c) = a.dim();
        self.insert_tensor(name, vec![r, c], a.iter().cloned().collect());
    }

    pub fn insert_array1(&mut self, name: &str, a: &Array1<f64>) {
        self.insert_tensor(name, vec![a.len()], a.to_vec());
    }

    pub fn insert_bytes(&mut self, name: &str, data: Vec<u8>) {
        self.entries.insert(name.to_string(), Entry::Bytes(data));
    }

    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[f64]), ArchiveError> {
        match self.entries.get(name) {
            Some(Entry::Tensor { shape, data }) => Ok((shape, data)),
            Some(_) => Err(ArchiveError::WrongKind(name.to_string())),
            None => Err(ArchiveError::MissingEntry(name.to_string())),
        }
    }

    pub fn array2(&self, name: &str) -> Result<Array2<f64>, ArchiveError> {
        let (shape, data) = self.tensor(name)?;
        if shape.len() != 2 {
            return Err(ArchiveError::Corrupt(format!(
                "{name}: expected 2-d tensor, found {}-d",
                shape.len()
            )));
        }
        Array2::from_shape_vec((shape[0], shape[1]), data.to_vec())
            .map_err(|e| ArchiveError::Corrupt(format!("{name}: {e}")))
    }

    pub fn array1(&self, name: &str) -> Result<Array1<f64>, ArchiveError> {
        let (shape, data) = self.tensor(name)?;
        if shape.len() != 1 {
            return Err(ArchiveError::Corrupt(format!(
                "{name}: expected 1-d tensor, found {}-d",
                shape.len()
            )));
        }
        Ok(Array1::from_vec(data.to_vec()))
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8], ArchiveError> {
        match self.entries.get(name) {
            Some(Entry::Bytes(b)) => Ok(b),
            Some(_) => Err(ArchiveError::WrongKind(name.to_string())),
            None => Err(ArchiveError::MissingEntry(name.to_string())),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ArchiveError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, entry) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            match entry {
                Entry::Tensor { shape, data } => {
                    w.write_all(&[0u8])?;
                    w.write_all(&(shape.len() as u32).to_le_bytes())?;
                    for &d in shape {
                        w.write_all(&(d as u64).to_le_bytes())?;
                    }
                    for &v in data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Entry::Bytes(b) => {
                    w.write_all(&[1u8])?;
                    w.write_all(&(b.len() as u64).to_le_bytes())?;
                    w.write_all(b)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ArchiveError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(ArchiveError::UnsupportedVersion(version));
        }
        let count = read_u32(&mut r)? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| ArchiveError::Corrupt("entry name is not UTF-8".into()))?;
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind)?;
            let entry = match kind[0] {
                0 => {
                    let ndim = read_u32(&mut r)? as usize;
                    let mut shape = Vec::with_capacity(ndim);
                    for _ in 0..ndim {
                        shape.push(read_u64(&mut r)? as usize);
                    }
                    let len = shape.iter().product::<usize>();
                    let mut data = Vec::with_capacity(len);
                    let mut buf = [0u8; 8];
                    for _ in 0..len {
                        r.read_exact(&mut buf)?;
                        data.push(f64::from_le_bytes(buf));
                    }
                    Entry::Tensor { shape, data }
                }
                1 => {
                    let len = read_u64(&mut r)? as usize;
                    let mut data = vec![0u8; len];
                    r.read_exact(&mut data)?;
                    Entry::Bytes(data)
                }
                k => return Err(ArchiveError::Corrupt(format!("unknown entry kind {k}"))),
            };
            entries.insert(name, entry);
        }
        Ok(Archive { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), ArchiveError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ArchiveError> {
        Archive::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ArchiveError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ArchiveError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
