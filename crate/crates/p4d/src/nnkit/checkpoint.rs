//! Checkpoint file format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic   8 bytes  "P4DCKPT\0"
//! version u32
//! section u32 length + UTF-8 tag ("teacher4d", "student", ...)
//! count   u32 number of params
//! per param:
//!   name  u32 length + UTF-8
//!   ndim  u32, dims u64 each
//!   dtype u8 (0 = f64)
//!   data  numel * 8 bytes of f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::ArrayD;
use sha2::{Digest, Sha256};

use crate::nnkit::ParamStore;
use crate::{P4dError, Result};

const MAGIC: &[u8; 8] = b"P4DCKPT\0";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

pub fn save(path: &Path, section: &str, store: &ParamStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(section.len() as u32)?;
    w.write_all(section.as_bytes())?;
    w.write_u32::<LittleEndian>(store.len() as u32)?;
    for p in store.iter() {
        w.write_u32::<LittleEndian>(p.name.len() as u32)?;
        w.write_all(p.name.as_bytes())?;
        w.write_u32::<LittleEndian>(p.value.ndim() as u32)?;
        for &d in p.value.shape() {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        w.write_u8(DTYPE_F64)?;
        for &v in p.value.iter() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint; returns the section tag and a store with every param
/// marked trainable (callers re-apply freeze policy).
pub fn load(path: &Path) -> Result<(String, ParamStore)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(P4dError::Checkpoint(format!("bad magic in {}", path.display())));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(P4dError::Checkpoint(format!("unsupported version {version}")));
    }
    let section = read_string(&mut r)?;
    let count = r.read_u32::<LittleEndian>()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = read_string(&mut r)?;
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let dtype = r.read_u8()?;
        if dtype != DTYPE_F64 {
            return Err(P4dError::Checkpoint(format!("unsupported dtype {dtype}")));
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&shape), data)
            .map_err(|e| P4dError::Checkpoint(e.to_string()))?;
        store.add(&name, arr)?;
    }
    Ok((section, store))
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| P4dError::Checkpoint(e.to_string()))
}

/// SHA-256 of the file contents, for run manifests.
pub fn file_hash(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut f, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_values_bitwise() {
        let mut store = ParamStore::new();
        store
            .add("block.w", ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[2, 3]), vec![1.0, -2.5, 0.0, 1e-300, f64::MAX, 3.125]).unwrap())
            .unwrap();
        store.add("block.b", crate::nnkit::init::zero_init(&[3])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save(&path, "student", &store).unwrap();
        let (section, loaded) = load(&path).unwrap();
        assert_eq!(section, "student");
        assert_eq!(loaded.content_hash(), store.content_hash());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"notackpt-file").unwrap();
        assert!(load(&path).is_err());
    }
}
