//! Versioned flat binary checkpoint: named tensors as shapes + f64 payloads.
//!
//! Layout (all integers little-endian):
//! `magic "RSNETV1\0" | u32 tensor count | per tensor:
//!  u32 name len | name bytes | u32 rank | u64 dims... | f64 data...`

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"RSNETV1\0";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorEntry {
    pub fn new(name: &str, shape: &[usize], data: &[f64]) -> TensorEntry {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: data.to_vec(),
        }
    }
}

pub fn save_checkpoint(path: &Path, entries: &[TensorEntry]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for &d in &e.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in &e.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<TensorEntry>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::SchemaVersion {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            got: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        entries.push(TensorEntry {
            name: String::from_utf8_lossy(&name).into_owned(),
            shape,
            data,
        });
    }
    Ok(entries)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_entries() {
        let dir = std::env::temp_dir().join("romdp_shield_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.bin");
        let entries = vec![
            TensorEntry::new("w0", &[2, 3], &[1.0, -2.5, 3.0, 0.0, 1e-9, 7.25]),
            TensorEntry::new("b0", &[2], &[0.5, -0.5]),
        ];
        save_checkpoint(&path, &entries).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(entries, loaded);
    }

    #[test]
    fn bad_magic_is_version_error() {
        let dir = std::env::temp_dir().join("romdp_shield_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bogus.bin");
        std::fs::write(&path, b"NOTANET\0rest").unwrap();
        match load_checkpoint(&path) {
            Err(Error::SchemaVersion { .. }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
