//! Checkpoint serialization.
//!
//! Layout: magic + format version, the architecture descriptor as canonical
//! UTF-8 text, then parameter blobs in name-sorted order. Each blob carries a
//! shape prefix and little-endian 32-bit reals. Saving a loaded checkpoint
//! reproduces the file byte-for-byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MSCKPT\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub descriptor: String,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(descriptor: String, mut params: Vec<(String, Tensor)>) -> Self {
        params.sort_by(|a, b| a.0.cmp(&b.0));
        Checkpoint { descriptor, params }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let desc = self.descriptor.as_bytes();
        w.write_all(&(desc.len() as u32).to_le_bytes())?;
        w.write_all(desc)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, t) in &self.params {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u32).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::CheckpointFormat("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(NnError::CheckpointFormat(format!(
                "unsupported version {version}"
            )));
        }
        let desc_len = read_u32(&mut r)? as usize;
        let mut desc = vec![0u8; desc_len];
        r.read_exact(&mut desc)?;
        let descriptor = String::from_utf8(desc)
            .map_err(|_| NnError::CheckpointFormat("descriptor not UTF-8".into()))?;
        let n = read_u32(&mut r)? as usize;
        let mut params = Vec::with_capacity(n);
        let mut prev_name: Option<String> = None;
        for _ in 0..n {
            let name_len = read_u32(&mut r)? as usize;
            let mut nb = vec![0u8; name_len];
            r.read_exact(&mut nb)?;
            let name = String::from_utf8(nb)
                .map_err(|_| NnError::CheckpointFormat("name not UTF-8".into()))?;
            if let Some(prev) = &prev_name {
                if *prev >= name {
                    return Err(NnError::CheckpointFormat(format!(
                        "parameters not in sorted order at `{name}`"
                    )));
                }
            }
            prev_name = Some(name.clone());
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(&mut r)? as usize);
            }
            let count: usize = shape.iter().product();
            let mut data = Vec::with_capacity(count);
            let mut buf = [0u8; 4];
            for _ in 0..count {
                r.read_exact(&mut buf)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
            params.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint { descriptor, params })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let ck = Checkpoint::new(
            "arch test v1".into(),
            vec![
                ("z.w".into(), Tensor::vector(vec![0.25, -1.5, 3.0])),
                ("a.b".into(), Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]])),
            ],
        );
        // name-sorted on construction
        assert_eq!(ck.params[0].0, "a.b");
        ck.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        assert_eq!(loaded.descriptor, "arch test v1");
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.ckpt");
        std::fs::write(&p, b"not a checkpoint").unwrap();
        assert!(Checkpoint::load(&p).is_err());
    }
}
