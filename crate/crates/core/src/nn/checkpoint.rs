//! Single-file parameter snapshots.
//!
//! Layout: an 8-byte little-endian header length, a JSON header, then the raw
//! tensor data as little-endian `f32`. The header maps each parameter name to
//! its shape and byte offset into the data section, and carries free-form
//! metadata (typically the network config).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

const MAX_HEADER: u64 = 64 << 20;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    shape: [usize; 4],
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dtype: String,
    byte_order: String,
    tensors: IndexMap<String, TensorEntry>,
    meta: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, params: &ParamStore<f32>, meta: serde_json::Value) -> Result<()> {
    let mut tensors = IndexMap::new();
    let mut offset = 0;
    for (name, v) in params.iter() {
        let d = v.dim();
        tensors.insert(
            name.to_string(),
            TensorEntry {
                shape: [d.0, d.1, d.2, d.3],
                offset,
            },
        );
        offset += v.len() * 4;
    }
    let header = Header {
        dtype: "f32".into(),
        byte_order: "little".into(),
        tensors,
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(&(json.len() as u64).to_le_bytes())?;
    write(&json)?;
    for (_, v) in params.iter() {
        for x in v.iter() {
            write(&x.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parameters in saved order, plus the metadata. Optimizer state is not stored.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore<f32>, serde_json::Value)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|e| Error::io(path, e))?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(Error::state(format!("{}: implausible header length {len}", path.display())));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.dtype != "f32" || header.byte_order != "little" {
        return Err(Error::state(format!(
            "{}: unsupported encoding {} / {}",
            path.display(),
            header.dtype,
            header.byte_order
        )));
    }
    let mut blob = Vec::new();
    r.read_to_end(&mut blob).map_err(|e| Error::io(path, e))?;
    let mut store = ParamStore::new();
    for (name, entry) in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * n;
        let bytes = blob
            .get(entry.offset..end)
            .ok_or_else(|| Error::state(format!("{}: tensor {name} past end of data", path.display())))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let [a, b, c, d] = entry.shape;
        let arr = Array4::from_shape_vec((a, b, c, d), data).expect("length checked");
        store.insert(name, arr)?;
    }
    Ok((store, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a.w", Array4::from_shape_fn((2, 3, 3, 3), |(o, i, y, x)| (o * 27 + i * 9 + y * 3 + x) as f32 * 0.1 - 2.0))
            .unwrap();
        s.insert("a.b", Array4::from_elem((1, 2, 1, 1), f32::MIN_POSITIVE)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &s, serde_json::json!({"kind": "test"})).unwrap();
        let (back, meta) = load_checkpoint(&p).unwrap();
        assert_eq!(meta["kind"], "test");
        assert_eq!(back.names().collect::<Vec<_>>(), vec!["a.w", "a.b"]);
        for (name, v) in s.iter() {
            assert_eq!(back.value(name).unwrap(), v);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Array4::ones((4, 4, 1, 1))).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &s, serde_json::Value::Null).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }
}
