//! Checkpoint files: a text manifest plus a flat little-endian `f64` blob.
//!
//! Manifest layout:
//!
//! ```text
//! # gdgm-checkpoint v1
//! # blob <file name>
//! @ key = value            (metadata, optional, repeated)
//! name<TAB>d0,d1<TAB>byte_offset<TAB>trainable|frozen
//! ```
//!
//! The blob lives next to the manifest at `<manifest>.bin`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::{DenseArray, ParameterStore};
use crate::error::{GdgmError, Result};

const MAGIC: &str = "# gdgm-checkpoint v1";

pub fn blob_path(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

/// Encode into `(manifest, blob)` without touching the filesystem.
pub fn encode(store: &ParameterStore, meta: &BTreeMap<String, String>, blob_name: &str) -> (String, Vec<u8>) {
    let mut manifest = String::new();
    manifest.push_str(MAGIC);
    manifest.push('\n');
    manifest.push_str(&format!("# blob {blob_name}\n"));
    for (k, v) in meta {
        manifest.push_str(&format!("@ {k} = {v}\n"));
    }
    let mut blob = Vec::new();
    for (name, p) in store.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        let flag = if p.trainable { "trainable" } else { "frozen" };
        manifest.push_str(&format!("{name}\t{}\t{}\t{flag}\n", dims.join(","), blob.len()));
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    (manifest, blob)
}

pub fn decode(manifest: &str, blob: &[u8]) -> Result<(ParameterStore, BTreeMap<String, String>)> {
    let mut lines = manifest.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(GdgmError::Checkpoint("missing manifest header".into())),
    }
    let mut store = ParameterStore::new();
    let mut meta = BTreeMap::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("@ ") {
            let (k, v) = rest
                .split_once(" = ")
                .ok_or_else(|| GdgmError::Parse { line: lineno, msg: "bad metadata line".into() })?;
            meta.insert(k.to_string(), v.to_string());
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(GdgmError::Parse { line: lineno, msg: format!("expected 4 fields, got {}", cols.len()) });
        }
        let shape = cols[1]
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| GdgmError::Parse { line: lineno, msg: format!("shape: {e}") })?;
        let offset: usize = cols[2].parse().map_err(|e| GdgmError::Parse { line: lineno, msg: format!("offset: {e}") })?;
        let n: usize = shape.iter().product();
        let end = offset + 8 * n;
        if end > blob.len() {
            return Err(GdgmError::Checkpoint(format!("`{}` extends past end of blob", cols[0])));
        }
        let data = blob[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = DenseArray::new(shape, data)?;
        match cols[3] {
            "trainable" => store.insert(cols[0], value)?,
            "frozen" => store.insert_frozen(cols[0], value)?,
            other => return Err(GdgmError::Parse { line: lineno, msg: format!("unknown flag `{other}`") }),
        }
    }
    Ok((store, meta))
}

pub fn save(path: &Path, store: &ParameterStore, meta: &BTreeMap<String, String>) -> Result<()> {
    let blob_file = blob_path(path);
    let blob_name = blob_file.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (manifest, blob) = encode(store, meta, &blob_name);
    fs::write(path, manifest)?;
    fs::write(blob_file, blob)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParameterStore, BTreeMap<String, String>)> {
    let manifest = fs::read_to_string(path)
        .map_err(|e| GdgmError::Checkpoint(format!("cannot read manifest {}: {e}", path.display())))?;
    let blob = fs::read(blob_path(path))
        .map_err(|e| GdgmError::Checkpoint(format!("cannot read blob for {}: {e}", path.display())))?;
    decode(&manifest, &blob)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let mut store = ParameterStore::new();
        store
            .insert("a.w", DenseArray::from_vec(2, 2, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]))
            .unwrap();
        store.insert_frozen("meta.scale", DenseArray::scalar(std::f64::consts::PI)).unwrap();
        store
            .insert("b", DenseArray::new(vec![2, 1, 3], (0..6).map(|i| i as f64 / 7.0).collect()).unwrap())
            .unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("time_scale".to_string(), "0.5".to_string());
        let (m, blob) = encode(&store, &meta, "x.bin");
        let (back, meta_back) = decode(&m, &blob).unwrap();
        assert_eq!(meta, meta_back);
        for (name, p) in store.iter() {
            let q = back.get(name).unwrap();
            assert_eq!(p.value.shape(), q.value.shape());
            assert_eq!(p.trainable, q.trainable);
            let bits = |a: &DenseArray| a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&p.value), bits(&q.value));
        }
        let (m2, blob2) = encode(&back, &meta_back, "x.bin");
        assert_eq!(m, m2);
        assert_eq!(blob, blob2);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let mut store = ParameterStore::new();
        store.insert("w", DenseArray::zeros(3, 3)).unwrap();
        let (m, blob) = encode(&store, &BTreeMap::new(), "x.bin");
        assert!(decode(&m, &blob[..16]).is_err());
    }
}
