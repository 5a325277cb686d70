//! Manifest + blob container shared by model checkpoints, denoisers and
//! explanation matrices.
//!
//! Layout: header line, u64 manifest length, manifest JSON, u64 value count,
//! then the values as little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn write<M: Serialize>(path: &Path, header: &str, manifest: &M, blob: &[f64]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    let m = serde_json::to_vec(manifest)?;
    out.extend_from_slice(&(m.len() as u64).to_le_bytes());
    out.extend_from_slice(&m);
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    for v in blob {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read<M: DeserializeOwned>(path: &Path, header: &str) -> Result<(M, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.to_string() };
    let h = header.len();
    if bytes.len() < h + 1 || &bytes[..h] != header.as_bytes() || bytes[h] != b'\n' {
        return Err(bad(&format!("missing header {header}")));
    }
    let mut pos = h + 1;
    let take_u64 = |pos: &mut usize| -> Result<u64> {
        let s = bytes.get(*pos..*pos + 8).ok_or_else(|| bad("truncated length field"))?;
        *pos += 8;
        Ok(u64::from_le_bytes(s.try_into().expect("8 bytes")))
    };
    let mlen = take_u64(&mut pos)? as usize;
    let mbytes = bytes.get(pos..pos + mlen).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: M = serde_json::from_slice(mbytes).map_err(|e| bad(&e.to_string()))?;
    pos += mlen;
    let count = take_u64(&mut pos)? as usize;
    let end = pos + count * 8;
    if bytes.len() != end {
        return Err(bad("blob length does not match its count"));
    }
    let blob = bytes[pos..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((manifest, blob))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let blob = vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300];
        write(&p, "TEST-1", &vec!["a".to_string()], &blob).unwrap();
        let (m, b): (Vec<String>, Vec<f64>) = read(&p, "TEST-1").unwrap();
        assert_eq!(m, vec!["a"]);
        assert_eq!(b.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), blob.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert!(read::<Vec<String>>(&p, "OTHER-1").is_err());
    }
}
