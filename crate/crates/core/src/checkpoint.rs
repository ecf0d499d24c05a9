//! "VTL1" named-tensor container.
//!
//! Layout, all integers little-endian `u64`: magic `VTL1`, entry count, then
//! per entry the name length, name bytes (UTF-8), rank, dimensions, and the
//! values as little-endian IEEE-754 doubles.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"VTL1";

pub fn encode(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Upper bound on dimensions accepted when decoding, to fail cleanly on
/// corrupt files instead of attempting huge allocations.
const MAX_VALUES: u64 = 1 << 32;

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut r = bytes;
    let io = |e: io::Error| format!("truncated file ({e})");
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(format!("bad magic {magic:?}"));
    }
    let count = read_u64(&mut r).map_err(io)?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = read_u64(&mut r).map_err(io)? as usize;
        if len > r.len() {
            return Err("truncated name".into());
        }
        let (name, rest) = r.split_at(len);
        let name = String::from_utf8(name.to_vec()).map_err(|e| e.to_string())?;
        r = rest;
        let rank = read_u64(&mut r).map_err(io)?;
        if rank > 16 {
            return Err(format!("`{name}`: implausible rank {rank}"));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let d = read_u64(&mut r).map_err(io)?;
            numel = numel.saturating_mul(d);
            shape.push(d as usize);
        }
        if numel > MAX_VALUES || (numel * 8) as usize > r.len() {
            return Err(format!("`{name}`: truncated values"));
        }
        let mut data = Vec::with_capacity(numel as usize);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(read_u64(&mut r).map_err(io)?.to_le_bytes()));
        }
        let t = Tensor::new(shape, data).map_err(|e| format!("`{name}`: {e}"))?;
        entries.push((name, t));
    }
    if !r.is_empty() {
        return Err(format!("{} trailing bytes", r.len()));
    }
    Ok(entries)
}

pub fn write(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(entries)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|m| Error::format(path, m))
}

/// All parameters of `graph`, including running statistics.
pub fn graph_entries(graph: &Graph) -> Vec<(String, Tensor)> {
    graph
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect()
}

/// Overwrites every parameter of `graph` from `entries`, matched by name.
pub fn load_into(graph: &mut Graph, entries: &[(String, Tensor)]) -> Result<()> {
    for p in graph.params_mut() {
        let (_, t) = entries
            .iter()
            .find(|(n, _)| *n == p.name)
            .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter `{}`", p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::shape(&p.name, p.value.shape(), t.shape()));
        }
        p.value = t.clone();
    }
    Ok(())
}

pub fn save_graph(graph: &Graph, path: &Path) -> Result<()> {
    write(path, &graph_entries(graph))
}

pub fn load_graph(graph: &mut Graph, path: &Path) -> Result<()> {
    load_into(graph, &read(path)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn tensor_strategy() -> impl Strategy<Value = Tensor> {
        prop::collection::vec(1usize..4, 1..4).prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            prop::collection::vec(any::<f64>(), n)
                .prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            entries in prop::collection::vec(("[a-z./_0-9]{0,12}", tensor_strategy()), 0..5)
        ) {
            let bytes = encode(&entries);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(back.len(), entries.len());
            for ((n1, t1), (n2, t2)) in entries.iter().zip(&back) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
            prop_assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2], vec![1.0, -0.5]).unwrap();
        let bytes = encode(&[("w".into(), t)]);
        assert_eq!(&bytes[..4], b"VTL1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 1);
        assert_eq!(bytes.len(), 4 + 8 + 8 + 1 + 8 + 8 + 16);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode(&[("a".into(), t)]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"VTL2\0\0\0\0\0\0\0\0").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.vtl");
        let t = Tensor::new(vec![1, 2], vec![f64::MIN_POSITIVE, -0.0]).unwrap();
        write(&path, &[("x".into(), t.clone())]).unwrap();
        let back = read(&path).unwrap();
        assert_eq!(back[0].1.data()[1].to_bits(), (-0.0f64).to_bits());
        assert!(read(&dir.path().join("missing")).is_err());
    }
}
