//! Checkpoint files: a flat dump of named parameter tensors.
//!
//! Little-endian layout: magic `NFPT`, version `u32 = 1`, record count
//! `u64`, then per parameter (in sorted name order) the UTF-8 name
//! (`u32` length prefix), the shape (`u32` rank, `u32` extents), and the
//! raw `f32` values. Floats round-trip bitwise, so saving a loaded store
//! reproduces the file exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use nfmimo_core::mssan::Network;
use nfmimo_core::tensor::{ParamStore, TensorData};

pub const MAGIC: [u8; 4] = *b"NFPT";
pub const VERSION: u32 = 1;

pub fn save(store: &ParamStore<f32>, path: &Path) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (name, tensor) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore<f32>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .with_context(|| format!("reading header of {}", path.display()))?;
    if magic != MAGIC {
        bail!("{} is not a checkpoint (bad magic)", path.display());
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        bail!("unsupported checkpoint version {version} in {}", path.display());
    }
    let count = read_u64(&mut r)?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .with_context(|| format!("reading record {i} of {}", path.display()))?;
        let name = String::from_utf8(name_bytes)
            .with_context(|| format!("record {i} name is not UTF-8"))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes)
            .with_context(|| format!("reading values of {name} in {}", path.display()))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store
            .insert(&name, TensorData::new(shape, data))
            .map_err(|e| anyhow::anyhow!("{e} while loading {}", path.display()))?;
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        bail!("trailing bytes after {count} records in {}", path.display());
    }
    Ok(store)
}

/// Load `path` into `net` after verifying the stored parameter names and
/// shapes match the architecture exactly.
pub fn load_into_network(net: &mut Network<f32>, path: &Path) -> Result<()> {
    let loaded = load(path)?;
    let variant = net.config().variant;
    if loaded.len() != net.store.len() {
        bail!(
            "{} holds {} parameters but the {variant} network expects {}",
            path.display(),
            loaded.len(),
            net.store.len()
        );
    }
    for ((got_name, got), (want_name, want)) in loaded.iter().zip(net.store.iter()) {
        if got_name != want_name {
            bail!(
                "{} lists parameter {got_name} where the {variant} network expects {want_name}",
                path.display()
            );
        }
        if got.shape() != want.shape() {
            bail!(
                "parameter {got_name}: checkpoint shape {:?} does not match network shape {:?}",
                got.shape(),
                want.shape()
            );
        }
    }
    net.store = loaded;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nfmimo_core::mssan::NetworkConfig;

    fn scratch_store() -> ParamStore<f32> {
        let mut store = ParamStore::new();
        store
            .insert("b.w", TensorData::new(vec![3], vec![1.0, -2.5, 3.25]))
            .unwrap();
        store
            .insert("a.kernel", TensorData::new(vec![2, 3, 2], vec![0.5; 12]))
            .unwrap();
        // Awkward floats must survive bitwise: negative zero, subnormal, NaN.
        store
            .insert(
                "z",
                TensorData::new(vec![3], vec![-0.0, f32::MIN_POSITIVE / 2.0, f32::NAN]),
            )
            .unwrap();
        store
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.nfpt");
        let second = dir.path().join("b.nfpt");
        let store = scratch_store();
        save(&store, &first).unwrap();
        let loaded = load(&first).unwrap();
        save(&loaded, &second).unwrap();
        assert_eq!(
            std::fs::read(&first).unwrap(),
            std::fs::read(&second).unwrap()
        );
        for ((an, at), (bn, bt)) in store.iter().zip(loaded.iter()) {
            assert_eq!(an, bn);
            assert_eq!(at.shape(), bt.shape());
            for (x, y) in at.data().iter().zip(bt.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.nfpt");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(load(&path).unwrap_err().to_string().contains("bad magic"));
    }

    #[test]
    fn network_loading_verifies_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cnn.nfpt");
        let cnn = Network::<f32>::new(NetworkConfig::cnn_baseline(8, 4), 1).unwrap();
        save(&cnn.store, &path).unwrap();

        let mut same = Network::<f32>::new(NetworkConfig::cnn_baseline(8, 4), 2).unwrap();
        load_into_network(&mut same, &path).unwrap();
        for ((_, got), (_, want)) in same.store.iter().zip(cnn.store.iter()) {
            assert_eq!(got.data(), want.data());
        }

        let mut other = Network::<f32>::new(NetworkConfig::san(8, 4), 2).unwrap();
        assert!(load_into_network(&mut other, &path).is_err());
    }
}
