//! Model files: the magic bytes, a `u32` little-endian length and the
//! network descriptor, a `u64` parameter count, then the parameters as
//! little-endian `f64` in layout order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::{FlatVector, ParamVector};
use super::spec::NetworkSpec;
use super::{NnError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CERTUN01";

pub fn write_checkpoint<W: Write>(
    mut w: W,
    spec: &NetworkSpec,
    params: &ParamVector,
) -> Result<()> {
    if params.dim() != spec.num_params() {
        return Err(NnError::ShapeMismatch(format!(
            "network has {} parameters, vector has {}",
            spec.num_params(),
            params.dim()
        )));
    }
    let desc = spec.descriptor();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(desc.len() as u32).to_le_bytes())?;
    w.write_all(desc.as_bytes())?;
    w.write_all(&(params.dim() as u64).to_le_bytes())?;
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            NnError::Checkpoint(format!("truncated while reading {what}"))
        }
        _ => NnError::Io(e),
    })
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(NetworkSpec, ParamVector)> {
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 4];
    read_exact(&mut r, &mut len, "descriptor length")?;
    let mut desc = vec![0u8; u32::from_le_bytes(len) as usize];
    read_exact(&mut r, &mut desc, "descriptor")?;
    let desc = String::from_utf8(desc)
        .map_err(|_| NnError::Checkpoint("descriptor is not UTF-8".into()))?;
    let spec = NetworkSpec::from_descriptor(&desc)?;
    let mut count = [0u8; 8];
    read_exact(&mut r, &mut count, "parameter count")?;
    let count = u64::from_le_bytes(count) as usize;
    if count != spec.num_params() {
        return Err(NnError::Checkpoint(format!(
            "descriptor needs {} parameters, file declares {count}",
            spec.num_params()
        )));
    }
    let mut values = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        read_exact(&mut r, &mut buf, "parameters")?;
        values.push(f64::from_le_bytes(buf));
    }
    let params = ParamVector::new(values, spec.layout().clone())?;
    Ok((spec, params))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    spec: &NetworkSpec,
    params: &ParamVector,
) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), spec, params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(NetworkSpec, ParamVector)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        for spec in [NetworkSpec::mnist_tiny(10), NetworkSpec::cifar_tiny(10)] {
            let p = spec.init(42);
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &spec, &p).unwrap();
            assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
            let (s2, p2) = read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(s2, spec);
            assert_eq!(p2, p);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let spec = NetworkSpec::mnist_tiny(10);
        let p = spec.init(1);
        save_checkpoint(&path, &spec, &p).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().1, p);
    }

    #[test]
    fn rejects_corruption() {
        let spec = NetworkSpec::mnist_tiny(10);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &spec.init(0)).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(bad.as_slice()),
            Err(NnError::Checkpoint(_))
        ));
        assert!(matches!(
            read_checkpoint(&buf[..buf.len() - 3]),
            Err(NnError::Checkpoint(_))
        ));
        let other = NetworkSpec::mnist_tiny(3);
        assert!(write_checkpoint(Vec::new(), &other, &spec.init(0)).is_err());
    }
}
