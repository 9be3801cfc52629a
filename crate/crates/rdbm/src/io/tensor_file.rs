//! Binary tensor container.
//!
//! Layout: magic "RDBT", version u32, ndim u32, dims u32 each, then the
//! payload as 32-bit little-endian floats in row-major order. Storage is
//! 32-bit while computation stays 64-bit; a write/read round trip is
//! bit-exact after that documented narrowing cast.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{RdbmError, Result};
use crate::tensor::TensorGrid;

const MAGIC: &[u8; 4] = b"RDBT";
const VERSION: u32 = 1;

pub fn write_tensor(path: &Path, grid: &TensorGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(grid.shape().len() as u32).to_le_bytes())?;
    for &d in grid.shape() {
        let d32 = u32::try_from(d).map_err(|_| RdbmError::Format {
            path: path.display().to_string(),
            reason: format!("dimension {d} exceeds u32"),
        })?;
        w.write_all(&d32.to_le_bytes())?;
    }
    for &v in grid.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<TensorGrid> {
    let fail = |reason: &str| RdbmError::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fail("truncated magic"))?;
    if &magic != MAGIC {
        return Err(fail("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|_| fail("truncated version"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf).map_err(|_| fail("truncated ndim"))?;
    let ndim = u32::from_le_bytes(u32buf) as usize;
    if ndim > 8 {
        return Err(fail(&format!("implausible ndim {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for _ in 0..ndim {
        r.read_exact(&mut u32buf).map_err(|_| fail("truncated dims"))?;
        let d = u32::from_le_bytes(u32buf) as usize;
        count = count
            .checked_mul(d)
            .ok_or_else(|| fail("dimension product overflow"))?;
        shape.push(d);
    }
    if count > (1 << 28) {
        return Err(fail("payload too large"));
    }
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf).map_err(|_| fail("truncated payload"))?;
        data.push(f32::from_le_bytes(u32buf) as f64);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(fail("trailing bytes after payload"));
    }
    TensorGrid::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact_after_f32_cast() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.rdbt");
        let mut s = crate::rng::Stream::named(1, "tf");
        let grid = TensorGrid::zeros(vec![3, 5]).normal_like(&mut s);
        // Pre-narrow so the round trip is exactly identity.
        let narrowed = grid.map(|v| v as f32 as f64);
        write_tensor(&path, &narrowed).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), narrowed.shape());
        for (a, b) in back.data().iter().zip(narrowed.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.rdbt");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(read_tensor(&path), Err(RdbmError::Format { .. })));
        let path2 = dir.path().join("trunc.rdbt");
        write_tensor(&path2, &TensorGrid::full(vec![4], 1.0)).unwrap();
        let bytes = std::fs::read(&path2).unwrap();
        std::fs::write(&path2, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_tensor(&path2), Err(RdbmError::Format { .. })));
    }
}
