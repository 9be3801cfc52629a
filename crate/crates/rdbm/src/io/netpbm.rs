//! Binary netpbm images (P5 grayscale, P6 RGB), maxval 255.
//!
//! Values in [0, 1] quantize to 8 bits with round-half-away-from-zero;
//! out-of-range values clamp first.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{RdbmError, Result};
use crate::tensor::TensorGrid;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a [rows, cols] grid as binary P5.
pub fn write_pgm(path: &Path, grid: &TensorGrid) -> Result<()> {
    let (h, w) = grid_dims(grid, path, 2)?;
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{w} {h}\n255\n")?;
    for &v in grid.data() {
        out.write_all(&[quantize(v)])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a [rows, cols, 3] grid as binary P6.
pub fn write_ppm(path: &Path, grid: &TensorGrid) -> Result<()> {
    let (h, w) = grid_dims(grid, path, 3)?;
    if grid.shape()[2] != 3 {
        return Err(RdbmError::Format {
            path: path.display().to_string(),
            reason: "P6 needs a trailing dimension of 3".into(),
        });
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P6\n{w} {h}\n255\n")?;
    for &v in grid.data() {
        out.write_all(&[quantize(v)])?;
    }
    out.flush()?;
    Ok(())
}

fn grid_dims(grid: &TensorGrid, path: &Path, ndim: usize) -> Result<(usize, usize)> {
    if grid.shape().len() != ndim {
        return Err(RdbmError::Format {
            path: path.display().to_string(),
            reason: format!("expected {ndim}-d grid, got shape {:?}", grid.shape()),
        });
    }
    Ok((grid.shape()[0], grid.shape()[1]))
}

struct PnmHeader {
    width: usize,
    height: usize,
}

fn read_header(r: &mut impl Read, path: &Path, magic: &str) -> Result<PnmHeader> {
    let fail = |reason: String| RdbmError::Format {
        path: path.display().to_string(),
        reason,
    };
    // Header tokens separated by whitespace; '#' starts a comment.
    let mut tokens = Vec::new();
    let mut token = String::new();
    let mut in_comment = false;
    let mut byte = [0u8; 1];
    while tokens.len() < 4 {
        if r.read(&mut byte)? == 0 {
            return Err(fail("truncated header".into()));
        }
        let c = byte[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' {
            in_comment = true;
        } else if c.is_whitespace() {
            if !token.is_empty() {
                tokens.push(std::mem::take(&mut token));
            }
        } else {
            token.push(c);
        }
    }
    if tokens[0] != magic {
        return Err(fail(format!("expected {magic}, got {}", tokens[0])));
    }
    let width: usize = tokens[1].parse().map_err(|_| fail("bad width".into()))?;
    let height: usize = tokens[2].parse().map_err(|_| fail("bad height".into()))?;
    if tokens[3] != "255" {
        return Err(fail(format!("only maxval 255 supported, got {}", tokens[3])));
    }
    if width == 0 || height == 0 || width.saturating_mul(height) > (1 << 26) {
        return Err(fail(format!("implausible dimensions {width}x{height}")));
    }
    Ok(PnmHeader { width, height })
}

/// Reads binary P5 into a [rows, cols] grid of values in [0, 1].
pub fn read_pgm(path: &Path) -> Result<TensorGrid> {
    let mut r = BufReader::new(File::open(path)?);
    let hdr = read_header(&mut r, path, "P5")?;
    let mut buf = vec![0u8; hdr.width * hdr.height];
    r.read_exact(&mut buf).map_err(|_| RdbmError::Format {
        path: path.display().to_string(),
        reason: "truncated pixel data".into(),
    })?;
    TensorGrid::new(
        vec![hdr.height, hdr.width],
        buf.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

/// Reads binary P6 into a [rows, cols, 3] grid of values in [0, 1].
pub fn read_ppm(path: &Path) -> Result<TensorGrid> {
    let mut r = BufReader::new(File::open(path)?);
    let hdr = read_header(&mut r, path, "P6")?;
    let mut buf = vec![0u8; hdr.width * hdr.height * 3];
    r.read_exact(&mut buf).map_err(|_| RdbmError::Format {
        path: path.display().to_string(),
        reason: "truncated pixel data".into(),
    })?;
    TensorGrid::new(
        vec![hdr.height, hdr.width, 3],
        buf.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}
