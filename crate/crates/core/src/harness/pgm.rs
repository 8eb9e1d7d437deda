use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Write the last two axes of a single-plane tensor as an 8-bit binary PGM.
/// Values are clamped to `[0, 1]` and scaled to `0..=255`.
pub fn write_pgm(path: &Path, t: &Tensor) -> Result<()> {
    let (h, w) = plane_dims(t)?;
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = t
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

/// Like [`write_pgm`] after min-max scaling to `[0, 1]`.
pub fn write_pgm_normalized(path: &Path, t: &Tensor) -> Result<()> {
    let lo = t.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let scaled = if span > 0.0 {
        t.map(|v| (v - lo) / span)
    } else {
        t.map(|_| 0.0)
    };
    write_pgm(path, &scaled)
}

fn plane_dims(t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::InvalidArgument(format!(
            "PGM needs a single plane, got shape {s:?}"
        )));
    }
    Ok((s[s.len() - 2], s[s.len() - 1]))
}
