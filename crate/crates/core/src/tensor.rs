//! Dense fp64 tensors and their on-disk binary format.
//!
//! Feature maps use `N x C x H x W` layout. The binary format is a 16-byte
//! header followed by the row-major data as little-endian `f64`:
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..4   | magic `AXT1`                              |
//! | 4..6   | rank as `u16` (0..=4)                     |
//! | 6..8   | reserved, zero                            |
//! | 8..16  | four `u16` extents, unused slots are zero |

use std::fmt;
use std::io::{Read, Write};

use crate::error::{shape_err, Error, Result};

pub const MAGIC: [u8; 4] = *b"AXT1";
pub const HEADER_LEN: usize = 16;
pub const MAX_RANK: usize = 4;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return shape_err("tensor", format!("rank {} exceeds {MAX_RANK}", shape.len()));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            );
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Extents of a rank-4 tensor as `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => shape_err("dims4", format!("expected rank 4, got {:?}", self.shape)),
        }
    }

    /// Extents of a rank-2 tensor as `(rows, cols)`.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => shape_err("dims2", format!("expected rank 2, got {:?}", self.shape)),
        }
    }

    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        let s = &self.shape;
        self.data[((n * s[1] + c) * s[2] + h) * s[3] + w]
    }

    pub fn set4(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let s = &self.shape;
        let i = ((n * s[1] + c) * s[2] + h) * s[3] + w;
        self.data[i] = v;
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise combination of two tensors of identical shape.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(
                "zip_map",
                format!("{:?} vs {:?}", self.shape, other.shape),
            );
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Slice `[start, start + len)` along the batch axis.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Result<Self> {
        let n = *self.shape.first().unwrap_or(&0);
        if start + len > n {
            return shape_err("narrow_batch", format!("{start}+{len} > {n}"));
        }
        let stride: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self {
            shape,
            data: self.data[start * stride..(start + len) * stride].to_vec(),
        })
    }

    /// Gather batch entries by index.
    pub fn select_batch(&self, idx: &[usize]) -> Result<Self> {
        let n = *self.shape.first().unwrap_or(&0);
        let stride: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * stride);
        for &i in idx {
            if i >= n {
                return shape_err("select_batch", format!("index {i} out of {n}"));
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Ok(Self { shape, data })
    }

    /// Concatenate along the batch axis.
    pub fn stack_batch(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack_batch of nothing".into()))?;
        let tail = &first.shape[1..];
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if &p.shape[1..] != tail {
                return shape_err("stack_batch", format!("{:?} vs {:?}", p.shape, first.shape));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Ok(Self { shape, data })
    }

    /// Spatial window `[top, top + h) x [left, left + w)` of a rank-4 tensor.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let (n, c, hh, ww) = self.dims4()?;
        if top + h > hh || left + w > ww {
            return shape_err("crop", format!("window exceeds {hh}x{ww}"));
        }
        let mut out = Vec::with_capacity(n * c * h * w);
        for plane in self.data.chunks(hh * ww) {
            for i in top..top + h {
                out.extend_from_slice(&plane[i * ww + left..i * ww + left + w]);
            }
        }
        Self::new(&[n, c, h, w], out)
    }

    /// Mirror a rank-4 tensor along its width axis.
    pub fn flip_horizontal(&self) -> Result<Self> {
        let (_, _, _, w) = self.dims4()?;
        let mut out = self.clone();
        for row in out.data.chunks_mut(w) {
            row.reverse();
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * self.data.len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header = [0u8; HEADER_LEN];
        header[..4].copy_from_slice(&MAGIC);
        header[4..6].copy_from_slice(&(self.rank() as u16).to_le_bytes());
        for (i, &e) in self.shape.iter().enumerate() {
            let e = u16::try_from(e)
                .map_err(|_| Error::Format(format!("extent {e} does not fit in u16")))?;
            header[8 + 2 * i..10 + 2 * i].copy_from_slice(&e.to_le_bytes());
        }
        w.write_all(&header)?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)?;
        if header[..4] != MAGIC {
            return Err(Error::Format("bad tensor magic".into()));
        }
        let rank = u16::from_le_bytes([header[4], header[5]]) as usize;
        if rank > MAX_RANK {
            return Err(Error::Format(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let shape: Vec<usize> = (0..rank)
            .map(|i| u16::from_le_bytes([header[8 + 2 * i], header[9 + 2 * i]]) as usize)
            .collect();
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(&shape, data)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }
}

/// Result shape of broadcasting two equal-rank shapes where 1-extents stretch.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return shape_err(op, format!("rank mismatch {a:?} vs {b:?}"));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => shape_err(op, format!("cannot broadcast {a:?} with {b:?}")),
        })
        .collect()
}

/// For every element of `out_shape`, the linear index of the element of
/// `in_shape` it reads from under broadcasting.
pub(crate) fn broadcast_indices(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        strides[d] = if in_shape[d] == 1 { 0 } else { acc };
        acc *= in_shape[d];
    }
    let numel: usize = out_shape.iter().product();
    let mut idx = Vec::with_capacity(numel);
    let mut counter = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..numel {
        idx.push(cur);
        for d in (0..rank).rev() {
            counter[d] += 1;
            cur += strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            cur -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

/// Sum `t` down to `shape`, undoing a broadcast.
pub(crate) fn sum_to_shape(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    let idx = broadcast_indices(shape, t.shape());
    let mut out = Tensor::zeros(shape);
    for (&i, &v) in idx.iter().zip(t.data()) {
        out.data[i] += v;
    }
    out
}

/// Materialize a broadcast of `t` to `shape`.
pub(crate) fn broadcast_to(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    let idx = broadcast_indices(t.shape(), shape);
    Tensor {
        shape: shape.to_vec(),
        data: idx.iter().map(|&i| t.data[i]).collect(),
    }
}
