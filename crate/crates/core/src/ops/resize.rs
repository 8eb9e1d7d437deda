//! Spatial resizing with the half-pixel ("align corners off") convention.
//!
//! Output pixel `o` of an axis resized from `in` to `out` samples the input at
//! `s = (o + 0.5) * in / out - 0.5`. Bilinear clamps `s` into `[0, in - 1]`
//! and blends the two neighbours; nearest picks `floor((o + 0.5) * in / out)`.

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMethod {
    Bilinear,
    Nearest,
}

/// Per output index, the input indices and weights it blends.
type AxisMap = Vec<[(usize, f64); 2]>;

fn axis_map(len_in: usize, len_out: usize, method: ResizeMethod) -> AxisMap {
    let scale = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|o| match method {
            ResizeMethod::Nearest => {
                let i = (((o as f64 + 0.5) * scale).floor() as usize).min(len_in - 1);
                [(i, 1.0), (i, 0.0)]
            }
            ResizeMethod::Bilinear => {
                let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (s.floor() as usize).min(len_in - 1);
                let i1 = (i0 + 1).min(len_in - 1);
                let t = if i0 == i1 { 0.0 } else { s - i0 as f64 };
                [(i0, 1.0 - t), (i1, t)]
            }
        })
        .collect()
}

fn apply(x: &[f64], planes: usize, (h, w): (usize, usize), rows: &AxisMap, cols: &AxisMap) -> Vec<f64> {
    let (ho, wo) = (rows.len(), cols.len());
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for (oy, ry) in rows.iter().enumerate() {
            for (ox, rx) in cols.iter().enumerate() {
                let mut acc = 0.0;
                for &(iy, wy) in ry {
                    for &(ix, wx) in rx {
                        acc += wy * wx * src[iy * w + ix];
                    }
                }
                dst[oy * wo + ox] = acc;
            }
        }
    }
    out
}

fn apply_transpose(
    g: &[f64],
    planes: usize,
    (h, w): (usize, usize),
    rows: &AxisMap,
    cols: &AxisMap,
) -> Vec<f64> {
    let (ho, wo) = (rows.len(), cols.len());
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &g[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for (oy, ry) in rows.iter().enumerate() {
            for (ox, rx) in cols.iter().enumerate() {
                let v = src[oy * wo + ox];
                for &(iy, wy) in ry {
                    for &(ix, wx) in rx {
                        dst[iy * w + ix] += wy * wx * v;
                    }
                }
            }
        }
    }
    out
}

/// Resize a rank-4 tensor outside of any graph.
pub fn resize_tensor(x: &Tensor, target: (usize, usize), method: ResizeMethod) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if target.0 == 0 || target.1 == 0 {
        return shape_err("resize", format!("zero-sized target {target:?}"));
    }
    if (h, w) == target {
        return Ok(x.clone());
    }
    let rows = axis_map(h, target.0, method);
    let cols = axis_map(w, target.1, method);
    Tensor::new(&[n, c, target.0, target.1], apply(x.data(), n * c, (h, w), &rows, &cols))
}

impl Graph {
    pub fn resize(&mut self, x: Var, target: (usize, usize), method: ResizeMethod) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let out = resize_tensor(self.value(x), target, method)?;
        let rows = axis_map(h, target.0, method);
        let cols = axis_map(w, target.1, method);
        self.push("resize", out, &[x], move |_, g| {
            let dx = apply_transpose(g.data(), n * c, (h, w), &rows, &cols);
            vec![(x, Tensor::new(&[n, c, h, w], dx).unwrap())]
        })
    }
}
