use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

impl Graph {
    /// `x W^T + b` for `x: [N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, din) = self.value(x).dims2()?;
        let (dout, win) = self.value(w).dims2()?;
        if win != din || self.shape(b) != [dout] {
            return shape_err(
                "linear",
                format!(
                    "x {:?}, weight {:?}, bias {:?}",
                    self.shape(x),
                    self.shape(w),
                    self.shape(b)
                ),
            );
        }
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; n * dout];
        for r in 0..n {
            let xr = &xv[r * din..(r + 1) * din];
            for o in 0..dout {
                let wr = &wv[o * din..(o + 1) * din];
                out[r * dout + o] = bv[o] + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let out = Tensor::new(&[n, dout], out)?;
        self.push("linear", out, &[x, w, b], move |ctx, g| {
            let (xv, wv) = (ctx.val(x).data(), ctx.val(w).data());
            let gv = g.data();
            let mut res = Vec::with_capacity(3);
            if ctx.needs(x) {
                let mut dx = vec![0.0; n * din];
                for r in 0..n {
                    for o in 0..dout {
                        let go = gv[r * dout + o];
                        for (d, &wi) in dx[r * din..(r + 1) * din]
                            .iter_mut()
                            .zip(&wv[o * din..(o + 1) * din])
                        {
                            *d += go * wi;
                        }
                    }
                }
                res.push((x, Tensor::new(&[n, din], dx).unwrap()));
            }
            if ctx.needs(w) {
                let mut dw = vec![0.0; dout * din];
                for r in 0..n {
                    for o in 0..dout {
                        let go = gv[r * dout + o];
                        for (d, &xi) in dw[o * din..(o + 1) * din]
                            .iter_mut()
                            .zip(&xv[r * din..(r + 1) * din])
                        {
                            *d += go * xi;
                        }
                    }
                }
                res.push((w, Tensor::new(&[dout, din], dw).unwrap()));
            }
            if ctx.needs(b) {
                let mut db = vec![0.0; dout];
                for r in 0..n {
                    for o in 0..dout {
                        db[o] += gv[r * dout + o];
                    }
                }
                res.push((b, Tensor::new(&[dout], db).unwrap()));
            }
            res
        })
    }

    /// Pointwise channel mixing: `y[n,o,i,j] = sum_c W[o,c] x[n,c,i,j] + b[o]`.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (co, wc) = self.value(w).dims2()?;
        if wc != c || self.shape(b) != [co] {
            return shape_err(
                "conv1x1",
                format!(
                    "x {:?}, weight {:?}, bias {:?}",
                    self.shape(x),
                    self.shape(w),
                    self.shape(b)
                ),
            );
        }
        let hw = h * wd;
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; n * co * hw];
        for ni in 0..n {
            for o in 0..co {
                let dst = &mut out[(ni * co + o) * hw..(ni * co + o + 1) * hw];
                dst.iter_mut().for_each(|v| *v = bv[o]);
                for ci in 0..c {
                    let k = wv[o * c + ci];
                    let src = &xv[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += k * s;
                    }
                }
            }
        }
        let out = Tensor::new(&[n, co, h, wd], out)?;
        self.push("conv1x1", out, &[x, w, b], move |ctx, g| {
            let (xv, wv) = (ctx.val(x).data(), ctx.val(w).data());
            let gv = g.data();
            let mut res = Vec::with_capacity(3);
            if ctx.needs(x) {
                let mut dx = vec![0.0; n * c * hw];
                for ni in 0..n {
                    for o in 0..co {
                        let go = &gv[(ni * co + o) * hw..(ni * co + o + 1) * hw];
                        for ci in 0..c {
                            let k = wv[o * c + ci];
                            let d = &mut dx[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                            for (dd, &gg) in d.iter_mut().zip(go) {
                                *dd += k * gg;
                            }
                        }
                    }
                }
                res.push((x, Tensor::new(&[n, c, h, wd], dx).unwrap()));
            }
            if ctx.needs(w) {
                let mut dw = vec![0.0; co * c];
                for ni in 0..n {
                    for o in 0..co {
                        let go = &gv[(ni * co + o) * hw..(ni * co + o + 1) * hw];
                        for ci in 0..c {
                            let src = &xv[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                            dw[o * c + ci] += go.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                res.push((w, Tensor::new(&[co, c], dw).unwrap()));
            }
            if ctx.needs(b) {
                let mut db = vec![0.0; co];
                for ni in 0..n {
                    for (o, d) in db.iter_mut().enumerate() {
                        *d += gv[(ni * co + o) * hw..(ni * co + o + 1) * hw].iter().sum::<f64>();
                    }
                }
                res.push((b, Tensor::new(&[co], db).unwrap()));
            }
            res
        })
    }

    /// 3x3 convolution with zero padding 1. `W: [C_out, C_in, 3, 3]`, `b: [C_out]`.
    /// The output extent along each spatial axis is `(L - 1) / stride + 1`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (n, ci, h, wd) = self.value(x).dims4()?;
        let (co, wci, kh, kw) = self.value(w).dims4()?;
        if wci != ci || kh != 3 || kw != 3 || self.shape(b) != [co] || stride == 0 {
            return shape_err(
                "conv3x3",
                format!(
                    "x {:?}, weight {:?}, bias {:?}, stride {stride}",
                    self.shape(x),
                    self.shape(w),
                    self.shape(b)
                ),
            );
        }
        let geom = ConvGeom {
            n,
            ci,
            co,
            h,
            w: wd,
            ho: (h - 1) / stride + 1,
            wo: (wd - 1) / stride + 1,
            stride,
        };
        let out = geom.forward(self.value(x).data(), self.value(w).data(), self.value(b).data());
        let out = Tensor::new(&[n, co, geom.ho, geom.wo], out)?;
        self.push("conv3x3", out, &[x, w, b], move |ctx, g| {
            let (xv, wv) = (ctx.val(x).data(), ctx.val(w).data());
            let mut res = Vec::with_capacity(3);
            if ctx.needs(x) {
                let dx = geom.grad_input(wv, g.data());
                res.push((x, Tensor::new(&[n, ci, h, wd], dx).unwrap()));
            }
            if ctx.needs(w) {
                let dw = geom.grad_weight(xv, g.data());
                res.push((w, Tensor::new(&[co, ci, 3, 3], dw).unwrap()));
            }
            if ctx.needs(b) {
                let plane = geom.ho * geom.wo;
                let mut db = vec![0.0; co];
                for (k, chunk) in g.data().chunks(plane).enumerate() {
                    db[k % co] += chunk.iter().sum::<f64>();
                }
                res.push((b, Tensor::new(&[co], db).unwrap()));
            }
            res
        })
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    stride: usize,
}

impl ConvGeom {
    /// Output columns `ox` whose tap `kx` lands inside the input, as a range.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        // ix = ox * stride + kx - 1 must lie in [0, w)
        let lo = if kx == 0 { 1usize.div_ceil(self.stride) } else { 0 };
        let hi = ((self.w + 1 - kx) + self.stride - 1) / self.stride;
        (lo, hi.min(self.wo))
    }

    fn tap_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(1)?;
        (iy < self.h).then_some(iy)
    }

    fn forward(&self, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let (hw, ohw) = (self.h * self.w, self.ho * self.wo);
        let mut out = vec![0.0; self.n * self.co * ohw];
        for ni in 0..self.n {
            for o in 0..self.co {
                let dst = &mut out[(ni * self.co + o) * ohw..(ni * self.co + o + 1) * ohw];
                dst.iter_mut().for_each(|v| *v = b[o]);
                for c in 0..self.ci {
                    let src = &x[(ni * self.ci + c) * hw..(ni * self.ci + c + 1) * hw];
                    let kern = &w[(o * self.ci + c) * 9..(o * self.ci + c + 1) * 9];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let k = kern[ky * 3 + kx];
                            let (lo, hi) = self.valid_cols(kx);
                            for oy in 0..self.ho {
                                let Some(iy) = self.tap_row(oy, ky) else { continue };
                                let row = &src[iy * self.w..(iy + 1) * self.w];
                                let drow = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                                for ox in lo..hi {
                                    drow[ox] += k * row[ox * self.stride + kx - 1];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn grad_input(&self, w: &[f64], g: &[f64]) -> Vec<f64> {
        let (hw, ohw) = (self.h * self.w, self.ho * self.wo);
        let mut dx = vec![0.0; self.n * self.ci * hw];
        for ni in 0..self.n {
            for o in 0..self.co {
                let go = &g[(ni * self.co + o) * ohw..(ni * self.co + o + 1) * ohw];
                for c in 0..self.ci {
                    let d = &mut dx[(ni * self.ci + c) * hw..(ni * self.ci + c + 1) * hw];
                    let kern = &w[(o * self.ci + c) * 9..(o * self.ci + c + 1) * 9];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let k = kern[ky * 3 + kx];
                            let (lo, hi) = self.valid_cols(kx);
                            for oy in 0..self.ho {
                                let Some(iy) = self.tap_row(oy, ky) else { continue };
                                let grow = &go[oy * self.wo..(oy + 1) * self.wo];
                                let drow = &mut d[iy * self.w..(iy + 1) * self.w];
                                for ox in lo..hi {
                                    drow[ox * self.stride + kx - 1] += k * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn grad_weight(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let (hw, ohw) = (self.h * self.w, self.ho * self.wo);
        let mut dw = vec![0.0; self.co * self.ci * 9];
        for ni in 0..self.n {
            for o in 0..self.co {
                let go = &g[(ni * self.co + o) * ohw..(ni * self.co + o + 1) * ohw];
                for c in 0..self.ci {
                    let src = &x[(ni * self.ci + c) * hw..(ni * self.ci + c + 1) * hw];
                    let dk = &mut dw[(o * self.ci + c) * 9..(o * self.ci + c + 1) * 9];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (lo, hi) = self.valid_cols(kx);
                            let mut acc = 0.0;
                            for oy in 0..self.ho {
                                let Some(iy) = self.tap_row(oy, ky) else { continue };
                                let row = &src[iy * self.w..(iy + 1) * self.w];
                                let grow = &go[oy * self.wo..(oy + 1) * self.wo];
                                for ox in lo..hi {
                                    acc += grow[ox] * row[ox * self.stride + kx - 1];
                                }
                            }
                            dk[ky * 3 + kx] += acc;
                        }
                    }
                }
            }
        }
        dw
    }
}
