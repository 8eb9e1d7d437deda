use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

impl Graph {
    /// Two-way softmax taken independently per element:
    /// `(e^a / (e^a + e^b), e^b / (e^a + e^b))`.
    ///
    /// Evaluated as `(sigmoid(a - b), sigmoid(b - a))`, which is the
    /// max-subtracted form and cannot overflow.
    pub fn softmax_pair(&mut self, a: Var, b: Var) -> Result<(Var, Var)> {
        if self.shape(a) != self.shape(b) {
            return shape_err(
                "softmax_pair",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            );
        }
        let d = self.sub(a, b)?;
        let first = self.sigmoid(d)?;
        let nd = self.sub(b, a)?;
        let second = self.sigmoid(nd)?;
        Ok((first, second))
    }

    /// Softmax over the channel axis of an `N x K x H x W` tensor.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let (n, k, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let out = softmax_channels_tensor(self.value(x))?;
        let y = out.clone();
        self.push("softmax_channels", out, &[x], move |_, g| {
            let (yv, gv) = (y.data(), g.data());
            let mut dx = vec![0.0; n * k * hw];
            for ni in 0..n {
                for p in 0..hw {
                    let at = |c: usize| (ni * k + c) * hw + p;
                    let dot: f64 = (0..k).map(|c| yv[at(c)] * gv[at(c)]).sum();
                    for c in 0..k {
                        dx[at(c)] = yv[at(c)] * (gv[at(c)] - dot);
                    }
                }
            }
            vec![(x, Tensor::new(&[n, k, h, w], dx).unwrap())]
        })
    }

    /// Spatial mean, `N x C x H x W -> N x C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, _, _) = self.value(x).dims4()?;
        let m = self.mean_axes(x, &[2, 3])?;
        self.reshape(m, &[n, c])
    }

    /// Spatial maximum, `N x C x H x W -> N x C`. Ties route the gradient to
    /// the first maximal position.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let mut arg = Vec::with_capacity(n * c);
        let mut out = Vec::with_capacity(n * c);
        for plane in self.value(x).data().chunks(hw) {
            let (i, v) = plane
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                });
            arg.push(i);
            out.push(v);
        }
        let out = Tensor::new(&[n, c], out)?;
        self.push("global_max_pool", out, &[x], move |_, g| {
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            for (k, (&i, &gv)) in arg.iter().zip(g.data()).enumerate() {
                dx.data_mut()[k * hw + i] = gv;
            }
            vec![(x, dx)]
        })
    }

    /// Generalized-mean pooling `(mean(max(x, floor)^p))^(1/p)` with a
    /// learnable scalar exponent `p` of shape `[1]`.
    pub fn gem_pool(&mut self, x: Var, p: Var, floor: f64) -> Result<Var> {
        let (n, c, _, _) = self.value(x).dims4()?;
        if self.shape(p) != [1] {
            return shape_err("gem_pool", format!("exponent shape {:?}", self.shape(p)));
        }
        let xc = self.clamp(x, floor, f64::INFINITY)?;
        let lx = self.ln_clamped(xc, floor)?;
        let p4 = self.reshape(p, &[1, 1, 1, 1])?;
        let plx = self.mul(lx, p4)?;
        let e = self.exp(plx)?;
        let m = self.mean_axes(e, &[2, 3])?;
        let lm = self.ln_clamped(m, f64::MIN_POSITIVE)?;
        let r = self.div(lm, p4)?;
        let y = self.exp(r)?;
        self.reshape(y, &[n, c])
    }
}

/// Channel-axis softmax of a rank-4 tensor, max-subtracted per pixel.
pub fn softmax_channels_tensor(x: &Tensor) -> Result<Tensor> {
    let (n, k, h, w) = x.dims4()?;
    let hw = h * w;
    let xv = x.data();
    let mut out = vec![0.0; n * k * hw];
    for ni in 0..n {
        for p in 0..hw {
            let at = |c: usize| (ni * k + c) * hw + p;
            let m = (0..k).map(|c| xv[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (0..k).map(|c| (xv[at(c)] - m).exp()).sum();
            for c in 0..k {
                out[at(c)] = (xv[at(c)] - m).exp() / s;
            }
        }
    }
    Tensor::new(&[n, k, h, w], out)
}
