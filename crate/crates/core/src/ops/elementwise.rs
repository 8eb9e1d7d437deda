use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{broadcast_indices, broadcast_shape, sum_to_shape, Tensor};

impl Graph {
    fn binary<F, DA, DB>(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: F,
        da: DA,
        db: DB,
    ) -> Result<Var>
    where
        F: Fn(f64, f64) -> f64,
        DA: Fn(f64, f64) -> f64 + 'static,
        DB: Fn(f64, f64) -> f64 + 'static,
    {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(op, &sa, &sb)?;
        let ia = (sa != out_shape).then(|| broadcast_indices(&sa, &out_shape));
        let ib = (sb != out_shape).then(|| broadcast_indices(&sb, &out_shape));
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let numel: usize = out_shape.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|i| {
                let x = va[ia.as_ref().map_or(i, |v| v[i])];
                let y = vb[ib.as_ref().map_or(i, |v| v[i])];
                f(x, y)
            })
            .collect();
        let out = Tensor::new(&out_shape, data)?;
        self.push(op, out, &[a, b], move |ctx, g| {
            let (va, vb) = (ctx.val(a).data(), ctx.val(b).data());
            let pair = |i: usize| {
                (
                    va[ia.as_ref().map_or(i, |v| v[i])],
                    vb[ib.as_ref().map_or(i, |v| v[i])],
                )
            };
            let mut res = Vec::with_capacity(2);
            if ctx.needs(a) {
                let full = Tensor::from_fn(g.shape(), |i| {
                    let (x, y) = pair(i);
                    g.data()[i] * da(x, y)
                });
                res.push((a, sum_to_shape(&full, &sa)));
            }
            if ctx.needs(b) {
                let full = Tensor::from_fn(g.shape(), |i| {
                    let (x, y) = pair(i);
                    g.data()[i] * db(x, y)
                });
                res.push((b, sum_to_shape(&full, &sb)));
            }
            res
        })
    }

    /// Elementwise map whose derivative may use both the input `x` and output `y`.
    fn unary<F, D>(&mut self, op: &'static str, a: Var, f: F, df: D) -> Result<Var>
    where
        F: Fn(f64) -> f64,
        D: Fn(f64, f64) -> f64 + 'static,
    {
        let out = self.value(a).map(f);
        let out_for_back = out.clone();
        self.push(op, out, &[a], move |ctx, g| {
            let x = ctx.val(a).data();
            let y = out_for_back.data();
            let grad = Tensor::from_fn(g.shape(), |i| g.data()[i] * df(x[i], y[i]));
            vec![(a, grad)]
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            "div",
            a,
            b,
            |x, y| x / y,
            |_, y| 1.0 / y,
            |x, y| -x / (y * y),
        )
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary("neg", a, |x| -x, |_, _| -1.0)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary("scale", a, move |x| k * x, move |_, _| k)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary("add_scalar", a, move |x| x + k, |_, _| 1.0)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary("sqrt", a, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, |_, y| y)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.unary(
            "ln_clamped",
            a,
            move |x| x.max(floor).ln(),
            move |x, _| if x > floor { 1.0 / x } else { 0.0 },
        )
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, f64::abs, |x, _| x.signum() * (x != 0.0) as u8 as f64)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(
            "relu",
            a,
            |x| x.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(
            "clamp",
            a,
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(a).to_vec();
        let out = self.value(a).reshape(shape)?;
        self.push("reshape", out, &[a], move |_, g| {
            vec![(a, g.reshape(&src).expect("reshape preserves numel"))]
        })
    }

    /// Concatenate rank-2 tensors along their second axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_cols", "no inputs");
        };
        let rows = self.value(first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return shape_err("concat_cols", format!("row count {r} vs {rows}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p).data();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&v[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let out = Tensor::new(&[rows, total], data)?;
        let parts = parts.to_vec();
        self.push("concat_cols", out, &parts.clone(), move |_, g| {
            let mut res = Vec::with_capacity(parts.len());
            let mut offset = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                let mut d = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                }
                res.push((p, Tensor::new(&[rows, w], d).unwrap()));
                offset += w;
            }
            res
        })
    }

    /// A single element of `a` as a shape-`[1]` value.
    pub fn pick(&mut self, a: Var, flat_index: usize) -> Result<Var> {
        let src = self.shape(a).to_vec();
        let Some(&v) = self.value(a).data().get(flat_index) else {
            return shape_err("pick", format!("index {flat_index} out of {src:?}"));
        };
        self.push("pick", Tensor::scalar(v), &[a], move |_, g| {
            let mut t = Tensor::zeros(&src);
            t.data_mut()[flat_index] = g.data()[0];
            vec![(a, t)]
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
