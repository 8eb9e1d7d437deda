use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{broadcast_to, sum_to_shape, Tensor};

impl Graph {
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let src = self.shape(a).to_vec();
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum_all", out, &[a], move |_, g| {
            vec![(a, Tensor::full(&src, g.data()[0]))]
        })
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Sum over `axes`, keeping them as 1-extents so the result broadcasts
    /// back against the input.
    pub fn sum_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let src = self.shape(a).to_vec();
        if let Some(&bad) = axes.iter().find(|&&ax| ax >= src.len()) {
            return shape_err("sum_axes", format!("axis {bad} out of rank {}", src.len()));
        }
        let mut dst = src.clone();
        for &ax in axes {
            dst[ax] = 1;
        }
        let out = sum_to_shape(self.value(a), &dst);
        self.push("sum_axes", out, &[a], move |_, g| vec![(a, broadcast_to(g, &src))])
    }

    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let count: usize = axes.iter().map(|&ax| shape.get(ax).copied().unwrap_or(1)).product();
        let s = self.sum_axes(a, axes)?;
        self.scale(s, 1.0 / count as f64)
    }
}
