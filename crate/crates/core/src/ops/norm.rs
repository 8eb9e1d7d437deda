use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Per-channel batch statistics from a train-mode normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (`1/N`) variance.
    pub var: Vec<f64>,
}

impl Graph {
    fn norm_layout(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, Vec<usize>, Vec<usize>)> {
        let shape = self.shape(x);
        if shape.len() != 2 && shape.len() != 4 {
            return shape_err("batch_norm", format!("expected rank 2 or 4, got {shape:?}"));
        }
        let c = shape[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return shape_err(
                "batch_norm",
                format!(
                    "{c} channels but gamma {:?}, beta {:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            );
        }
        let mut bshape = vec![1; shape.len()];
        bshape[1] = c;
        let axes: Vec<usize> = (0..shape.len()).filter(|&a| a != 1).collect();
        Ok((c, bshape, axes))
    }

    /// Normalize with batch statistics over every axis except the channel
    /// axis (axis 1), then apply the per-channel affine map.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let (c, bshape, axes) = self.norm_layout(x, gamma, beta)?;
        let count = self.value(x).numel() / c.max(1);
        if count < 2 {
            return shape_err(
                "batch_norm",
                format!("train mode needs at least 2 values per channel, got {count}"),
            );
        }
        let mean = self.mean_axes(x, &axes)?;
        let centered = self.sub(x, mean)?;
        let sq = self.square(centered)?;
        let var = self.mean_axes(sq, &axes)?;
        let var_eps = self.add_scalar(var, eps)?;
        let std = self.sqrt(var_eps)?;
        let normed = self.div(centered, std)?;
        let y = self.affine(normed, gamma, beta, &bshape)?;
        let stats = BatchStats {
            mean: self.value(mean).data().to_vec(),
            var: self.value(var).data().to_vec(),
        };
        Ok((y, stats))
    }

    /// Normalize with fixed statistics; only `gamma` and `beta` (and `x`)
    /// receive gradients.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (c, bshape, _) = self.norm_layout(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return shape_err("batch_norm", "running statistics length mismatch");
        }
        let shift = self.constant(Tensor::new(&bshape, mean.to_vec())?);
        let inv_std = self.constant(Tensor::new(
            &bshape,
            var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect(),
        )?);
        let centered = self.sub(x, shift)?;
        let normed = self.mul(centered, inv_std)?;
        self.affine(normed, gamma, beta, &bshape)
    }

    fn affine(&mut self, x: Var, gamma: Var, beta: Var, bshape: &[usize]) -> Result<Var> {
        let g = self.reshape(gamma, bshape)?;
        let b = self.reshape(beta, bshape)?;
        let scaled = self.mul(x, g)?;
        self.add(scaled, b)
    }
}
