//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op applied to its [`Var`]s in creation order,
//! which is already a topological order. [`Graph::backward`] walks the tape in
//! reverse and accumulates vector-Jacobian products.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

pub(crate) struct BackCtx<'a> {
    values: &'a [Tensor],
    requires: &'a [bool],
}

impl BackCtx<'_> {
    pub(crate) fn val(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.requires[v.0]
    }
}

type BackwardFn = Box<dyn Fn(&BackCtx<'_>, &Tensor) -> Vec<(Var, Tensor)>>;

struct Node {
    op: &'static str,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    requires: Vec<bool>,
    nodes: Vec<Node>,
    fault: Option<String>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Negate every gradient contribution flowing out of nodes named `op`.
    /// Used to prove that gradient checking catches a broken backward rule.
    pub fn inject_fault(&mut self, op: impl Into<String>) {
        self.fault = Some(op.into());
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.record("constant", t, false, None)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.record("leaf", t, true, None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn record(
        &mut self,
        op: &'static str,
        value: Tensor,
        requires: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        self.values.push(value);
        self.requires.push(requires);
        self.nodes.push(Node { op, backward });
        Var(self.values.len() - 1)
    }

    /// Record the output of an op. The backward closure is kept only when
    /// some input is differentiable.
    pub(crate) fn push<F>(
        &mut self,
        op: &'static str,
        value: Tensor,
        inputs: &[Var],
        backward: F,
    ) -> Result<Var>
    where
        F: Fn(&BackCtx<'_>, &Tensor) -> Vec<(Var, Tensor)> + 'static,
    {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires = inputs.iter().any(|v| self.requires[v.0]);
        let backward: Option<BackwardFn> = if requires {
            Some(Box::new(backward))
        } else {
            None
        };
        Ok(self.record(op, value, requires, backward))
    }

    /// Gradients of the scalar `loss` with respect to every differentiable node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.values[loss.0].numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.values[loss.0].shape(), 1.0));
        let ctx = BackCtx {
            values: &self.values,
            requires: &self.requires,
        };
        for i in (0..=loss.0).rev() {
            let Some(grad_out) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if let Some(back) = &node.backward {
                let flip = self.fault.as_deref() == Some(node.op);
                for (input, mut g) in back(&ctx, &grad_out) {
                    if !self.requires[input.0] {
                        continue;
                    }
                    if flip {
                        g.data_mut().iter_mut().for_each(|x| *x = -*x);
                    }
                    if !g.is_finite() {
                        return Err(Error::NonFinite { op: node.op });
                    }
                    match &mut grads[input.0] {
                        Some(acc) => acc
                            .data_mut()
                            .iter_mut()
                            .zip(g.data())
                            .for_each(|(a, b)| *a += b),
                        slot => *slot = Some(g),
                    }
                }
            }
            grads[i] = Some(grad_out);
        }
        Ok(Gradients { grads })
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when `v` does not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}
