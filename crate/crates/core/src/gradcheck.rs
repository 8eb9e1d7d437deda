//! Central finite-difference verification of reverse-mode gradients.
//!
//! Every coordinate of every input is perturbed by `+-eps` and the slope
//! `(f(x + eps) - f(x - eps)) / 2 eps` is compared against the gradient from
//! [`Graph::backward`]. The per-coordinate error is
//! `|analytic - numeric| / max(|analytic|, |numeric|, floor)` where
//! `floor = 1e-6 * max(1, |f(x)|)` keeps round-off in tiny gradients from
//! dominating.

mod suite;

pub use suite::{run_suite, run_targets, TargetGroup, TargetResult};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Mode, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Op whose backward rule is sign-flipped for the analytic pass.
    pub fault: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coords_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_with(
        f,
        inputs,
        &GradCheckOptions {
            eps,
            tol,
            fault: None,
        },
    )
}

pub fn grad_check_with<F>(mut f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&opts.eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {} outside [1e-7, 1e-4]",
            opts.eps
        )));
    }

    let mut g = Graph::new();
    if let Some(op) = &opts.fault {
        g.inject_fault(op.clone());
    }
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let f0 = scalar_of(&g, out)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();
    drop(g);

    let floor = 1e-6 * f0.abs().max(1.0);
    let mut eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coords_checked: 0,
        tol: opts.tol,
    };
    let mut xs = inputs.to_vec();
    for k in 0..xs.len() {
        for i in 0..xs[k].numel() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + opts.eps;
            let plus = eval(&xs)?;
            xs[k].data_mut()[i] = orig - opts.eps;
            let minus = eval(&xs)?;
            xs[k].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[k].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((k, i));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

/// Check gradients of a module-level computation with respect to `inputs`
/// and every trainable parameter in `store`. The closure receives vars for
/// `inputs` only; parameters are reached through the context as usual.
pub fn grad_check_module<F>(
    store: &ParamStore,
    mode: Mode,
    inputs: &[Tensor],
    mut f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Ctx, &[Var]) -> Result<Var>,
{
    let ids = store.trainable_ids();
    let k = inputs.len();
    let mut all = inputs.to_vec();
    all.extend(ids.iter().map(|&id| store.get(id).clone()));
    grad_check_with(
        |g, vars| {
            let mut local = store.clone();
            let bindings = ids.iter().copied().zip(vars[k..].iter().copied());
            let mut ctx = Ctx::new(g, &mut local, mode).with_bindings(bindings);
            f(&mut ctx, &vars[..k])
        },
        &all,
        opts,
    )
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::InvalidArgument(format!(
            "gradient check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches() {
        let x = Tensor::new(&[5], vec![0.3, -1.2, 2.5, 0.0, 7.0]).unwrap();
        let r = grad_check(
            |g, v| {
                let s = g.square(v[0])?;
                g.sum_all(s)
            },
            &[x],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.coords_checked, 5);
    }

    #[test]
    fn rejects_out_of_range_step() {
        let x = Tensor::scalar(1.0);
        let r = grad_check(|g, v| g.sum_all(v[0]), &[x], 1e-3, 1e-4);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn flipped_backward_rule_is_detected() {
        let x = Tensor::new(&[3], vec![0.5, 1.5, -2.0]).unwrap();
        let opts = GradCheckOptions {
            fault: Some("square".into()),
            ..Default::default()
        };
        let r = grad_check_with(
            |g, v| {
                let s = g.square(v[0])?;
                g.sum_all(s)
            },
            &[x],
            &opts,
        )
        .unwrap();
        assert!(!r.passed());
        assert!((r.max_rel_error - 2.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_surfaces_as_error() {
        let x = Tensor::new(&[1], vec![800.0]).unwrap();
        let r = grad_check(
            |g, v| {
                let e = g.exp(v[0])?;
                g.sum_all(e)
            },
            &[x],
            1e-5,
            1e-4,
        );
        assert!(matches!(r, Err(Error::NonFinite { op: "exp" })));
    }
}
