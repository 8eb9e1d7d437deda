use std::collections::HashSet;
use std::io::Write;

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::nn::{Adam, Ctx, Mode, ParamId, ParamStore};

use super::losses::{disc_losses, generator_pass, BatchVars, LossParts};
use super::nets::CycleNets;
use super::SegBatch;

#[derive(Clone, Copy, Debug)]
pub struct SegTrainConfig {
    pub steps: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            gen_lr: 2e-3,
            disc_lr: 1e-3,
        }
    }
}

/// Loss values observed at one training step, before that step's updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub parts: LossParts,
}

/// Alternating updates: generators against frozen discriminators, then
/// discriminators against the generated samples of the same step.
///
/// Steps are numbered from 1. `next_batch` is called once per step.
pub fn train_cyclegan_toy<F>(
    nets: &CycleNets,
    store: &mut ParamStore,
    cfg: &SegTrainConfig,
    mut next_batch: F,
) -> Result<Vec<LossRecord>>
where
    F: FnMut(usize) -> Result<SegBatch>,
{
    let gen_ids: HashSet<ParamId> = nets.generator_params().into_iter().collect();
    let disc_ids: HashSet<ParamId> = nets.discriminator_params().into_iter().collect();
    let mut gen_opt = Adam::new(cfg.gen_lr);
    let mut disc_opt = Adam::new(cfg.disc_lr);
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let diverged = |e: Error| match e {
            Error::NonFinite { op } => Error::Diverged {
                step,
                detail: format!("non-finite value in {op}"),
            },
            other => other,
        };
        let batch = next_batch(step)?;
        let mut parts = LossParts::default();

        let (fake_masks, fake_images) = {
            let mut g = Graph::new();
            let b = BatchVars::record(&mut g, &batch);
            let mut ctx = Ctx::new(&mut g, store, Mode::Train);
            let pass = generator_pass(&mut ctx, nets, b).map_err(diverged)?;
            let grads = ctx.graph.backward(pass.objective).map_err(diverged)?;
            let mut gg = ctx.param_grads(&grads);
            gg.retain(|(id, _)| gen_ids.contains(id));
            let val = |v| ctx.graph.value(v).data()[0];
            parts.gen_m = val(pass.gen_m);
            parts.gen_c = val(pass.gen_c);
            parts.cycle_m = val(pass.cycle_m);
            parts.cycle_c = val(pass.cycle_c);
            let fakes = (
                ctx.graph.value(pass.fake_masks).clone(),
                ctx.graph.value(pass.fake_images).clone(),
            );
            drop(ctx);
            gen_opt.step(store, &gg);
            fakes
        };

        {
            let mut g = Graph::new();
            let b = BatchVars::record(&mut g, &batch);
            let fm = g.constant(fake_masks);
            let fi = g.constant(fake_images);
            let mut ctx = Ctx::new(&mut g, store, Mode::Train);
            let (dm, dc) = disc_losses(&mut ctx, nets, b.annotated_masks, fm, b.unannotated, fi)
                .map_err(diverged)?;
            let obj = ctx.graph.add(dm, dc)?;
            let grads = ctx.graph.backward(obj).map_err(diverged)?;
            let mut dg = ctx.param_grads(&grads);
            dg.retain(|(id, _)| disc_ids.contains(id));
            parts.disc_m = ctx.graph.value(dm).data()[0];
            parts.disc_c = ctx.graph.value(dc).data()[0];
            drop(ctx);
            disc_opt.step(store, &dg);
        }

        if !parts.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("{parts:?}"),
            });
        }
        curve.push(LossRecord { step, parts });
    }
    Ok(curve)
}

pub fn write_loss_curve<W: Write>(mut w: W, curve: &[LossRecord]) -> Result<()> {
    writeln!(w, "step,L_gen_M,L_gen_C,L_cycle_M,L_cycle_C,L_disc_M,L_disc_C,L_total")?;
    for r in curve {
        let p = &r.parts;
        writeln!(
            w,
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            r.step,
            p.gen_m,
            p.gen_c,
            p.cycle_m,
            p.cycle_c,
            p.disc_m,
            p.disc_c,
            p.total()
        )?;
    }
    Ok(())
}
