use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::nn::Ctx;

use super::nets::SegModels;
use super::SegBatch;

/// Floor applied to probabilities before every logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// `-sum(target * ln(max(probs, clamp))) / N`, summed over pixels and classes.
pub fn pixel_ce(g: &mut Graph, target: Var, probs: Var, clamp: f64) -> Result<Var> {
    if g.shape(target) != g.shape(probs) {
        return shape_err(
            "pixel_ce",
            format!("target {:?}, probs {:?}", g.shape(target), g.shape(probs)),
        );
    }
    let n = g.shape(target)[0].max(1);
    let logp = g.ln_clamped(probs, clamp)?;
    let prod = g.mul(target, logp)?;
    let s = g.sum_all(prod)?;
    g.scale(s, -1.0 / n as f64)
}

/// Per-sample reduction `sum(|x - y|^q) / N` with `q` in {1, 2}.
fn batch_mean_error(g: &mut Graph, x: Var, y: Var, squared: bool) -> Result<Var> {
    let n = g.shape(x)[0].max(1);
    let d = g.sub(x, y)?;
    let e = if squared { g.square(d)? } else { g.abs(d)? };
    let s = g.sum_all(e)?;
    g.scale(s, 1.0 / n as f64)
}

/// `mean((d - target)^2)` over discriminator outputs.
fn lsgan_term(g: &mut Graph, d: Var, target: f64) -> Result<Var> {
    let shifted = g.add_scalar(d, -target)?;
    let sq = g.square(shifted)?;
    g.mean_all(sq)
}

/// Batch tensors recorded as constants on the tape.
#[derive(Clone, Copy, Debug)]
pub struct BatchVars {
    pub annotated_images: Var,
    pub annotated_masks: Var,
    pub unannotated: Var,
}

impl BatchVars {
    pub fn record(g: &mut Graph, batch: &SegBatch) -> Self {
        Self {
            annotated_images: g.constant(batch.annotated_images().clone()),
            annotated_masks: g.constant(batch.annotated_masks().clone()),
            unannotated: g.constant(batch.unannotated().clone()),
        }
    }
}

/// `(L_gen_M, L_gen_C)`: supervised mask cross-entropy and summed squared
/// image reconstruction error, both averaged over the batch.
pub fn gen_losses<M: SegModels + ?Sized>(ctx: &mut Ctx, nets: &M, b: BatchVars) -> Result<(Var, Var)> {
    let pred_mask = nets.image_to_mask(ctx, b.annotated_images)?;
    let gen_m = pixel_ce(ctx.graph, b.annotated_masks, pred_mask, LOG_CLAMP)?;
    let pred_image = nets.mask_to_image(ctx, b.annotated_masks)?;
    let gen_c = batch_mean_error(ctx.graph, pred_image, b.annotated_images, true)?;
    Ok((gen_m, gen_c))
}

/// `(L_disc_M, L_disc_C)` given real and generated samples.
pub fn disc_losses<M: SegModels + ?Sized>(
    ctx: &mut Ctx,
    nets: &M,
    real_masks: Var,
    fake_masks: Var,
    real_images: Var,
    fake_images: Var,
) -> Result<(Var, Var)> {
    let pair = |ctx: &mut Ctx, real: Var, fake: Var, judge: &dyn Fn(&mut Ctx, Var) -> Result<Var>| {
        let dr = judge(ctx, real)?;
        let df = judge(ctx, fake)?;
        let a = lsgan_term(ctx.graph, dr, 1.0)?;
        let b = lsgan_term(ctx.graph, df, 0.0)?;
        ctx.graph.add(a, b)
    };
    let disc_m = pair(ctx, real_masks, fake_masks, &|c, x| nets.judge_mask(c, x))?;
    let disc_c = pair(ctx, real_images, fake_images, &|c, x| nets.judge_image(c, x))?;
    Ok((disc_m, disc_c))
}

/// `(L_disc_M, L_disc_C)`: annotated masks and unannotated images are real,
/// `G_CM(unannotated)` and `G_MC(annotated masks)` are fake.
pub fn adv_losses<M: SegModels + ?Sized>(ctx: &mut Ctx, nets: &M, b: BatchVars) -> Result<(Var, Var)> {
    let fake_masks = nets.image_to_mask(ctx, b.unannotated)?;
    let fake_images = nets.mask_to_image(ctx, b.annotated_masks)?;
    disc_losses(ctx, nets, b.annotated_masks, fake_masks, b.unannotated, fake_images)
}

/// `(L_cycle_C, L_cycle_M)`: L1 image cycle on unannotated images and
/// cross-entropy mask cycle on annotated masks.
pub fn cycle_losses<M: SegModels + ?Sized>(ctx: &mut Ctx, nets: &M, b: BatchVars) -> Result<(Var, Var)> {
    let fake_masks = nets.image_to_mask(ctx, b.unannotated)?;
    let fake_images = nets.mask_to_image(ctx, b.annotated_masks)?;
    cycles_from(ctx, nets, b, fake_masks, fake_images)
}

fn cycles_from<M: SegModels + ?Sized>(
    ctx: &mut Ctx,
    nets: &M,
    b: BatchVars,
    fake_masks: Var,
    fake_images: Var,
) -> Result<(Var, Var)> {
    let back_images = nets.mask_to_image(ctx, fake_masks)?;
    let cycle_c = batch_mean_error(ctx.graph, back_images, b.unannotated, false)?;
    let back_masks = nets.image_to_mask(ctx, fake_images)?;
    let cycle_m = pixel_ce(ctx.graph, b.annotated_masks, back_masks, LOG_CLAMP)?;
    Ok((cycle_c, cycle_m))
}

/// Everything the generator update needs from one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorPass {
    pub gen_m: Var,
    pub gen_c: Var,
    pub cycle_m: Var,
    pub cycle_c: Var,
    /// `(D_M(fake masks) - 1)^2 + (D_C(fake images) - 1)^2`, batch means.
    pub adversarial: Var,
    pub objective: Var,
    pub fake_masks: Var,
    pub fake_images: Var,
}

pub fn generator_pass<M: SegModels + ?Sized>(ctx: &mut Ctx, nets: &M, b: BatchVars) -> Result<GeneratorPass> {
    let (gen_m, gen_c) = gen_losses(ctx, nets, b)?;
    let fake_masks = nets.image_to_mask(ctx, b.unannotated)?;
    let fake_images = nets.mask_to_image(ctx, b.annotated_masks)?;
    let (cycle_c, cycle_m) = cycles_from(ctx, nets, b, fake_masks, fake_images)?;

    let dm = nets.judge_mask(ctx, fake_masks)?;
    let dc = nets.judge_image(ctx, fake_images)?;
    let am = lsgan_term(ctx.graph, dm, 1.0)?;
    let ac = lsgan_term(ctx.graph, dc, 1.0)?;
    let adversarial = ctx.graph.add(am, ac)?;

    let mut objective = adversarial;
    for v in [gen_m, gen_c, cycle_m, cycle_c] {
        objective = ctx.graph.add(objective, v)?;
    }
    Ok(GeneratorPass {
        gen_m,
        gen_c,
        cycle_m,
        cycle_c,
        adversarial,
        objective,
        fake_masks,
        fake_images,
    })
}

/// Scalar values of the six loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub gen_m: f64,
    pub gen_c: f64,
    pub cycle_m: f64,
    pub cycle_c: f64,
    pub disc_m: f64,
    pub disc_c: f64,
}

impl LossParts {
    /// Generator and cycle terms minus discriminator terms.
    pub fn total(&self) -> f64 {
        total_loss(self)
    }

    pub fn is_finite(&self) -> bool {
        [self.gen_m, self.gen_c, self.cycle_m, self.cycle_c, self.disc_m, self.disc_c]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn total_loss(p: &LossParts) -> f64 {
    p.gen_m + p.gen_c + p.cycle_m + p.cycle_c - p.disc_m - p.disc_c
}
