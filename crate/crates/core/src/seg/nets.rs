use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::error::Result;
use crate::nn::{Conv3x3, Ctx, ParamId, ParamStore};

/// The four networks of the image <-> mask cycle.
pub trait SegModels {
    /// `N x 1 x H x W` image to `N x K x H x W` class probabilities.
    fn image_to_mask(&self, ctx: &mut Ctx, image: Var) -> Result<Var>;
    /// `N x K x H x W` mask to `N x 1 x H x W` image.
    fn mask_to_image(&self, ctx: &mut Ctx, mask: Var) -> Result<Var>;
    /// `N x K x H x W` mask to `N x 1` realness in `(0, 1)`.
    fn judge_mask(&self, ctx: &mut Ctx, mask: Var) -> Result<Var>;
    /// `N x 1 x H x W` image to `N x 1` realness in `(0, 1)`.
    fn judge_image(&self, ctx: &mut Ctx, image: Var) -> Result<Var>;
}

/// Stride-1 3x3 convolutions with ReLU between layers and none after the last.
#[derive(Clone, Debug)]
pub struct ConvStack {
    layers: Vec<Conv3x3>,
}

impl ConvStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        width: usize,
        out_ch: usize,
        depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let depth = depth.max(1);
        let layers = (0..depth)
            .map(|i| {
                let cin = if i == 0 { in_ch } else { width };
                let cout = if i + 1 == depth { out_ch } else { width };
                Conv3x3::new(store, &format!("{name}.conv{i}"), cin, cout, 1, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, ctx: &mut Ctx, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(ctx, x)?;
            if i + 1 < self.layers.len() {
                x = ctx.graph.relu(x)?;
            }
        }
        Ok(x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CycleNetsConfig {
    pub classes: usize,
    pub width: usize,
    pub depth: usize,
}

impl Default for CycleNetsConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            width: 8,
            depth: 3,
        }
    }
}

/// Toy generators and discriminators built from [`ConvStack`]s.
#[derive(Clone, Debug)]
pub struct CycleNets {
    pub g_cm: ConvStack,
    pub g_mc: ConvStack,
    pub d_m: ConvStack,
    pub d_c: ConvStack,
}

impl CycleNets {
    pub fn new(store: &mut ParamStore, cfg: CycleNetsConfig, rng: &mut ChaCha8Rng) -> Self {
        let (k, w, d) = (cfg.classes, cfg.width, cfg.depth);
        Self {
            g_cm: ConvStack::new(store, "g_cm", 1, w, k, d, rng),
            g_mc: ConvStack::new(store, "g_mc", k, w, 1, d, rng),
            d_m: ConvStack::new(store, "d_m", k, w, 1, d, rng),
            d_c: ConvStack::new(store, "d_c", 1, w, 1, d, rng),
        }
    }

    pub fn generator_params(&self) -> Vec<ParamId> {
        let mut p = self.g_cm.params();
        p.extend(self.g_mc.params());
        p
    }

    pub fn discriminator_params(&self) -> Vec<ParamId> {
        let mut p = self.d_m.params();
        p.extend(self.d_c.params());
        p
    }

    fn judge(stack: &ConvStack, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let s = stack.forward(ctx, x)?;
        let pooled = ctx.graph.global_avg_pool(s)?;
        ctx.graph.sigmoid(pooled)
    }
}

impl SegModels for CycleNets {
    fn image_to_mask(&self, ctx: &mut Ctx, image: Var) -> Result<Var> {
        let logits = self.g_cm.forward(ctx, image)?;
        ctx.graph.softmax_channels(logits)
    }

    fn mask_to_image(&self, ctx: &mut Ctx, mask: Var) -> Result<Var> {
        self.g_mc.forward(ctx, mask)
    }

    fn judge_mask(&self, ctx: &mut Ctx, mask: Var) -> Result<Var> {
        Self::judge(&self.d_m, ctx, mask)
    }

    fn judge_image(&self, ctx: &mut Ctx, image: Var) -> Result<Var> {
        Self::judge(&self.d_c, ctx, image)
    }
}
