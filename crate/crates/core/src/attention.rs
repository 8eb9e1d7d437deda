//! Anatomy-aware attention (AAA) and probabilistic weighted average pooling
//! (PWAP).
//!
//! PWAP scores every spatial position with a 1x1 convolution and a sigmoid,
//! then averages the feature map using those scores as weights:
//!
//! ```text
//! P   = sigmoid(K * F + b)                       N x 1 x H x W
//! V_c = sum_ij F_c P / (sum_ij P + eps_denom)    N x C
//! ```
//!
//! The AAA block pools its input with an internal PWAP head, encodes the
//! pooled vector into three attention vectors `A1, A2, A3`, and couples them
//! with two independent two-way softmaxes:
//!
//! ```text
//! (A_le, A_le_bar) = softmax(A1, A2)
//! (A_he_bar, A_he) = softmax(A2, A3)
//! A_bks            = (A_le_bar + A_he_bar) / 2
//! R = BN_fuse(BN_le(A_le M_lung F) + BN_he(A_he M_heart F) + BN_bks(A_bks F))
//! ```
//!
//! so the lung and heart enhancers never compete with each other, only with
//! the shared background suppressor.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::masks::AnatomyMasks;
use crate::nn::{BatchNorm, Ctx, Linear, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Learnable 1x1 scoring filter of a PWAP head. Starts at zero, so an
/// untrained head is exact mean pooling up to `eps_denom`.
#[derive(Clone, Debug)]
pub struct Pwap {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub eps_denom: f64,
    pub channels: usize,
}

impl Pwap {
    pub const EPS_DENOM: f64 = 1e-8;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            kernel: store.add(format!("{name}.kernel"), Tensor::zeros(&[1, channels]), true),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1]), true),
            eps_denom: Self::EPS_DENOM,
            channels,
        }
    }

    /// Returns the pooled vectors `N x C` and the probability map `N x 1 x H x W`.
    pub fn forward(&self, ctx: &mut Ctx, f: Var) -> Result<(Var, Var)> {
        let k = ctx.param(self.kernel);
        let b = ctx.param(self.bias);
        let g = &mut *ctx.graph;
        let logits = g.conv1x1(f, k, b)?;
        let p = g.sigmoid(logits)?;
        let v = weighted_pool(g, f, p, self.eps_denom)?;
        Ok((v, p))
    }
}

/// `V_c = sum_ij F_c P / (sum_ij P + eps_denom)` for a given map `P: N x 1 x H x W`.
pub fn weighted_pool(g: &mut Graph, f: Var, p: Var, eps_denom: f64) -> Result<Var> {
    let (n, c, h, w) = g.value(f).dims4()?;
    if g.shape(p) != [n, 1, h, w] {
        return shape_err(
            "weighted_pool",
            format!("features {:?}, map {:?}", g.shape(f), g.shape(p)),
        );
    }
    let x = g.mul(f, p)?;
    let num = g.sum_axes(x, &[2, 3])?;
    let den = g.sum_axes(p, &[2, 3])?;
    let den = g.add_scalar(den, eps_denom)?;
    let v = g.div(num, den)?;
    g.reshape(v, &[n, c])
}

/// FC -> ReLU -> BN -> FC -> ReLU -> BN, `C -> round(C / r) -> C`.
#[derive(Clone, Debug)]
pub struct AttentionEncoder {
    pub fc1: Linear,
    pub bn1: BatchNorm,
    pub fc2: Linear,
    pub bn2: BatchNorm,
    pub hidden: usize,
    pub r: f64,
}

impl AttentionEncoder {
    pub fn hidden_width(channels: usize, r: f64) -> usize {
        ((channels as f64 / r).round() as usize).max(1)
    }

    pub fn new(store: &mut ParamStore, name: &str, channels: usize, r: f64, rng: &mut ChaCha8Rng) -> Self {
        let hidden = Self::hidden_width(channels, r);
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), channels, hidden, rng),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), hidden),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, channels, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), channels),
            hidden,
            r,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, v: Var) -> Result<Var> {
        let x = self.fc1.forward(ctx, v)?;
        let x = ctx.graph.relu(x)?;
        let x = self.bn1.forward(ctx, x)?;
        let x = self.fc2.forward(ctx, x)?;
        let x = ctx.graph.relu(x)?;
        self.bn2.forward(ctx, x)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CoupledAttention {
    pub lung_enhancer: Var,
    pub heart_enhancer: Var,
    pub background_suppressor: Var,
    pub lung_complement: Var,
    pub heart_complement: Var,
}

/// Couple three attention vectors through the two pairwise softmaxes.
pub fn couple_attention(g: &mut Graph, a1: Var, a2: Var, a3: Var) -> Result<CoupledAttention> {
    if g.shape(a1) != g.shape(a2) || g.shape(a2) != g.shape(a3) {
        return shape_err(
            "couple_attention",
            format!("{:?}, {:?}, {:?}", g.shape(a1), g.shape(a2), g.shape(a3)),
        );
    }
    let (le, le_bar) = g.softmax_pair(a1, a2)?;
    let (he_bar, he) = g.softmax_pair(a2, a3)?;
    let s = g.add(le_bar, he_bar)?;
    let bks = g.scale(s, 0.5)?;
    Ok(CoupledAttention {
        lung_enhancer: le,
        heart_enhancer: he,
        background_suppressor: bks,
        lung_complement: le_bar,
        heart_complement: he_bar,
    })
}

/// Intermediate values of one AAA pass.
#[derive(Clone, Copy, Debug)]
pub struct AaaOutput {
    pub out: Var,
    pub pooled: Var,
    pub attention: CoupledAttention,
    pub r_le: Var,
    pub r_he: Var,
    pub r_bks: Var,
}

#[derive(Clone, Debug)]
pub struct AaaBlock {
    pub encoders: [AttentionEncoder; 3],
    pub intra_pwap: Pwap,
    pub bn_le: BatchNorm,
    pub bn_he: BatchNorm,
    pub bn_bks: BatchNorm,
    pub bn_fuse: BatchNorm,
    pub channels: usize,
}

impl AaaBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, r: f64, rng: &mut ChaCha8Rng) -> Self {
        let encoders = [1, 2, 3].map(|k| AttentionEncoder::new(store, &format!("{name}.enc{k}"), channels, r, rng));
        Self {
            encoders,
            intra_pwap: Pwap::new(store, &format!("{name}.pwap"), channels),
            bn_le: BatchNorm::new(store, &format!("{name}.bn_le"), channels),
            bn_he: BatchNorm::new(store, &format!("{name}.bn_he"), channels),
            bn_bks: BatchNorm::new(store, &format!("{name}.bn_bks"), channels),
            bn_fuse: BatchNorm::new(store, &format!("{name}.bn_fuse"), channels),
            channels,
        }
    }

    /// `f_us: N x C x H x W`; masks must already be at `H x W`.
    pub fn forward(&self, ctx: &mut Ctx, f_us: Var, masks: &AnatomyMasks) -> Result<AaaOutput> {
        let (n, c, h, w) = ctx.graph.value(f_us).dims4()?;
        if c != self.channels {
            return shape_err("aaa", format!("block has {} channels, input {c}", self.channels));
        }
        if masks.spatial() != (h, w) || masks.batch() != n {
            return shape_err(
                "aaa",
                format!(
                    "features {:?} but masks {:?}",
                    ctx.graph.shape(f_us),
                    masks.lung().shape()
                ),
            );
        }
        let (pooled, _) = self.intra_pwap.forward(ctx, f_us)?;
        let a1 = self.encoders[0].forward(ctx, pooled)?;
        let a2 = self.encoders[1].forward(ctx, pooled)?;
        let a3 = self.encoders[2].forward(ctx, pooled)?;

        let g = &mut *ctx.graph;
        let attention = couple_attention(g, a1, a2, a3)?;
        let lung = g.constant(masks.lung().clone());
        let heart = g.constant(masks.heart().clone());
        let spread = |g: &mut Graph, a: Var| g.reshape(a, &[n, c, 1, 1]);

        let a_le = spread(g, attention.lung_enhancer)?;
        let lf = g.mul(f_us, lung)?;
        let r_le = g.mul(lf, a_le)?;

        let a_he = spread(g, attention.heart_enhancer)?;
        let hf = g.mul(f_us, heart)?;
        let r_he = g.mul(hf, a_he)?;

        let a_bks = spread(g, attention.background_suppressor)?;
        let r_bks = g.mul(f_us, a_bks)?;

        let le = self.bn_le.forward(ctx, r_le)?;
        let he = self.bn_he.forward(ctx, r_he)?;
        let bks = self.bn_bks.forward(ctx, r_bks)?;
        let s = ctx.graph.add(le, he)?;
        let s = ctx.graph.add(s, bks)?;
        let out = self.bn_fuse.forward(ctx, s)?;
        Ok(AaaOutput {
            out,
            pooled,
            attention,
            r_le,
            r_he,
            r_bks,
        })
    }
}
