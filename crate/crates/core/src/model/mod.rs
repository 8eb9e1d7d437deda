//! The assembled classifier: a small strided conv backbone, optional
//! attention blocks on its last stages, per-stage pooling heads, and a
//! linear layer with sigmoid outputs.

mod config;
mod infer;
mod train;

pub use config::{AttentionLevel, Fusion, ModelConfig, Pooling};
pub use infer::{gradcam, overlay, ten_crop_predict, CamStage};
pub use train::{train, write_history, EpochRecord, LabeledSet, TrainConfig};

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AaaBlock, Pwap};
use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::masks::AnatomyMasks;
use crate::nn::{BatchNorm, Conv3x3, Ctx, Linear, Mode, ParamId, ParamStore};
use crate::ops::ResizeMethod;
use crate::tensor::Tensor;

/// Floor applied before the GeM power.
const GEM_FLOOR: f64 = 1e-6;
/// Probability clamp inside the BCE.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug)]
struct Stage {
    conv: Conv3x3,
    bn: BatchNorm,
}

#[derive(Clone, Debug)]
enum PoolHead {
    Pwap(Pwap),
    Gem(ParamId),
    Average,
    Max,
}

impl PoolHead {
    fn new(store: &mut ParamStore, name: &str, kind: Pooling, channels: usize, gem_p: f64) -> Self {
        match kind {
            Pooling::Pwap => Self::Pwap(Pwap::new(store, name, channels)),
            Pooling::Gem => Self::Gem(store.add(format!("{name}.p"), Tensor::full(&[1], gem_p), true)),
            Pooling::Average => Self::Average,
            Pooling::Max => Self::Max,
        }
    }

    fn forward(&self, ctx: &mut Ctx, f: Var) -> Result<Var> {
        match self {
            Self::Pwap(p) => Ok(p.forward(ctx, f)?.0),
            Self::Gem(p) => {
                let p = ctx.param(*p);
                ctx.graph.gem_pool(f, p, GEM_FLOOR)
            }
            Self::Average => ctx.graph.global_avg_pool(f),
            Self::Max => ctx.graph.global_max_pool(f),
        }
    }
}

#[derive(Clone, Debug)]
struct Head {
    stage: usize,
    aaa: Option<AaaBlock>,
    pool: PoolHead,
}

#[derive(Clone, Debug)]
struct Architecture {
    stages: Vec<Stage>,
    heads: Vec<Head>,
    classifier: Linear,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Pre-sigmoid class scores, `N x n_classes`.
    pub logits: Var,
    pub probs: Var,
    /// Backbone stage outputs, first to last.
    pub stages: Vec<Var>,
    /// Per pooled stage, the map that enters pooling (after fusion),
    /// ordered from earlier to later stage.
    pub attended: Vec<Var>,
    /// Concatenated pooled vector fed to the classifier.
    pub pooled: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    arch: Architecture,
    pub store: ParamStore,
}

impl Model {
    /// Build a freshly initialized model; `seed` fixes all initial weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut stages = Vec::new();
        let mut cin = 1;
        for (i, &w) in config.backbone_widths.iter().enumerate() {
            stages.push(Stage {
                conv: Conv3x3::new(&mut store, &format!("stage{i}.conv"), cin, w, 2, &mut rng),
                bn: BatchNorm::new(&mut store, &format!("stage{i}.bn"), w),
            });
            cin = w;
        }
        let n_stages = stages.len();
        let attended: Vec<usize> = match config.attention_level.stages() {
            0 => vec![n_stages - 1],
            k => (n_stages - k..n_stages).collect(),
        };
        let mut heads = Vec::new();
        let mut pooled_width = 0;
        for &s in &attended {
            let c = config.backbone_widths[s];
            let aaa = (config.attention_level != AttentionLevel::L0 && config.fusion == Fusion::Aaa)
                .then(|| AaaBlock::new(&mut store, &format!("aaa{s}"), c, config.r, &mut rng));
            let pool = PoolHead::new(&mut store, &format!("pool{s}"), config.pooling, c, config.gem_p);
            heads.push(Head { stage: s, aaa, pool });
            pooled_width += c;
        }
        let classifier = Linear::new(&mut store, "classifier", pooled_width, config.n_classes, &mut rng);
        Ok(Self {
            config,
            arch: Architecture {
                stages,
                heads,
                classifier,
            },
            store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Classifier weight and bias ids.
    pub fn classifier_params(&self) -> (ParamId, ParamId) {
        (self.arch.classifier.weight, self.arch.classifier.bias)
    }

    /// Record a forward pass on `ctx`. `image` is `N x 1 x H x W`; masks
    /// may come at any resolution and are resized (nearest) to the
    /// configured mask size. Baseline models never read the masks.
    pub fn forward(&self, ctx: &mut Ctx, image: Var, masks: &AnatomyMasks) -> Result<ForwardOutput> {
        forward_arch(&self.config, &self.arch, ctx, image, masks)
    }

    /// Class probabilities `N x n_classes` without touching stored state.
    pub fn predict(&self, images: &Tensor, masks: &AnatomyMasks) -> Result<Tensor> {
        let mut store = self.store.clone();
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let mut ctx = Ctx::new(&mut g, &mut store, Mode::Eval);
        let out = self.forward(&mut ctx, x, masks)?;
        Ok(g.value(out.probs).clone())
    }

    /// Write parameters plus `<stem>.config`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut text = String::from("[model]\n");
        for (k, v) in self.config.to_pairs() {
            text.push_str(&format!("{k} = {v}\n"));
        }
        fs::write(dir.join(format!("{stem}.config")), text)?;
        self.store.save(dir, stem)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let text = fs::read_to_string(dir.join(format!("{stem}.config")))?;
        let mut config = ModelConfig::default();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('[') || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad config line {line:?}")))?;
            config.set(k.trim(), v.trim())?;
        }
        let mut model = Self::new(config, 0)?;
        model.store.load(dir, stem)?;
        Ok(model)
    }
}

fn forward_arch(
    cfg: &ModelConfig,
    arch: &Architecture,
    ctx: &mut Ctx,
    image: Var,
    masks: &AnatomyMasks,
) -> Result<ForwardOutput> {
    let (n, c, _, _) = ctx.graph.value(image).dims4()?;
    if c != 1 {
        return shape_err("model", format!("expected 1 input channel, got {c}"));
    }
    let mut stages = Vec::with_capacity(arch.stages.len());
    let mut x = image;
    for st in &arch.stages {
        let y = st.conv.forward(ctx, x)?;
        let y = st.bn.forward(ctx, y)?;
        x = ctx.graph.relu(y)?;
        stages.push(x);
    }

    let level = cfg.attention_level;
    let ms = (cfg.mask_size, cfg.mask_size);
    let resized = if level == AttentionLevel::L0 || cfg.fusion == Fusion::None {
        None
    } else {
        if masks.batch() != n {
            return shape_err(
                "model",
                format!("{n} images but {} mask pairs", masks.batch()),
            );
        }
        Some(if masks.spatial() == ms { masks.clone() } else { masks.resize(ms)? })
    };

    let mut attended = Vec::with_capacity(arch.heads.len());
    let mut pooled = Vec::with_capacity(arch.heads.len());
    for head in &arch.heads {
        let f = stages[head.stage];
        let fused = if level == AttentionLevel::L0 {
            f
        } else {
            let f_us = ctx.graph.resize(f, ms, ResizeMethod::Bilinear)?;
            match (cfg.fusion, &resized) {
                (Fusion::Aaa, Some(m)) => {
                    let block = head.aaa.as_ref().expect("aaa fusion builds blocks");
                    block.forward(ctx, f_us, m)?.out
                }
                (Fusion::Hardmask, Some(m)) => {
                    let u = ctx.graph.constant(m.union());
                    ctx.graph.mul(f_us, u)?
                }
                _ => f_us,
            }
        };
        attended.push(fused);
        pooled.push(head.pool.forward(ctx, fused)?);
    }
    let pooled = if pooled.len() == 1 {
        pooled[0]
    } else {
        ctx.graph.concat_cols(&pooled)?
    };
    let logits = arch.classifier.forward(ctx, pooled)?;
    let probs = ctx.graph.sigmoid(logits)?;
    Ok(ForwardOutput {
        logits,
        probs,
        stages,
        attended,
        pooled,
    })
}

/// Mean binary cross-entropy over classes and batch, probabilities clamped
/// to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(g: &mut Graph, probs: Var, labels: Var) -> Result<Var> {
    if g.shape(probs) != g.shape(labels) {
        return shape_err(
            "bce",
            format!("probs {:?}, labels {:?}", g.shape(probs), g.shape(labels)),
        );
    }
    let p = g.clamp(probs, BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let lp = g.ln_clamped(p, BCE_CLAMP)?;
    let q = g.neg(p)?;
    let q = g.add_scalar(q, 1.0)?;
    let lq = g.ln_clamped(q, BCE_CLAMP)?;
    let nl = g.neg(labels)?;
    let nl = g.add_scalar(nl, 1.0)?;
    let a = g.mul(labels, lp)?;
    let b = g.mul(nl, lq)?;
    let s = g.add(a, b)?;
    let m = g.mean_all(s)?;
    g.neg(m)
}
