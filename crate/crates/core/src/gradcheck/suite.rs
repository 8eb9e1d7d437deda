//! The named gradient-check targets: every differentiable op, the attention
//! and pooling modules, the losses, and the assembled classifier at every
//! attention level and pooling type.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{couple_attention, weighted_pool, AaaBlock, AttentionEncoder, Pwap};
use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::masks::AnatomyMasks;
use crate::model::{bce_loss, AttentionLevel, Model, ModelConfig, Pooling};
use crate::nn::{Mode, ParamStore};
use crate::ops::ResizeMethod;
use crate::seg::{disc_losses, generator_pass, pixel_ce, BatchVars, CycleNets, CycleNetsConfig, SegBatch, LOG_CLAMP};
use crate::tensor::Tensor;

use super::{grad_check_module, grad_check_with, GradCheckOptions, GradCheckReport};

/// Which family a target belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetGroup {
    Ops,
    Attention,
    Losses,
    EndToEnd,
}

impl TargetGroup {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ops => "ops",
            Self::Attention => "attention",
            Self::Losses => "losses",
            Self::EndToEnd => "model",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TargetResult {
    pub group: TargetGroup,
    pub name: String,
    pub report: GradCheckReport,
}

impl TargetResult {
    /// `group/name`.
    pub fn label(&self) -> String {
        format!("{}/{}", self.group.name(), self.name)
    }
}

impl TargetGroup {
    pub const ALL: [TargetGroup; 4] = [Self::Ops, Self::Attention, Self::Losses, Self::EndToEnd];
}

/// Run every target. Stops at the first target that errors; failing
/// comparisons are reported, not raised.
pub fn run_suite(opts: &GradCheckOptions) -> Result<Vec<TargetResult>> {
    run_targets(&TargetGroup::ALL, opts)
}

/// Run the targets of the listed groups, in suite order.
pub fn run_targets(groups: &[TargetGroup], opts: &GradCheckOptions) -> Result<Vec<TargetResult>> {
    let mut out = Vec::new();
    for g in TargetGroup::ALL.into_iter().filter(|g| groups.contains(g)) {
        match g {
            TargetGroup::Ops => ops_targets(opts, &mut out)?,
            TargetGroup::Attention => attention_targets(opts, &mut out)?,
            TargetGroup::Losses => loss_targets(opts, &mut out)?,
            TargetGroup::EndToEnd => model_targets(opts, &mut out)?,
        }
    }
    Ok(out)
}

struct Inputs {
    rng: ChaCha8Rng,
}

impl Inputs {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        Tensor::from_fn(shape, |_| self.rng.random_range(lo..hi))
    }

    /// Magnitudes in `[0.2, 1.5]` with random sign, away from kinks at zero.
    fn signed(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| {
            let m = self.rng.random_range(0.2..1.5);
            if self.rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
    }

    /// Distinct values so maxima are unique.
    fn distinct(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.rng.random_range(0..=i);
            idx.swap(i, j);
        }
        Tensor::new(shape, idx.into_iter().map(|k| k as f64 * 0.1 - 1.0).collect()).expect("shape matches")
    }

    fn binary(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| self.rng.random_bool(0.4) as u8 as f64)
    }
}

/// `sum(out * W)` for a fixed random `W`, so every output coordinate matters.
fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let w = Inputs::new(seed ^ 0x5eed).uniform(g.shape(out), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    g.sum_all(p)
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn op_case(name: &str, inputs: Vec<Tensor>, f: OpFn) -> (String, Vec<Tensor>, OpFn) {
    (name.to_string(), inputs, f)
}

fn ops_targets(opts: &GradCheckOptions, out: &mut Vec<TargetResult>) -> Result<()> {
    let mut r = Inputs::new(11);
    let a23 = r.uniform(&[2, 3], -1.0, 1.0);
    let b13 = r.uniform(&[1, 3], -1.0, 1.0);
    let pos23 = r.uniform(&[2, 3], 0.5, 1.5);
    let x4 = r.uniform(&[2, 3, 4, 4], -1.0, 1.0);

    let cases: Vec<(String, Vec<Tensor>, OpFn)> = vec![
        op_case("add", vec![a23.clone(), b13.clone()], Box::new(|g, v| { let y = g.add(v[0], v[1])?; project(g, y, 1) })),
        op_case("sub", vec![a23.clone(), b13.clone()], Box::new(|g, v| { let y = g.sub(v[0], v[1])?; project(g, y, 2) })),
        op_case("mul", vec![a23.clone(), b13.clone()], Box::new(|g, v| { let y = g.mul(v[0], v[1])?; project(g, y, 3) })),
        op_case("div", vec![a23.clone(), pos23.clone()], Box::new(|g, v| { let y = g.div(v[0], v[1])?; project(g, y, 4) })),
        op_case("neg", vec![a23.clone()], Box::new(|g, v| { let y = g.neg(v[0])?; project(g, y, 5) })),
        op_case("scale", vec![a23.clone()], Box::new(|g, v| { let y = g.scale(v[0], 1.7)?; project(g, y, 6) })),
        op_case("add_scalar", vec![a23.clone()], Box::new(|g, v| { let y = g.add_scalar(v[0], 0.3)?; project(g, y, 7) })),
        op_case("square", vec![a23.clone()], Box::new(|g, v| { let y = g.square(v[0])?; project(g, y, 8) })),
        op_case("sqrt", vec![pos23.clone()], Box::new(|g, v| { let y = g.sqrt(v[0])?; project(g, y, 9) })),
        op_case("exp", vec![a23.clone()], Box::new(|g, v| { let y = g.exp(v[0])?; project(g, y, 10) })),
        op_case("ln_clamped", vec![pos23.clone()], Box::new(|g, v| { let y = g.ln_clamped(v[0], 1e-6)?; project(g, y, 11) })),
        op_case("abs", vec![r.signed(&[2, 3])], Box::new(|g, v| { let y = g.abs(v[0])?; project(g, y, 12) })),
        op_case("relu", vec![r.signed(&[2, 3])], Box::new(|g, v| { let y = g.relu(v[0])?; project(g, y, 13) })),
        op_case("sigmoid", vec![a23.clone()], Box::new(|g, v| { let y = g.sigmoid(v[0])?; project(g, y, 14) })),
        op_case("clamp", vec![r.distinct(&[2, 3]).map(|x| x * 1.3 + 0.02)], Box::new(|g, v| { let y = g.clamp(v[0], -0.5, 0.5)?; project(g, y, 15) })),
        op_case("reshape", vec![a23.clone()], Box::new(|g, v| { let y = g.reshape(v[0], &[3, 2])?; project(g, y, 16) })),
        op_case("concat_cols", vec![a23.clone(), r.uniform(&[2, 2], -1.0, 1.0)], Box::new(|g, v| { let y = g.concat_cols(&[v[0], v[1]])?; project(g, y, 17) })),
        op_case("pick", vec![a23.clone()], Box::new(|g, v| g.pick(v[0], 4))),
        op_case("sum_all", vec![x4.clone()], Box::new(|g, v| { let y = g.square(v[0])?; g.sum_all(y) })),
        op_case("mean_all", vec![x4.clone()], Box::new(|g, v| { let y = g.square(v[0])?; g.mean_all(y) })),
        op_case("sum_axes", vec![x4.clone()], Box::new(|g, v| { let y = g.sum_axes(v[0], &[2, 3])?; project(g, y, 18) })),
        op_case("mean_axes", vec![x4.clone()], Box::new(|g, v| { let y = g.mean_axes(v[0], &[0, 2, 3])?; project(g, y, 19) })),
        op_case("softmax_pair", vec![a23.clone(), r.uniform(&[2, 3], -1.0, 1.0)], Box::new(|g, v| {
            let (p, q) = g.softmax_pair(v[0], v[1])?;
            let a = project(g, p, 20)?;
            let b = project(g, q, 21)?;
            g.add(a, b)
        })),
        op_case("softmax_channels", vec![x4.clone()], Box::new(|g, v| { let y = g.softmax_channels(v[0])?; project(g, y, 22) })),
        op_case("global_avg_pool", vec![x4.clone()], Box::new(|g, v| { let y = g.global_avg_pool(v[0])?; project(g, y, 23) })),
        op_case("global_max_pool", vec![r.distinct(&[2, 3, 4, 4])], Box::new(|g, v| { let y = g.global_max_pool(v[0])?; project(g, y, 24) })),
        op_case("gem_pool", vec![r.uniform(&[2, 3, 4, 4], 0.2, 1.5), Tensor::full(&[1], 3.0)], Box::new(|g, v| {
            let y = g.gem_pool(v[0], v[1], 1e-6)?;
            project(g, y, 25)
        })),
        op_case("linear", vec![a23.clone(), r.uniform(&[4, 3], -1.0, 1.0), r.uniform(&[4], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            project(g, y, 26)
        })),
        op_case("conv1x1", vec![x4.clone(), r.uniform(&[2, 3], -1.0, 1.0), r.uniform(&[2], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.conv1x1(v[0], v[1], v[2])?;
            project(g, y, 27)
        })),
        op_case("conv3x3", vec![r.uniform(&[2, 2, 5, 5], -1.0, 1.0), r.uniform(&[3, 2, 3, 3], -1.0, 1.0), r.uniform(&[3], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.conv3x3(v[0], v[1], v[2], 1)?;
            project(g, y, 28)
        })),
        op_case("conv3x3_stride2", vec![r.uniform(&[2, 2, 5, 5], -1.0, 1.0), r.uniform(&[3, 2, 3, 3], -1.0, 1.0), r.uniform(&[3], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.conv3x3(v[0], v[1], v[2], 2)?;
            project(g, y, 29)
        })),
        op_case("batch_norm_train", vec![x4.clone(), r.uniform(&[3], 0.5, 1.5), r.uniform(&[3], -1.0, 1.0)], Box::new(|g, v| {
            let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            project(g, y, 30)
        })),
        op_case("batch_norm_train_rank2", vec![r.uniform(&[4, 3], -1.0, 1.0), r.uniform(&[3], 0.5, 1.5), r.uniform(&[3], -1.0, 1.0)], Box::new(|g, v| {
            let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            project(g, y, 31)
        })),
        op_case("batch_norm_eval", vec![x4.clone(), r.uniform(&[3], 0.5, 1.5), r.uniform(&[3], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.0, 2.0], 1e-5)?;
            project(g, y, 32)
        })),
        op_case("resize_bilinear", vec![r.uniform(&[2, 2, 3, 3], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.resize(v[0], (5, 7), ResizeMethod::Bilinear)?;
            project(g, y, 33)
        })),
        op_case("resize_nearest", vec![r.uniform(&[2, 2, 3, 3], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.resize(v[0], (5, 7), ResizeMethod::Nearest)?;
            project(g, y, 34)
        })),
    ];
    for (name, inputs, f) in cases {
        let report = grad_check_with(|g, v| f(g, v), &inputs, opts)?;
        out.push(TargetResult {
            group: TargetGroup::Ops,
            name,
            report,
        });
    }
    Ok(())
}

fn attention_targets(opts: &GradCheckOptions, out: &mut Vec<TargetResult>) -> Result<()> {
    let mut r = Inputs::new(23);
    let mut push = |name: &str, report: GradCheckReport| {
        out.push(TargetResult {
            group: TargetGroup::Attention,
            name: name.to_string(),
            report,
        })
    };

    let f = r.uniform(&[2, 3, 4, 4], -1.0, 1.0);
    let p = r.uniform(&[2, 1, 4, 4], 0.05, 0.95);
    push(
        "weighted_pool",
        grad_check_with(
            |g, v| {
                let y = weighted_pool(g, v[0], v[1], Pwap::EPS_DENOM)?;
                project(g, y, 40)
            },
            &[f.clone(), p],
            opts,
        )?,
    );

    let a: Vec<Tensor> = (0..3).map(|_| r.uniform(&[2, 4], -1.5, 1.5)).collect();
    push(
        "couple_attention",
        grad_check_with(
            |g, v| {
                let c = couple_attention(g, v[0], v[1], v[2])?;
                let mut s = project(g, c.lung_enhancer, 41)?;
                for (k, t) in [c.heart_enhancer, c.background_suppressor].into_iter().enumerate() {
                    let q = project(g, t, 42 + k as u64)?;
                    s = g.add(s, q)?;
                }
                Ok(s)
            },
            &a,
            opts,
        )?,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let pwap = Pwap::new(&mut store, "pwap", 3);
    *store.get_mut(pwap.kernel) = r.uniform(&[1, 3], -1.0, 1.0);
    *store.get_mut(pwap.bias) = r.uniform(&[1], -0.5, 0.5);
    push(
        "pwap",
        grad_check_module(
            &store,
            Mode::Train,
            std::slice::from_ref(&f),
            |ctx, v| {
                let (y, _) = pwap.forward(ctx, v[0])?;
                project(ctx.graph, y, 45)
            },
            opts,
        )?,
    );

    let mut store = ParamStore::new();
    let enc = AttentionEncoder::new(&mut store, "enc", 3, 0.5, &mut rng);
    let v = r.uniform(&[4, 3], -1.0, 1.0);
    push(
        "attention_encoder",
        grad_check_module(
            &store,
            Mode::Train,
            &[v],
            |ctx, v| {
                let y = enc.forward(ctx, v[0])?;
                project(ctx.graph, y, 46)
            },
            opts,
        )?,
    );

    let mut store = ParamStore::new();
    let block = AaaBlock::new(&mut store, "aaa", 3, 0.5, &mut rng);
    *store.get_mut(block.intra_pwap.kernel) = r.uniform(&[1, 3], -1.0, 1.0);
    let masks = random_masks(&mut r, 4, 4);
    let f3 = r.uniform(&[4, 3, 4, 4], -1.0, 1.0);
    push(
        "aaa_block",
        grad_check_module(
            &store,
            Mode::Train,
            &[f3],
            |ctx, v| {
                let o = block.forward(ctx, v[0], &masks)?;
                project(ctx.graph, o.out, 47)
            },
            opts,
        )?,
    );
    Ok(())
}

/// Disjoint random lung/heart masks.
fn random_masks(r: &mut Inputs, n: usize, s: usize) -> AnatomyMasks {
    let lung = r.binary(&[n, 1, s, s]);
    let heart = r.binary(&[n, 1, s, s]).zip_map(&lung, |h, l| h * (1.0 - l)).expect("same shape");
    AnatomyMasks::new(lung, heart).expect("disjoint masks")
}

fn loss_targets(opts: &GradCheckOptions, out: &mut Vec<TargetResult>) -> Result<()> {
    let mut r = Inputs::new(37);
    let mut push = |name: &str, report: GradCheckReport| {
        out.push(TargetResult {
            group: TargetGroup::Losses,
            name: name.to_string(),
            report,
        })
    };

    let labels = r.binary(&[3, 2]);
    push(
        "bce",
        grad_check_with(
            |g, v| {
                let y = g.constant(labels.clone());
                bce_loss(g, v[0], y)
            },
            &[r.uniform(&[3, 2], 0.05, 0.95)],
            opts,
        )?,
    );

    let masks = random_masks(&mut r, 2, 4);
    let target = crate::seg::one_hot(&masks);
    push(
        "pixel_ce",
        grad_check_with(
            |g, v| {
                let p = g.softmax_channels(v[0])?;
                let t = g.constant(target.clone());
                pixel_ce(g, t, p, LOG_CLAMP)
            },
            &[r.uniform(&[2, 3, 4, 4], -1.5, 1.5)],
            opts,
        )?,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let nets = CycleNets::new(
        &mut store,
        CycleNetsConfig {
            classes: 3,
            width: 3,
            depth: 2,
        },
        &mut rng,
    );
    let batch = SegBatch::new(
        r.uniform(&[2, 1, 4, 4], -1.0, 1.0),
        target.clone(),
        r.uniform(&[2, 1, 4, 4], -1.0, 1.0),
    )?;
    push(
        "generator_objective",
        grad_check_module(
            &store,
            Mode::Train,
            &[],
            |ctx, _| {
                let b = BatchVars::record(ctx.graph, &batch);
                Ok(generator_pass(ctx, &nets, b)?.objective)
            },
            opts,
        )?,
    );

    let fake_masks = crate::ops::softmax_channels_tensor(&r.uniform(&[2, 3, 4, 4], -1.0, 1.0))?;
    let fake_images = r.uniform(&[2, 1, 4, 4], -1.0, 1.0);
    push(
        "discriminator_objective",
        grad_check_module(
            &store,
            Mode::Train,
            &[],
            |ctx, _| {
                let g = &mut *ctx.graph;
                let rm = g.constant(target.clone());
                let fm = g.constant(fake_masks.clone());
                let ri = g.constant(batch.unannotated().clone());
                let fi = g.constant(fake_images.clone());
                let (dm, dc) = disc_losses(ctx, &nets, rm, fm, ri, fi)?;
                ctx.graph.add(dm, dc)
            },
            opts,
        )?,
    );
    Ok(())
}

/// Image side and batch of the end-to-end targets. Three stride-2 stages on
/// 16 pixels keep the deepest map at 2x2, so upsampled maps are not
/// spatially constant and max pooling has no ties.
const E2E_IMAGE: usize = 16;
const E2E_BATCH: usize = 6;

fn model_targets(opts: &GradCheckOptions, out: &mut Vec<TargetResult>) -> Result<()> {
    let mut r = Inputs::new(54);
    let image = r.uniform(&[E2E_BATCH, 1, E2E_IMAGE, E2E_IMAGE], -1.0, 1.0);
    let masks = random_masks(&mut r, E2E_BATCH, E2E_IMAGE);
    let labels = r.binary(&[E2E_BATCH, 2]);
    for level in AttentionLevel::ALL {
        for pooling in Pooling::ALL {
            let cfg = ModelConfig {
                image_size: E2E_IMAGE,
                mask_size: 4,
                attention_level: level,
                pooling,
                backbone_widths: vec![3, 4, 5],
                ..Default::default()
            };
            let mut model = Model::new(cfg, 3)?;
            // Nonzero scoring filters so PWAP weights vary over space.
            let ids: Vec<_> = model
                .store
                .ids()
                .filter(|&id| model.store.name(id).ends_with(".kernel"))
                .collect();
            for id in ids {
                let shape = model.store.get(id).shape().to_vec();
                *model.store.get_mut(id) = r.uniform(&shape, -1.0, 1.0);
            }
            let report = grad_check_module(
                &model.store,
                Mode::Train,
                std::slice::from_ref(&image),
                |ctx, v| {
                    let o = model.forward(ctx, v[0], &masks)?;
                    let y = ctx.graph.constant(labels.clone());
                    bce_loss(ctx.graph, o.probs, y)
                },
                opts,
            )?;
            out.push(TargetResult {
                group: TargetGroup::EndToEnd,
                name: format!("{level}_{pooling}"),
                report,
            });
        }
    }
    Ok(())
}
