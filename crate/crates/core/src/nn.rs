//! Parameter storage, forward context, basic layers and the Adam optimizer.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

/// Named tensors in registration order. Trainable entries are optimized;
/// the rest are buffers such as batch-norm running statistics.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

const MANIFEST_HEADER: &str = "anatomy-attn parameters v1";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        self.entries.push(Entry {
            name,
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.is_trainable(id)).collect()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Write `<stem>.manifest` (one line per tensor, in registration order)
    /// and `<stem>.bin` (the tensors back to back in the binary tensor format).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut manifest = BufWriter::new(File::create(dir.join(format!("{stem}.manifest")))?);
        let mut bin = BufWriter::new(File::create(dir.join(format!("{stem}.bin")))?);
        writeln!(manifest, "{MANIFEST_HEADER}")?;
        for e in &self.entries {
            let dims: Vec<String> = e.value.shape().iter().map(|d| d.to_string()).collect();
            writeln!(
                manifest,
                "{}\t{}\t{}",
                e.name,
                if e.trainable { "param" } else { "buffer" },
                dims.join("x")
            )?;
            e.value.write_to(&mut bin)?;
        }
        manifest.flush()?;
        bin.flush()?;
        Ok(())
    }

    /// Load values saved by [`ParamStore::save`] into a store with the same
    /// layout (same names, kinds and shapes in the same order).
    pub fn load(&mut self, dir: &Path, stem: &str) -> Result<()> {
        let manifest = BufReader::new(File::open(dir.join(format!("{stem}.manifest")))?);
        let mut bin = BufReader::new(File::open(dir.join(format!("{stem}.bin")))?);
        let mut lines = manifest.lines();
        match lines.next() {
            Some(Ok(h)) if h == MANIFEST_HEADER => {}
            _ => return Err(Error::Format("missing parameter manifest header".into())),
        }
        let mut count = 0;
        for (line, entry) in lines.zip(self.entries.iter_mut()) {
            let line = line?;
            let name = line.split('\t').next().unwrap_or_default();
            if name != entry.name {
                return Err(Error::Format(format!(
                    "manifest lists {name}, expected {}",
                    entry.name
                )));
            }
            let t = Tensor::read_from(&mut bin)?;
            if t.shape() != entry.value.shape() {
                return Err(Error::Format(format!(
                    "{name}: stored shape {:?}, expected {:?}",
                    t.shape(),
                    entry.value.shape()
                )));
            }
            entry.value = t;
            count += 1;
        }
        if count != self.entries.len() {
            return Err(Error::Format(format!(
                "manifest has {count} tensors, expected {}",
                self.entries.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything a forward pass needs: the tape, the parameters, and whether
/// normalization layers use batch or running statistics.
pub struct Ctx<'a> {
    pub graph: &'a mut Graph,
    store: &'a mut ParamStore,
    bound: HashMap<ParamId, Var>,
    mode: Mode,
}

impl<'a> Ctx<'a> {
    pub fn new(graph: &'a mut Graph, store: &'a mut ParamStore, mode: Mode) -> Self {
        Self {
            graph,
            store,
            bound: HashMap::new(),
            mode,
        }
    }

    /// Use pre-recorded vars for some parameters instead of fresh leaves.
    pub fn with_bindings(mut self, bindings: impl IntoIterator<Item = (ParamId, Var)>) -> Self {
        self.bound.extend(bindings);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// The var for parameter `id`, recorded on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.store.is_trainable(id) {
            self.graph.leaf(t)
        } else {
            self.graph.constant(t)
        };
        self.bound.insert(id, v);
        v
    }

    /// Trainable parameters touched by this pass, in registration order.
    pub fn bindings(&self) -> Vec<(ParamId, Var)> {
        let mut b: Vec<_> = self
            .bound
            .iter()
            .filter(|(id, _)| self.store.is_trainable(**id))
            .map(|(&id, &v)| (id, v))
            .collect();
        b.sort();
        b
    }

    /// Parameter gradients after `graph.backward(loss)`.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        self.bindings()
            .into_iter()
            .map(|(id, v)| (id, grads.get_or_zeros(v, self.store.get(id).shape())))
            .collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Fully connected layer, weights `uniform(+-1/sqrt(fan_in))`, zero bias.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            weight: store.add(format!("{name}.weight"), uniform(rng, &[out_dim, in_dim], bound), true),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]), true),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.graph.linear(x, w, b)
    }
}

/// Batch normalization over the channel axis with running statistics kept
/// as store buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels]), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(&[channels]), false),
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.graph.batch_norm_train(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                let blend = |old: &mut Tensor, new: &[f64]| {
                    for (o, n) in old.data_mut().iter_mut().zip(new) {
                        *o = (1.0 - m) * *o + m * n;
                    }
                };
                blend(ctx.store.get_mut(self.running_mean), &stats.mean);
                blend(ctx.store.get_mut(self.running_var), &stats.var);
                Ok(y)
            }
            Mode::Eval => {
                let mean = ctx.store.get(self.running_mean).data().to_vec();
                let var = ctx.store.get(self.running_var).data().to_vec();
                ctx.graph.batch_norm_eval(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }
}

/// 3x3 convolution layer with padding 1.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Conv3x3 {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / ((9 * in_ch) as f64).sqrt();
        Self {
            weight: store.add(format!("{name}.weight"), uniform(rng, &[out_ch, in_ch, 3, 3], bound), true),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]), true),
            stride,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.graph.conv3x3(x, w, b, self.stride)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u32,
    moments: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    /// `beta1 = 0.9`, `beta2 = 0.99`.
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, g) in grads {
            let n = g.numel();
            let (m, v) = self
                .moments
                .entry(*id)
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let p = store.get_mut(*id).data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
