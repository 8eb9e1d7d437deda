use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::masks::AnatomyMasks;
use crate::model::{train, AttentionLevel, Fusion, LabeledSet, Model, ModelConfig, Pooling, TrainConfig};
use crate::nn::ParamStore;
use crate::seg::{
    apply_cutout, one_hot, sample_cutout_windows, train_cyclegan_toy, CycleNets, CycleNetsConfig,
    LossRecord, SegBatch, SegTrainConfig,
};

use super::metrics::{mean_auc, median, per_class_auc, MetricsTable};
use super::synthetic::{gen_synthetic, SyntheticSpec};

/// Environment variable capping sweep worker threads.
pub const THREADS_ENV: &str = "ANATOMY_ATTN_THREADS";

/// Worker count from [`THREADS_ENV`], else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_parallel<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Stable 64-bit mix of a base seed and a stream index.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Everything one classification run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: SyntheticSpec,
    pub mask_sizes: Vec<usize>,
    pub image_sizes: Vec<usize>,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: SyntheticSpec::default(),
            mask_sizes: vec![16, 24, 32],
            image_sizes: vec![32, 48, 64],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    AttentionLevel,
    Pooling,
    MaskSize,
    ImageSize,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::AttentionLevel => "attention_level",
            Self::Pooling => "pooling",
            Self::MaskSize => "mask_size",
            Self::ImageSize => "image_size",
        }
    }

    pub fn file_name(self) -> String {
        format!("ablation_{}.csv", self.name())
    }

    /// `(row label, model config, data spec)` for every value on the axis.
    pub fn conditions(self, exp: &Experiment) -> Vec<(String, ModelConfig, SyntheticSpec)> {
        let base = || (exp.model.clone(), exp.data.clone());
        match self {
            Self::AttentionLevel => AttentionLevel::ALL
                .iter()
                .map(|&l| {
                    let (mut m, d) = base();
                    m.attention_level = l;
                    (l.label().to_string(), m, d)
                })
                .collect(),
            Self::Pooling => Pooling::ALL
                .iter()
                .map(|&p| {
                    let (mut m, d) = base();
                    m.pooling = p;
                    (p.to_string(), m, d)
                })
                .collect(),
            Self::MaskSize => exp
                .mask_sizes
                .iter()
                .map(|&s| {
                    let (mut m, d) = base();
                    m.mask_size = s;
                    (format!("mask_{s}"), m, d)
                })
                .collect(),
            Self::ImageSize => exp
                .image_sizes
                .iter()
                .map(|&s| {
                    let (mut m, mut d) = base();
                    m.image_size = s;
                    d.image_size = s;
                    (format!("image_{s}"), m, d)
                })
                .collect(),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" | "attention_level" | "attention-level" => Ok(Self::AttentionLevel),
            "pooling" => Ok(Self::Pooling),
            "mask_size" | "mask-size" | "mask" => Ok(Self::MaskSize),
            "image_size" | "image-size" | "image" => Ok(Self::ImageSize),
            _ => Err(Error::InvalidArgument(format!("unknown ablation axis {s:?}"))),
        }
    }
}

/// Test AUC of one trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub per_class: Vec<f64>,
    pub mean: f64,
}

/// Dataset seed shared by every condition run under `seed`.
pub fn data_seed(seed: u64) -> u64 {
    derive_seed(seed, u64::MAX)
}

/// Generate data under `seed`, train one model, and score it on the test split.
pub fn run_cell(model_cfg: &ModelConfig, data: &SyntheticSpec, train_cfg: &TrainConfig, seed: u64, cell: u64) -> Result<CellResult> {
    let spec = SyntheticSpec {
        seed: data_seed(seed),
        ..data.clone()
    };
    let d = gen_synthetic(&spec)?;
    let cfg = ModelConfig {
        n_classes: spec.classes.len(),
        ..model_cfg.clone()
    };
    let cell_seed = derive_seed(seed, cell);
    let mut model = Model::new(cfg, cell_seed)?;
    let tc = TrainConfig {
        seed: derive_seed(cell_seed, 1),
        ..*train_cfg
    };
    train(&mut model, &d.train.labeled(), Some(&d.val.labeled()), &tc)?;
    score(&model, &d.test.labeled())
}

fn score(model: &Model, test: &LabeledSet) -> Result<CellResult> {
    let p = model.predict(&test.images, &test.masks)?;
    let per = per_class_auc(&p, &test.labels)?;
    let per_class = per
        .into_iter()
        .enumerate()
        .map(|(c, a)| a.ok_or_else(|| Error::DegenerateLabels(format!("class {c} in test split"))))
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok(CellResult { per_class, mean })
}

/// One model per axis value per seed; per-class and mean test AUC rows hold
/// the median over seeds.
pub fn ablation_sweep(axis: AblationAxis, exp: &Experiment, seeds: &[u64]) -> Result<MetricsTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let conditions = axis.conditions(exp);
    let jobs: Vec<(usize, u64, u64)> = (0..conditions.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .enumerate()
        .map(|(i, (c, s))| (c, s, i as u64))
        .collect();
    let results = run_parallel(&jobs, |&(c, seed, cell)| {
        let (_, m, d) = &conditions[c];
        run_cell(m, d, &exp.train, seed, cell)
    })?;

    let classes = exp.data.class_names();
    let mut table = MetricsTable::default();
    for (c, (label, _, _)) in conditions.iter().enumerate() {
        let cells: Vec<&CellResult> = jobs
            .iter()
            .zip(&results)
            .filter(|((jc, _, _), _)| *jc == c)
            .map(|(_, r)| r)
            .collect();
        let per: Vec<f64> = (0..classes.len())
            .map(|k| median(&cells.iter().map(|r| r.per_class[k]).collect::<Vec<_>>()))
            .collect();
        let mean = median(&cells.iter().map(|r| r.mean).collect::<Vec<_>>());
        table.push_condition(label, &classes, &per, mean);
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessRow {
    pub model: String,
    pub window: usize,
    pub mean_auc: f64,
    pub per_class: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RobustnessTable {
    pub classes: Vec<String>,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessTable {
    pub fn row(&self, model: &str, window: usize) -> Option<&RobustnessRow> {
        self.rows.iter().find(|r| r.model == model && r.window == window)
    }

    /// Mean AUC at the smallest window minus mean AUC at the largest.
    pub fn degradation(&self, model: &str) -> Option<f64> {
        let rows: Vec<&RobustnessRow> = self.rows.iter().filter(|r| r.model == model).collect();
        let lo = rows.iter().min_by_key(|r| r.window)?;
        let hi = rows.iter().max_by_key(|r| r.window)?;
        Some(lo.mean_auc - hi.mean_auc)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "model,window,mean_auc")?;
        for c in &self.classes {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        for r in &self.rows {
            write!(w, "{},{},{:.6}", r.model, r.window, r.mean_auc)?;
            for a in &r.per_class {
                write!(w, ",{a:.6}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Evaluate frozen models on cutout-corrupted masks. Masks are resized to
/// the models' shared mask size and windows are measured in those pixels.
/// Each nonzero window is sampled `trials` times; every model sees the same
/// corrupted masks and the AUCs are averaged over trials. Window 0 is the
/// uncorrupted evaluation.
pub fn robustness_sweep(
    models: &[(&str, &Model)],
    test: &LabeledSet,
    classes: &[String],
    windows: &[usize],
    trials: usize,
    seed: u64,
) -> Result<RobustnessTable> {
    let (_, first) = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("no models to evaluate".into()))?;
    let ms = first.config().mask_size;
    if models.iter().any(|(_, m)| m.config().mask_size != ms) {
        return Err(Error::InvalidArgument("models disagree on mask size".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    let masks = test.masks.resize((ms, ms))?;
    let evaluate = |model: &Model, masks: &AnatomyMasks| -> Result<CellResult> {
        score(
            model,
            &LabeledSet {
                images: test.images.clone(),
                masks: masks.clone(),
                labels: test.labels.clone(),
            },
        )
    };

    let mut table = RobustnessTable {
        classes: classes.to_vec(),
        rows: Vec::new(),
    };
    let mut per_window: Vec<Vec<CellResult>> = Vec::new();
    for (wi, &w) in windows.iter().enumerate() {
        let corrupted: Vec<AnatomyMasks> = if w == 0 {
            vec![masks.clone()]
        } else {
            (0..trials)
                .map(|t| {
                    let s = derive_seed(seed, (wi * trials + t) as u64);
                    let win = sample_cutout_windows(&masks, w, s);
                    apply_cutout(&masks, &win)
                })
                .collect::<Result<_>>()?
        };
        let mut row = Vec::new();
        for (_, model) in models {
            let runs: Vec<CellResult> = corrupted.iter().map(|m| evaluate(model, m)).collect::<Result<_>>()?;
            let k = runs[0].per_class.len();
            let n = runs.len() as f64;
            let per_class: Vec<f64> = (0..k)
                .map(|c| runs.iter().map(|r| r.per_class[c]).sum::<f64>() / n)
                .collect();
            let mean = runs.iter().map(|r| r.mean).sum::<f64>() / n;
            row.push(CellResult { per_class, mean });
        }
        per_window.push(row);
    }
    for (mi, (name, _)) in models.iter().enumerate() {
        for (wi, &w) in windows.iter().enumerate() {
            let r = &per_window[wi][mi];
            table.rows.push(RobustnessRow {
                model: name.to_string(),
                window: w,
                mean_auc: r.mean,
                per_class: r.per_class.clone(),
            });
        }
    }
    Ok(table)
}

pub const ROBUST_AAA: &str = "aaa";
pub const ROBUST_HARDMASK: &str = "hardmask";

/// Models trained under one seed and the test split they were swept on.
#[derive(Clone, Debug)]
pub struct TrainedSeed {
    pub seed: u64,
    pub models: Vec<(&'static str, Model)>,
    pub test: LabeledSet,
}

/// Per-seed tables plus their element-wise medians.
#[derive(Clone, Debug)]
pub struct RobustnessReport {
    pub per_seed: Vec<RobustnessTable>,
    pub trained: Vec<TrainedSeed>,
    pub median: RobustnessTable,
    /// `(model, per-seed degradations, median degradation)`.
    pub degradation: Vec<(String, Vec<f64>, f64)>,
}

impl RobustnessReport {
    pub fn median_degradation(&self, model: &str) -> Option<f64> {
        self.degradation.iter().find(|(m, _, _)| m == model).map(|d| d.2)
    }

    pub fn write_degradation_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "model")?;
        for i in 0..self.per_seed.len() {
            write!(w, ",seed{i}")?;
        }
        writeln!(w, ",median")?;
        for (m, per, med) in &self.degradation {
            write!(w, "{m}")?;
            for d in per {
                write!(w, ",{d:.6}")?;
            }
            writeln!(w, ",{med:.6}")?;
        }
        Ok(())
    }
}

/// Config of the anatomy-attention model and its hard-mask counterpart.
pub fn robustness_models(base: &ModelConfig) -> [(&'static str, ModelConfig); 2] {
    let level = if base.attention_level == AttentionLevel::L0 {
        AttentionLevel::L2
    } else {
        base.attention_level
    };
    let with = |fusion| ModelConfig {
        attention_level: level,
        fusion,
        ..base.clone()
    };
    [(ROBUST_AAA, with(Fusion::Aaa)), (ROBUST_HARDMASK, with(Fusion::Hardmask))]
}

/// Train both robustness models per seed on shared data, then sweep windows.
pub fn robustness_experiment(exp: &Experiment, windows: &[usize], trials: usize, seeds: &[u64]) -> Result<RobustnessReport> {
    if seeds.is_empty() || windows.is_empty() {
        return Err(Error::InvalidArgument("seeds and windows must be non-empty".into()));
    }
    let configs = robustness_models(&exp.model);
    let jobs: Vec<(u64, usize)> = seeds
        .iter()
        .flat_map(|&s| (0..configs.len()).map(move |m| (s, m)))
        .collect();
    let trained = run_parallel(&jobs, |&(seed, mi)| {
        let spec = SyntheticSpec {
            seed: data_seed(seed),
            ..exp.data.clone()
        };
        let d = gen_synthetic(&spec)?;
        let cfg = ModelConfig {
            n_classes: spec.classes.len(),
            ..configs[mi].1.clone()
        };
        let model_seed = derive_seed(seed, mi as u64);
        let mut model = Model::new(cfg, model_seed)?;
        let tc = TrainConfig {
            seed: derive_seed(model_seed, 1),
            ..exp.train
        };
        train(&mut model, &d.train.labeled(), Some(&d.val.labeled()), &tc)?;
        Ok((model, d.test.labeled()))
    })?;

    let classes = exp.data.class_names();
    let mut trained = trained.into_iter();
    let mut per_seed = Vec::new();
    let mut by_seed = Vec::new();
    for &seed in seeds {
        let mut models = Vec::new();
        let mut test = None;
        for (name, _) in &configs {
            let (m, t) = trained.next().expect("one job per seed and model");
            models.push((*name, m));
            test = Some(t);
        }
        let test = test.expect("at least one model");
        let refs: Vec<(&str, &Model)> = models.iter().map(|(n, m)| (*n, m)).collect();
        per_seed.push(robustness_sweep(&refs, &test, &classes, windows, trials, derive_seed(seed, 7))?);
        by_seed.push(TrainedSeed { seed, models, test });
    }

    let mut median_table = RobustnessTable {
        classes: classes.clone(),
        rows: Vec::new(),
    };
    for (ri, r) in per_seed[0].rows.iter().enumerate() {
        let col = |f: &dyn Fn(&RobustnessRow) -> f64| median(&per_seed.iter().map(|t| f(&t.rows[ri])).collect::<Vec<_>>());
        median_table.rows.push(RobustnessRow {
            model: r.model.clone(),
            window: r.window,
            mean_auc: col(&|x| x.mean_auc),
            per_class: (0..r.per_class.len()).map(|k| col(&|x| x.per_class[k])).collect(),
        });
    }
    let degradation = configs
        .iter()
        .map(|(name, _)| {
            let per: Vec<f64> = per_seed
                .iter()
                .map(|t| t.degradation(name).expect("model rows present"))
                .collect();
            let med = median(&per);
            (name.to_string(), per, med)
        })
        .collect();
    Ok(RobustnessReport {
        per_seed,
        trained: by_seed,
        median: median_table,
        degradation,
    })
}

/// Toy segmentation run settings.
#[derive(Clone, Debug)]
pub struct SegToyConfig {
    pub image_size: usize,
    pub annotated: usize,
    pub unannotated_pool: usize,
    pub unannotated_batch: usize,
    pub nets: CycleNetsConfig,
    pub train: SegTrainConfig,
    pub data: SyntheticSpec,
}

impl Default for SegToyConfig {
    fn default() -> Self {
        Self {
            image_size: 16,
            annotated: 8,
            unannotated_pool: 48,
            unannotated_batch: 6,
            nets: CycleNetsConfig::default(),
            train: SegTrainConfig::default(),
            data: SyntheticSpec {
                anatomy_contrast: 0.5,
                noise: 0.1,
                mask_jitter: 0,
                ..SyntheticSpec::default()
            },
        }
    }
}

/// Train toy segmentation nets on synthetic anatomy: a fixed annotated set
/// and a fresh draw of unannotated images each step.
pub fn seg_toy_run(cfg: &SegToyConfig, seed: u64) -> Result<(CycleNets, ParamStore, Vec<LossRecord>)> {
    let spec = SyntheticSpec {
        image_size: cfg.image_size,
        n_train: cfg.annotated + cfg.unannotated_pool,
        n_val: 0,
        n_test: 0,
        seed: data_seed(seed),
        ..cfg.data.clone()
    };
    let d = gen_synthetic(&spec)?;
    let ann: Vec<usize> = (0..cfg.annotated).collect();
    let images = d.train.images.select_batch(&ann)?;
    let masks = one_hot(&d.train.true_masks.select_batch(&ann)?);
    let pool = d.train.images.narrow_batch(cfg.annotated, cfg.unannotated_pool)?;

    let mut init = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut store = ParamStore::new();
    let nets = CycleNets::new(&mut store, cfg.nets, &mut init);
    let mut draw = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let curve = train_cyclegan_toy(&nets, &mut store, &cfg.train, |_| {
        let idx: Vec<usize> = (0..cfg.unannotated_batch)
            .map(|_| draw.random_range(0..cfg.unannotated_pool))
            .collect();
        SegBatch::new(images.clone(), masks.clone(), pool.select_batch(&idx)?)
    })?;
    Ok((nets, store, curve))
}

/// Mean validation AUC of a trained model, `None` for degenerate labels.
pub fn evaluate_mean_auc(model: &Model, set: &LabeledSet) -> Result<Option<f64>> {
    let p = model.predict(&set.images, &set.masks)?;
    mean_auc(&p, &set.labels)
}
