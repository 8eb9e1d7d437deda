//! Flat INI configuration: `[section]` headers over `key = value` lines.
//! Overrides use dotted `section.key=value` and are applied after the file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anatomy_attn::gradcheck::GradCheckOptions;
use anatomy_attn::harness::{Experiment, SegToyConfig, SyntheticSpec};
use anatomy_attn::model::ModelConfig;

use crate::error::ConfigError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IniEntry {
    pub section: String,
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parse INI text. `#` and `;` start comment lines. A key outside any
/// section must be dotted.
pub fn parse_ini(text: &str) -> Result<Vec<IniEntry>, ConfigError> {
    let mut section: Option<String> = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line,
                detail: format!("unterminated section header {s:?}"),
            })?;
            section = Some(name.trim().to_string());
            continue;
        }
        let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            detail: format!("expected key = value, got {s:?}"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        let (sec, key) = match (&section, k.split_once('.')) {
            (Some(sec), _) => (sec.clone(), k.to_string()),
            (None, Some((sec, key))) => (sec.to_string(), key.to_string()),
            (None, None) => {
                return Err(ConfigError::Syntax {
                    line,
                    detail: format!("key {k:?} outside a section"),
                })
            }
        };
        out.push(IniEntry {
            section: sec,
            key,
            value: v.to_string(),
            line,
        });
    }
    Ok(out)
}

/// Every tunable the commands read.
#[derive(Clone, Debug)]
pub struct Settings {
    pub experiment: Experiment,
    pub windows: Vec<usize>,
    pub trials: usize,
    pub seg: SegToyConfig,
    pub gradcheck: GradCheckOptions,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            experiment: Experiment::default(),
            windows: vec![0, 2, 4, 6, 8, 10, 12],
            trials: 3,
            seg: SegToyConfig::default(),
            gradcheck: GradCheckOptions::default(),
        }
    }
}

const TRAIN_KEYS: [&str; 3] = ["epochs", "lr", "batch_size"];
const ABLATION_KEYS: [&str; 2] = ["mask_sizes", "image_sizes"];
const ROBUSTNESS_KEYS: [&str; 2] = ["windows", "trials"];
const SEG_KEYS: [&str; 9] = [
    "image_size",
    "annotated",
    "unannotated_pool",
    "unannotated_batch",
    "width",
    "depth",
    "steps",
    "gen_lr",
    "disc_lr",
];
const GRADCHECK_KEYS: [&str; 2] = ["tol", "eps"];

/// Data keys settable from a config. The data seed always comes from the
/// run seed.
fn data_keys() -> Vec<&'static str> {
    SyntheticSpec::default()
        .to_pairs()
        .into_iter()
        .map(|(k, _)| k)
        .filter(|&k| k != "seed")
        .collect()
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_string(),
        detail: e.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Settings {
    /// Defaults, then the file (if any), then each `section.key=value` override.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut s = Self::default();
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.display().to_string(),
                source,
            })?;
            for e in parse_ini(&text)?.into_iter().filter(|e| e.section != "run") {
                s.apply(&e.section, &e.key, &e.value)?;
            }
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::InvalidValue {
                key: o.clone(),
                detail: "expected section.key=value".into(),
            })?;
            let (sec, key) = k
                .trim()
                .split_once('.')
                .ok_or_else(|| ConfigError::UnknownKey(k.trim().to_string()))?;
            s.apply(sec, key, v)?;
        }
        Ok(s)
    }

    pub fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let full = format!("{section}.{key}");
        let unknown = || ConfigError::UnknownKey(full.clone());
        let core = |r: anatomy_attn::Result<()>| {
            r.map_err(|e| ConfigError::InvalidValue {
                key: full.clone(),
                detail: e.to_string(),
            })
        };
        match section {
            "model" => {
                if !ModelConfig::KEYS.contains(&key) {
                    return Err(unknown());
                }
                core(self.experiment.model.set(key, value))?;
            }
            "data" => {
                if !data_keys().contains(&key) {
                    return Err(unknown());
                }
                core(self.experiment.data.set(key, value))?;
            }
            "seg_data" => {
                if !data_keys().contains(&key) {
                    return Err(unknown());
                }
                core(self.seg.data.set(key, value))?;
            }
            "train" if TRAIN_KEYS.contains(&key) => {
                let t = &mut self.experiment.train;
                match key {
                    "epochs" => t.epochs = parse(&full, value)?,
                    "lr" => t.lr = parse(&full, value)?,
                    _ => t.batch_size = parse(&full, value)?,
                }
            }
            "ablation" if ABLATION_KEYS.contains(&key) => {
                let list = parse_list(&full, value)?;
                if key == "mask_sizes" {
                    self.experiment.mask_sizes = list;
                } else {
                    self.experiment.image_sizes = list;
                }
            }
            "robustness" if ROBUSTNESS_KEYS.contains(&key) => {
                if key == "windows" {
                    self.windows = parse_list(&full, value)?;
                } else {
                    self.trials = parse(&full, value)?;
                }
            }
            "seg" if SEG_KEYS.contains(&key) => {
                let s = &mut self.seg;
                match key {
                    "image_size" => s.image_size = parse(&full, value)?,
                    "annotated" => s.annotated = parse(&full, value)?,
                    "unannotated_pool" => s.unannotated_pool = parse(&full, value)?,
                    "unannotated_batch" => s.unannotated_batch = parse(&full, value)?,
                    "width" => s.nets.width = parse(&full, value)?,
                    "depth" => s.nets.depth = parse(&full, value)?,
                    "steps" => s.train.steps = parse(&full, value)?,
                    "gen_lr" => s.train.gen_lr = parse(&full, value)?,
                    _ => s.train.disc_lr = parse(&full, value)?,
                }
            }
            "gradcheck" if GRADCHECK_KEYS.contains(&key) => {
                if key == "tol" {
                    self.gradcheck.tol = parse(&full, value)?;
                } else {
                    self.gradcheck.eps = parse(&full, value)?;
                }
            }
            _ => return Err(unknown()),
        }
        Ok(())
    }

    /// Effective configuration in the same format [`Settings::load`] reads.
    /// The leading `[run]` section is skipped on load.
    pub fn to_ini(&self, run: &[(&str, String)]) -> String {
        let mut s = String::new();
        let mut section = |name: &str, pairs: Vec<(&str, String)>| {
            let _ = writeln!(s, "[{name}]");
            for (k, v) in pairs {
                let _ = writeln!(s, "{k} = {v}");
            }
            s.push('\n');
        };
        section("run", run.to_vec());
        section("model", self.experiment.model.to_pairs());
        let t = &self.experiment.train;
        section(
            "train",
            vec![
                ("epochs", t.epochs.to_string()),
                ("lr", format!("{:?}", t.lr)),
                ("batch_size", t.batch_size.to_string()),
            ],
        );
        let strip_seed = |d: &SyntheticSpec| d.to_pairs().into_iter().filter(|(k, _)| *k != "seed").collect();
        section("data", strip_seed(&self.experiment.data));
        section(
            "ablation",
            vec![
                ("mask_sizes", join(&self.experiment.mask_sizes)),
                ("image_sizes", join(&self.experiment.image_sizes)),
            ],
        );
        section(
            "robustness",
            vec![("windows", join(&self.windows)), ("trials", self.trials.to_string())],
        );
        let g = &self.seg;
        section(
            "seg",
            vec![
                ("image_size", g.image_size.to_string()),
                ("annotated", g.annotated.to_string()),
                ("unannotated_pool", g.unannotated_pool.to_string()),
                ("unannotated_batch", g.unannotated_batch.to_string()),
                ("width", g.nets.width.to_string()),
                ("depth", g.nets.depth.to_string()),
                ("steps", g.train.steps.to_string()),
                ("gen_lr", format!("{:?}", g.train.gen_lr)),
                ("disc_lr", format!("{:?}", g.train.disc_lr)),
            ],
        );
        section("seg_data", strip_seed(&self.seg.data));
        section(
            "gradcheck",
            vec![
                ("tol", format!("{:?}", self.gradcheck.tol)),
                ("eps", format!("{:?}", self.gradcheck.eps)),
            ],
        );
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    }
}
