//! Run configuration: one TOML file per run, overridden by flags.
//!
//! ```toml
//! model = "model.toml"   # description, resolved against this file
//! data = "data"
//! output = "runs/a"
//! seed = 3
//!
//! [train]
//! epochs = 15
//! l1_coeff = 5e-3
//! schedule = { kind = "step-decay", step = 10, gamma = 0.2 }
//!
//! [finetune]
//! epochs = 2
//! lr = 0.005
//!
//! [prune]
//! method = "normal"
//! ratio = 0.5
//!
//! [augment]
//! enabled = ["shape", "angle"]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use bnslim::augment::{scale_set_for, AugmentConfig};
use bnslim::train::{LrSchedule, TrainConfig};
use serde::Deserialize;

use crate::failure::{invalid, Failure};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub finetune: TrainSection,
    #[serde(default)]
    pub prune: PruneSection,
    /// Kept as a table so that absent keys can get run-specific defaults.
    pub augment: Option<toml::Table>,
    #[serde(default)]
    pub bench: BenchSection,
}

/// Training settings; anything left out falls back to the subcommand's
/// defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f32>,
    pub momentum: Option<f32>,
    pub l1_coeff: Option<f32>,
    pub seed: Option<u64>,
    pub schedule: Option<LrSchedule>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    pub method: Option<String>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub baseline: Option<PathBuf>,
    #[serde(default)]
    pub models: Vec<PathBuf>,
    pub reps: Option<usize>,
    pub warmup: Option<usize>,
}

impl RunConfig {
    /// Reads `path` and resolves every relative path in it against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
            .map_err(|e| invalid(format!("config {}: {e}", path.display())))
    }

    /// Parses config text, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, toml::de::Error> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                *v = base.join(&*v);
            }
        };
        fix(&mut cfg.model);
        fix(&mut cfg.data);
        fix(&mut cfg.output);
        fix(&mut cfg.bench.baseline);
        for m in &mut cfg.bench.models {
            *m = base.join(&*m);
        }
        Ok(cfg)
    }
}

impl TrainSection {
    /// Fills `base` from this section, then from `over` (flags win).
    pub fn resolve(&self, over: &TrainSection, base: TrainConfig) -> TrainConfig {
        let pick = |a: &TrainSection| TrainConfig {
            epochs: a.epochs.unwrap_or(base.epochs),
            batch_size: a.batch_size.unwrap_or(base.batch_size),
            lr: a.lr.unwrap_or(base.lr),
            momentum: a.momentum.unwrap_or(base.momentum),
            l1_coeff: a.l1_coeff.unwrap_or(base.l1_coeff),
            seed: a.seed.unwrap_or(base.seed),
            schedule: a.schedule.unwrap_or(base.schedule),
        };
        let merged = TrainSection {
            epochs: over.epochs.or(self.epochs),
            batch_size: over.batch_size.or(self.batch_size),
            lr: over.lr.or(self.lr),
            momentum: over.momentum.or(self.momentum),
            l1_coeff: over.l1_coeff.or(self.l1_coeff),
            seed: over.seed.or(self.seed),
            schedule: over.schedule.or(self.schedule),
        };
        pick(&merged)
    }
}

/// Flag value if given, else the config value; must name an existing path.
pub fn existing(flag: Option<PathBuf>, config: Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    let p = flag
        .or(config)
        .ok_or_else(|| invalid(format!("no {what} given (flag or config)")))?;
    if !p.exists() {
        return Err(invalid(format!("{what} {} does not exist", p.display())));
    }
    Ok(p)
}

/// The `[augment]` section. Without an explicit `scale_set` the default
/// set is rescaled to `side`; without a `seed` the run seed is used.
pub fn augment_config(cfg: &RunConfig, side: Option<usize>, seed: u64) -> Result<AugmentConfig, Failure> {
    let table = cfg.augment.clone().unwrap_or_default();
    let mut out: AugmentConfig = table
        .clone()
        .try_into()
        .map_err(|e| invalid(format!("[augment]: {e}")))?;
    if let (false, Some(side)) = (table.contains_key("scale_set"), side) {
        out.scale_set = scale_set_for(side);
    }
    if !table.contains_key("seed") {
        out.seed = seed;
    }
    Ok(out)
}

pub fn required<T>(flag: Option<T>, config: Option<T>, what: &str) -> Result<T, Failure> {
    flag.or(config)
        .ok_or_else(|| invalid(format!("no {what} given (flag or config)")))
}
