//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored; unknown or repeated keys are
//! errors. [`RunConfig::to_text`] writes every key, so a resolved config
//! read back gives the same run.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{generate_synthetic_tkg, load_dataset, PatternSpec, QuadrupleStore};
use crate::error::{Error, Result};
use crate::eval::{FilterSetting, Subset};
use crate::ode::BackwardMode;
use crate::training::TrainConfig;

pub const OUTPUT_DIR_ENV: &str = "TKG_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub pattern: PatternSpec,
    pub entities: usize,
    pub relations: usize,
    pub timestamps: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Directory { path: PathBuf, time_unit: Option<u64> },
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<QuadrupleStore> {
        match self {
            DataSource::Directory { path, time_unit } => load_dataset(path, *time_unit),
            DataSource::Synthetic(s) => generate_synthetic_tkg(s.entities, s.relations, s.timestamps, &s.pattern, s.seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    pub eval_setting: FilterSetting,
    pub eval_subset: Subset,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSource::Synthetic(SyntheticSpec {
                pattern: PatternSpec::Periodic {
                    period: PatternSpec::DEFAULT_PERIOD,
                },
                entities: 20,
                relations: 4,
                timestamps: 40,
                seed: 0,
            }),
            output_dir: PathBuf::from("out"),
            train: TrainConfig::default(),
            eval_setting: FilterSetting::TimeAware,
            eval_subset: Subset::Full,
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value {value:?} for {key}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

impl RunConfig {
    /// Small model for the whole-model gradient check.
    pub fn gradcheck_default() -> Self {
        let mut cfg = RunConfig {
            data: DataSource::Synthetic(SyntheticSpec {
                pattern: PatternSpec::Random { events_per_step: 5 },
                entities: 5,
                relations: 2,
                timestamps: 8,
                seed: 0,
            }),
            ..Default::default()
        };
        cfg.train.model.dim = 8;
        cfg.train.encoder.history = 2;
        cfg.train.encoder.solver.backward_mode = BackwardMode::Unrolled;
        cfg
    }

    pub fn parse(text: &str, base: RunConfig) -> Result<Self> {
        let mut cfg = base;
        let mut seen = HashSet::new();
        let mut dir: Option<PathBuf> = None;
        let mut time_unit: Option<u64> = None;
        let mut synth = match &cfg.data {
            DataSource::Synthetic(s) => *s,
            DataSource::Directory { .. } => RunConfig::default().synthetic_spec(),
        };
        let mut pattern_name: Option<String> = None;
        let mut period: Option<usize> = None;
        let mut pattern_size: Option<usize> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "config".into(),
                line: i + 1,
                msg: format!("expected `key = value`, found {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("key {key} given twice")));
            }
            let t = &mut cfg.train;
            match key {
                "dataset_dir" => dir = Some(PathBuf::from(value)),
                "time_unit" => time_unit = Some(num(key, value)?),
                "synthetic_pattern" => pattern_name = Some(value.to_string()),
                "synthetic_period" => period = Some(num(key, value)?),
                "synthetic_pattern_size" => pattern_size = Some(num(key, value)?),
                "synthetic_entities" => synth.entities = num(key, value)?,
                "synthetic_relations" => synth.relations = num(key, value)?,
                "synthetic_timestamps" => synth.timestamps = num(key, value)?,
                "synthetic_seed" => synth.seed = num(key, value)?,
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                "dim" => t.model.dim = num(key, value)?,
                "num_layers" => t.model.num_layers = num(key, value)?,
                "activation" => t.model.activation = value.parse()?,
                "jump_weight" => t.model.jump_weight = num(key, value)?,
                "decoder" => t.model.decoder = value.parse()?,
                "history" => t.encoder.history = num(key, value)?,
                "steps_per_interval" => t.encoder.solver.steps_per_interval = num(key, value)?,
                "chebyshev_nodes" => t.encoder.solver.chebyshev_nodes = num(key, value)?,
                "backward_mode" => t.encoder.solver.backward_mode = value.parse()?,
                "learning_rate" => t.learning_rate = num(key, value)?,
                "epochs" => t.epochs = num(key, value)?,
                "batch_size" => t.batch_size = num(key, value)?,
                "seed" => t.seed = num(key, value)?,
                "eval_setting" => cfg.eval_setting = value.parse()?,
                "eval_subset" => cfg.eval_subset = value.parse()?,
                _ => return Err(Error::Config(format!("unknown key {key:?} on line {}", i + 1))),
            }
        }
        if let Some(name) = pattern_name {
            synth.pattern = PatternSpec::with_defaults(&name, synth.entities)?;
        }
        match (&mut synth.pattern, period, pattern_size) {
            (PatternSpec::Periodic { period: p }, Some(v), _) => *p = v,
            (_, Some(_), _) => return Err(Error::Config("synthetic_period only applies to the periodic pattern".into())),
            _ => {}
        }
        match (&mut synth.pattern, pattern_size) {
            (PatternSpec::JumpConsequence { triggers_per_step: n }, Some(v))
            | (PatternSpec::Random { events_per_step: n }, Some(v)) => *n = v,
            (PatternSpec::Periodic { .. }, Some(_)) => {
                return Err(Error::Config("synthetic_pattern_size does not apply to the periodic pattern".into()))
            }
            _ => {}
        }
        cfg.data = match dir {
            Some(path) => {
                if seen.iter().any(|k| k.starts_with("synthetic_")) {
                    return Err(Error::Config("dataset_dir and synthetic_* keys are exclusive".into()));
                }
                DataSource::Directory { path, time_unit }
            }
            None if time_unit.is_some() => return Err(Error::Config("time_unit needs dataset_dir".into())),
            None => match (&cfg.data, seen.iter().any(|k| k.starts_with("synthetic_"))) {
                (DataSource::Directory { .. }, false) => cfg.data.clone(),
                _ => DataSource::Synthetic(synth),
            },
        };
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: RunConfig) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, base)
    }

    /// `output_dir`, unless the override variable is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    fn synthetic_spec(&self) -> SyntheticSpec {
        match &self.data {
            DataSource::Synthetic(s) => *s,
            DataSource::Directory { .. } => unreachable!("default config is synthetic"),
        }
    }

    pub fn to_text(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let mut kv = |k: &str, v: String| lines.push(format!("{k} = {v}"));
        match &self.data {
            DataSource::Directory { path, time_unit } => {
                kv("dataset_dir", path.display().to_string());
                if let Some(u) = time_unit {
                    kv("time_unit", u.to_string());
                }
            }
            DataSource::Synthetic(s) => {
                kv("synthetic_pattern", s.pattern.name().into());
                match s.pattern {
                    PatternSpec::Periodic { period } => kv("synthetic_period", period.to_string()),
                    PatternSpec::JumpConsequence { triggers_per_step: n } | PatternSpec::Random { events_per_step: n } => {
                        kv("synthetic_pattern_size", n.to_string())
                    }
                }
                kv("synthetic_entities", s.entities.to_string());
                kv("synthetic_relations", s.relations.to_string());
                kv("synthetic_timestamps", s.timestamps.to_string());
                kv("synthetic_seed", s.seed.to_string());
            }
        }
        let t = &self.train;
        kv("output_dir", self.output_dir.display().to_string());
        kv("dim", t.model.dim.to_string());
        kv("num_layers", t.model.num_layers.to_string());
        kv("activation", t.model.activation.name().into());
        kv("jump_weight", t.model.jump_weight.to_string());
        kv("decoder", t.model.decoder.name().into());
        kv("history", t.encoder.history.to_string());
        kv("steps_per_interval", t.encoder.solver.steps_per_interval.to_string());
        kv("chebyshev_nodes", t.encoder.solver.chebyshev_nodes.to_string());
        kv("backward_mode", t.encoder.solver.backward_mode.name().into());
        kv("learning_rate", t.learning_rate.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("seed", t.seed.to_string());
        kv("eval_setting", self.eval_setting.name().into());
        kv("eval_subset", self.eval_subset.label());
        lines.join("\n") + "\n"
    }
}
