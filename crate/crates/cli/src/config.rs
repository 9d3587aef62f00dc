//! Flat `key = value` run configuration.
//!
//! Every key has a default; a file or `--set` may override any of them and
//! unknown keys are rejected. `to_text` writes every key so the echoed file
//! reproduces the run on its own.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use opal::data::{LogFormat, SyntheticSpec};
use opal::eval::DEFAULT_KS;
use opal::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub data: Option<PathBuf>,
    /// `None` picks the format from the file extension.
    pub format: Option<LogFormat>,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub user: Option<String>,
    pub day_length: i64,
    pub train: TrainConfig,
    pub synthetic: SyntheticSpec,
    pub ks: Vec<usize>,
    pub top_k: usize,
    pub shift: f64,
    pub split: EvalSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Val,
    Test,
}

impl Default for Config {
    fn default() -> Self {
        let synthetic = SyntheticSpec::default();
        Self {
            data: None,
            format: None,
            out: PathBuf::from("."),
            checkpoint: None,
            catalog: None,
            history: None,
            user: None,
            day_length: synthetic.day_length,
            train: TrainConfig::default(),
            synthetic,
            ks: DEFAULT_KS.to_vec(),
            top_k: 200,
            shift: 1.0,
            split: EvalSplit::Test,
        }
    }
}

pub const KEYS: &[&str] = &[
    "data",
    "format",
    "out",
    "checkpoint",
    "catalog",
    "history",
    "user",
    "day_length",
    "dim",
    "k",
    "batch_size",
    "epsilon",
    "lambda_o",
    "lambda_f",
    "lambda_q",
    "learning_rate",
    "beta1",
    "beta2",
    "adam_eps",
    "patience",
    "max_epochs",
    "min_history",
    "future_window",
    "max_history",
    "samples_per_sequence",
    "seed",
    "skip_pretrain",
    "skip_finetune",
    "users",
    "items",
    "categories",
    "concentration",
    "min_len",
    "max_len",
    "days",
    "drift",
    "popularity_skew",
    "ks",
    "top_k",
    "shift",
    "split",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value.parse().map_err(|e| CliError::Config(format!("{key} = {value:?}: {e}")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        let s = &mut self.synthetic;
        match key {
            "data" => self.data = opt_path(value),
            "format" => {
                self.format = match value {
                    "" | "auto" => None,
                    v => Some(v.parse().map_err(|e| CliError::Config(format!("format: {e}")))?),
                }
            }
            "out" => self.out = PathBuf::from(value),
            "checkpoint" => self.checkpoint = opt_path(value),
            "catalog" => self.catalog = opt_path(value),
            "history" => self.history = opt_path(value),
            "user" => self.user = (!value.is_empty()).then(|| value.to_string()),
            "day_length" => {
                self.day_length = parse(key, value)?;
                s.day_length = self.day_length;
            }
            "dim" => t.dim = parse(key, value)?,
            "k" => t.n_interests = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epsilon" => t.epsilon = parse(key, value)?,
            "lambda_o" => t.weights.orth = parse(key, value)?,
            "lambda_f" => t.weights.unif = parse(key, value)?,
            "lambda_q" => t.weights.unique = parse(key, value)?,
            "learning_rate" => t.adam.learning_rate = parse(key, value)?,
            "beta1" => t.adam.beta1 = parse(key, value)?,
            "beta2" => t.adam.beta2 = parse(key, value)?,
            "adam_eps" => t.adam.eps = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "min_history" => t.sampling.min_history = parse(key, value)?,
            "future_window" => {
                t.sampling.future_window = match value {
                    "" | "all" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "max_history" => t.sampling.max_history = parse(key, value)?,
            "samples_per_sequence" => t.samples_per_sequence = parse(key, value)?,
            "seed" => {
                t.seed = parse(key, value)?;
                s.seed = t.seed;
            }
            "skip_pretrain" => t.skip_pretrain = parse(key, value)?,
            "skip_finetune" => t.skip_finetune = parse(key, value)?,
            "users" => s.n_users = parse(key, value)?,
            "items" => s.n_items = parse(key, value)?,
            "categories" => s.n_categories = parse(key, value)?,
            "concentration" => s.concentration = parse(key, value)?,
            "min_len" => s.min_len = parse(key, value)?,
            "max_len" => s.max_len = parse(key, value)?,
            "days" => s.n_days = parse(key, value)?,
            "drift" => s.drift = parse(key, value)?,
            "popularity_skew" => s.popularity_skew = parse(key, value)?,
            "ks" => {
                self.ks = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_, _>>()?;
                if self.ks.is_empty() || self.ks.contains(&0) {
                    return Err(CliError::Config("ks must be positive".into()));
                }
            }
            "top_k" => self.top_k = parse(key, value)?,
            "shift" => self.shift = parse(key, value)?,
            "split" => {
                self.split = match value {
                    "val" => EvalSplit::Val,
                    "test" => EvalSplit::Test,
                    other => return Err(CliError::Config(format!("split must be val or test, got {other:?}"))),
                }
            }
            other => return Err(CliError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let s = &self.synthetic;
        Some(match key {
            "data" => show_path(&self.data),
            "format" => match self.format {
                None => "auto".into(),
                Some(LogFormat::Csv) => "csv".into(),
                Some(LogFormat::Jsonl) => "jsonl".into(),
            },
            "out" => self.out.display().to_string(),
            "checkpoint" => show_path(&self.checkpoint),
            "catalog" => show_path(&self.catalog),
            "history" => show_path(&self.history),
            "user" => self.user.clone().unwrap_or_default(),
            "day_length" => self.day_length.to_string(),
            "dim" => t.dim.to_string(),
            "k" => t.n_interests.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "epsilon" => t.epsilon.to_string(),
            "lambda_o" => t.weights.orth.to_string(),
            "lambda_f" => t.weights.unif.to_string(),
            "lambda_q" => t.weights.unique.to_string(),
            "learning_rate" => t.adam.learning_rate.to_string(),
            "beta1" => t.adam.beta1.to_string(),
            "beta2" => t.adam.beta2.to_string(),
            "adam_eps" => t.adam.eps.to_string(),
            "patience" => t.patience.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "min_history" => t.sampling.min_history.to_string(),
            "future_window" => t.sampling.future_window.map_or("all".into(), |w| w.to_string()),
            "max_history" => t.sampling.max_history.to_string(),
            "samples_per_sequence" => t.samples_per_sequence.to_string(),
            "seed" => t.seed.to_string(),
            "skip_pretrain" => t.skip_pretrain.to_string(),
            "skip_finetune" => t.skip_finetune.to_string(),
            "users" => s.n_users.to_string(),
            "items" => s.n_items.to_string(),
            "categories" => s.n_categories.to_string(),
            "concentration" => s.concentration.to_string(),
            "min_len" => s.min_len.to_string(),
            "max_len" => s.max_len.to_string(),
            "days" => s.n_days.to_string(),
            "drift" => s.drift.to_string(),
            "popularity_skew" => s.popularity_skew.to_string(),
            "ks" => self.ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
            "top_k" => self.top_k.to_string(),
            "shift" => self.shift.to_string(),
            "split" => match self.split {
                EvalSplit::Val => "val".into(),
                EvalSplit::Test => "test".into(),
            },
            _ => return None,
        })
    }

    /// Apply `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Apply a `key=value` override from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k).unwrap_or_default())).collect()
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data.as_deref().ok_or_else(|| CliError::Usage("no interaction log given (--data or data = ...)".into()))
    }

    pub fn checkpoint_path(&self) -> Result<&Path, CliError> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Usage("no checkpoint given (--checkpoint or checkpoint = ...)".into()))
    }

    pub fn log_format(&self, path: &Path) -> LogFormat {
        self.format.unwrap_or_else(|| LogFormat::from_path(path))
    }
}
