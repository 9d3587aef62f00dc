//! Command-line front end: synthetic data generation, two-stage training,
//! evaluation, retrieval for one history and SPPMI diversity reports.

pub mod config;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use opal::data::{generate_synthetic, ingest, write_interactions_csv, write_labels_csv, DataError, EvalRecord};
use opal::eval::{diversity_summary, evaluate, retrieval_diversity, retrieve_for, sppmi, DiversitySummary};
use opal::trainer::EpochRecord;
use opal::{build_split, Checkpoint, DatasetSplit, EmbeddingError, InterestEncoder, RetrievalError, TrainError};
use thiserror::Error;

pub use config::Config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] EmbeddingError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("checkpoint does not match data: {0}")]
    Mismatch(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for everything that went
    /// wrong while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(DataError::InvalidSpec(_) | DataError::UnknownFormat(_)) => 1,
            CliError::Train(TrainError::Config(_)) => 1,
            CliError::Retrieval(RetrievalError::ZeroK) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Parser)]
#[command(name = "opal", version, about = "Multi-interest candidate matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted-category interaction log and its item labels.
    Generate(Common),
    /// Train on an interaction log; writes checkpoint, log and catalog.
    Train(Common),
    /// Recall@K / HitRate@K of a checkpoint on the val or test split.
    Evaluate(Common),
    /// Top-K items for one history file.
    Retrieve(Common),
    /// SPPMI matrix of one user's retrieval plus within/cross summary.
    Diversity(Common),
}

/// Options shared by every subcommand. Each flag is a shortcut for one
/// config key and is applied after `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub user: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long = "lambda-o")]
    pub lambda_o: Option<f64>,
    #[arg(long = "lambda-f")]
    pub lambda_f: Option<f64>,
    #[arg(long = "lambda-q")]
    pub lambda_q: Option<f64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "learning-rate")]
    pub learning_rate: Option<f64>,
    #[arg(long = "max-epochs")]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long = "top-k")]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long = "skip-pretrain")]
    pub skip_pretrain: bool,
    #[arg(long = "skip-finetune")]
    pub skip_finetune: bool,
}

impl Common {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    pub fn resolve(&self) -> Result<Config, CliError> {
        let mut cfg = Config::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags: [(&str, Option<String>); 21] = [
            ("data", path(&self.data)),
            ("out", path(&self.out)),
            ("checkpoint", path(&self.checkpoint)),
            ("catalog", path(&self.catalog)),
            ("history", path(&self.history)),
            ("user", self.user.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("k", self.k.map(|v| v.to_string())),
            ("dim", self.dim.map(|v| v.to_string())),
            ("epsilon", self.epsilon.map(|v| v.to_string())),
            ("lambda_o", self.lambda_o.map(|v| v.to_string())),
            ("lambda_f", self.lambda_f.map(|v| v.to_string())),
            ("lambda_q", self.lambda_q.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("max_epochs", self.max_epochs.map(|v| v.to_string())),
            ("patience", self.patience.map(|v| v.to_string())),
            ("top_k", self.top_k.map(|v| v.to_string())),
            ("split", self.split.clone()),
            ("skip_pretrain", self.skip_pretrain.then(|| "true".to_string())),
            ("skip_finetune", self.skip_finetune.then(|| "true".to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        Ok(cfg)
    }
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(c) => cmd_generate(&c.resolve()?, stdout),
        Command::Train(c) => cmd_train(&c.resolve()?, stdout),
        Command::Evaluate(c) => cmd_evaluate(&c.resolve()?, stdout),
        Command::Retrieve(c) => cmd_retrieve(&c.resolve()?, stdout),
        Command::Diversity(c) => cmd_diversity(&c.resolve()?, stdout),
    }
}

fn out_line(stdout: &mut dyn Write, line: &str) -> Result<(), CliError> {
    writeln!(stdout, "{line}").map_err(io_err(Path::new("<stdout>")))
}

fn prepare_out(cfg: &Config) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let path = cfg.out.join("config.txt");
    fs::write(&path, cfg.to_text()).map_err(io_err(&path))
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(io_err(path))
}

pub fn cmd_generate(cfg: &Config, stdout: &mut dyn Write) -> Result<(), CliError> {
    cfg.synthetic.validate()?;
    prepare_out(cfg)?;
    let data = generate_synthetic(&cfg.synthetic)?;
    let log = cfg.out.join("interactions.csv");
    let labels = cfg.out.join("labels.csv");
    write_interactions_csv(&log, &data.interactions)?;
    write_labels_csv(&labels, &data.labels)?;
    out_line(
        stdout,
        &format!(
            "wrote {} interactions to {} and {} labels to {}",
            data.interactions.len(),
            log.display(),
            data.labels.len(),
            labels.display()
        ),
    )
}

fn load_split(cfg: &Config) -> Result<DatasetSplit, CliError> {
    let path = cfg.data_path()?;
    let log = ingest(path, cfg.log_format(path))?;
    Ok(build_split(&log, cfg.day_length)?)
}

pub fn cmd_train(cfg: &Config, stdout: &mut dyn Write) -> Result<(), CliError> {
    cfg.train.validate()?;
    let split = load_split(cfg)?;
    prepare_out(cfg)?;
    write_file(&cfg.out.join("catalog.csv"), &catalog_csv(&split.catalog))?;

    let log_path = cfg.out.join("train_log.csv");
    let mut log = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    let mut write_err = None;
    let header = EpochRecord::CSV_HEADER;
    log.write_all(format!("{header}\n").as_bytes()).map_err(io_err(&log_path))?;
    out_line(stdout, header)?;
    let mut observer = |r: &EpochRecord| {
        let line = r.to_csv_line();
        if let Err(e) = writeln!(log, "{line}").and_then(|_| writeln!(stdout, "{line}")) {
            write_err.get_or_insert(e);
        }
    };
    let outcome = opal::train(&split, &cfg.train, &mut observer)?;
    if let Some(e) = write_err {
        return Err(CliError::Io { path: log_path, source: e });
    }
    let ckpt_path = cfg.out.join("checkpoint.opal");
    outcome.checkpoint.save(&ckpt_path)?;
    let best: Vec<String> = outcome
        .stages
        .iter()
        .map(|s| format!("{} best val recall@200 {:.4} at epoch {}", s.stage, s.best_recall, s.best_epoch))
        .collect();
    out_line(stdout, &format!("# {}; checkpoint {}", best.join("; "), ckpt_path.display()))
}

fn catalog_csv(catalog: &[String]) -> String {
    let mut out = String::from("index,item_id\n");
    for (i, id) in catalog.iter().enumerate() {
        out.push_str(&format!("{i},{id}\n"));
    }
    out
}

fn read_catalog(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    if lines.next() != Some("index,item_id") {
        return Err(CliError::Mismatch(format!("{} is not a catalog file", path.display())));
    }
    lines
        .enumerate()
        .map(|(n, line)| match line.split_once(',') {
            Some((i, id)) if i.parse() == Ok(n) => Ok(id.to_string()),
            _ => Err(CliError::Mismatch(format!("{}: bad catalog row {}", path.display(), n + 2))),
        })
        .collect()
}

/// Explicit `catalog`, else `catalog.csv` beside the checkpoint.
fn catalog_path(cfg: &Config) -> Result<Option<PathBuf>, CliError> {
    if let Some(p) = &cfg.catalog {
        return Ok(Some(p.clone()));
    }
    let beside = cfg.checkpoint_path()?.with_file_name("catalog.csv");
    Ok(beside.exists().then_some(beside))
}

fn load_checkpoint(cfg: &Config) -> Result<Checkpoint, CliError> {
    Ok(Checkpoint::load(cfg.checkpoint_path()?)?)
}

/// Checkpoint and split must describe the same catalog.
fn check_catalog(cfg: &Config, ckpt: &Checkpoint, split: &DatasetSplit) -> Result<(), CliError> {
    if ckpt.store.catalog_size() != split.catalog_size() {
        return Err(CliError::Mismatch(format!(
            "checkpoint has {} items, data has {}",
            ckpt.store.catalog_size(),
            split.catalog_size()
        )));
    }
    if let Some(path) = catalog_path(cfg)? {
        if read_catalog(&path)? != split.catalog {
            return Err(CliError::Mismatch(format!("item ids in {} differ from the data", path.display())));
        }
    }
    Ok(())
}

fn encoder(cfg: &Config, ckpt: &Checkpoint) -> InterestEncoder {
    InterestEncoder::new(&ckpt.store, &ckpt.gru, cfg.train.epsilon, ckpt.stage)
}

fn records<'a>(cfg: &Config, split: &'a DatasetSplit) -> &'a [EvalRecord] {
    match cfg.split {
        config::EvalSplit::Val => &split.val,
        config::EvalSplit::Test => &split.test,
    }
}

fn split_name(cfg: &Config) -> &'static str {
    match cfg.split {
        config::EvalSplit::Val => "val",
        config::EvalSplit::Test => "test",
    }
}

pub fn cmd_evaluate(cfg: &Config, stdout: &mut dyn Write) -> Result<(), CliError> {
    let ckpt = load_checkpoint(cfg)?;
    let split = load_split(cfg)?;
    check_catalog(cfg, &ckpt, &split)?;
    let report = evaluate(&encoder(cfg, &ckpt), &ckpt.store, records(cfg, &split), &cfg.ks, cfg.train.sampling.max_history)?;
    write!(stdout, "{}", report.to_csv(split_name(cfg))).map_err(io_err(Path::new("<stdout>")))
}

/// One item id per line, oldest first. An `item_id` header line, blank
/// lines and `#` comments are ignored.
fn read_history(path: &Path, catalog: &[String]) -> Result<Vec<usize>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let index: HashMap<&str, usize> = catalog.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut history = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let id = line.trim();
        if id.is_empty() || id.starts_with('#') || (n == 0 && id == "item_id") {
            continue;
        }
        let item = index
            .get(id)
            .ok_or_else(|| CliError::Mismatch(format!("{}:{}: unknown item {id:?}", path.display(), n + 1)))?;
        history.push(*item);
    }
    Ok(history)
}

pub fn cmd_retrieve(cfg: &Config, stdout: &mut dyn Write) -> Result<(), CliError> {
    let ckpt = load_checkpoint(cfg)?;
    let catalog_file = catalog_path(cfg)?
        .ok_or_else(|| CliError::Usage("no catalog given and none beside the checkpoint".into()))?;
    let catalog = read_catalog(&catalog_file)?;
    if catalog.len() != ckpt.store.catalog_size() {
        return Err(CliError::Mismatch(format!(
            "checkpoint has {} items, catalog has {}",
            ckpt.store.catalog_size(),
            catalog.len()
        )));
    }
    let history_path = cfg.history.as_deref().ok_or_else(|| CliError::Usage("no history file given (--history)".into()))?;
    let history = read_history(history_path, &catalog)?;
    if history.is_empty() {
        return Err(CliError::Usage(format!("{} holds no items", history_path.display())));
    }
    let res = retrieve_for(&encoder(cfg, &ckpt), &ckpt.store, &history, cfg.train.sampling.max_history, cfg.top_k)?;
    let mut out = String::from("rank,item_id,score,interest_id\n");
    for (r, ((&item, score), interest)) in res.items.iter().zip(&res.scores).zip(&res.attribution).enumerate() {
        out.push_str(&format!("{},{},{score:.6},{interest}\n", r + 1, catalog[item]));
    }
    stdout.write_all(out.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn summary_row(scope: &str, s: &DiversitySummary) -> String {
    let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    format!(
        "{scope},{},{},{},{},{}\n",
        f(s.within_interest),
        f(s.cross_interest),
        f(s.overall),
        s.within_pairs,
        s.cross_pairs
    )
}

/// Writes `sppmi.csv` for one user's top-K retrieval and `diversity.csv`
/// with that user's summary and the pair-pooled summary over the split.
pub fn cmd_diversity(cfg: &Config, stdout: &mut dyn Write) -> Result<(), CliError> {
    let ckpt = load_checkpoint(cfg)?;
    let split = load_split(cfg)?;
    check_catalog(cfg, &ckpt, &split)?;
    if cfg.shift.is_nan() || cfg.shift <= 0.0 {
        return Err(CliError::Config(format!("shift must be positive, got {}", cfg.shift)));
    }
    let enc = encoder(cfg, &ckpt);
    let recs = records(cfg, &split);
    let record = match &cfg.user {
        Some(id) => {
            let user = split.user_lookup().get(id.as_str()).copied();
            recs.iter()
                .find(|r| Some(r.user) == user)
                .ok_or_else(|| CliError::Usage(format!("user {id:?} has no {} record", split_name(cfg))))?
        }
        None => recs.first().ok_or_else(|| CliError::Usage(format!("the {} split is empty", split_name(cfg))))?,
    };
    let max_history = cfg.train.sampling.max_history;
    let res = retrieve_for(&enc, &ckpt.store, &record.history, max_history, cfg.top_k)?;
    let matrix = sppmi(&split.train, &res.items, cfg.shift);
    let user_summary = diversity_summary(&matrix, &res.attribution);
    let pooled = retrieval_diversity(&enc, &ckpt.store, &split.train, recs, cfg.top_k, max_history, cfg.shift)?;

    prepare_out(cfg)?;
    let matrix_path = cfg.out.join("sppmi.csv");
    write_file(&matrix_path, &matrix.to_csv(&split.catalog))?;
    let mut summary = String::from("scope,within_interest,cross_interest,overall,within_pairs,cross_pairs\n");
    summary.push_str(&summary_row(&format!("user:{}", split.users[record.user]), &user_summary));
    summary.push_str(&summary_row(&format!("all:{}", split_name(cfg)), &pooled));
    write_file(&cfg.out.join("diversity.csv"), &summary)?;
    stdout.write_all(summary.as_bytes()).map_err(io_err(Path::new("<stdout>")))?;
    out_line(stdout, &format!("# {}x{} matrix in {}", matrix.len(), matrix.len(), matrix_path.display()))
}
