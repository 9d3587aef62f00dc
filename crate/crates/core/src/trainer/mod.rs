//! Two-stage training: soft-interest pre-training followed by fine-tuning
//! with hard interests, each stopped early on validation Recall@200.

mod adam;
mod objective;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{make_batch, sample_instance, DataError, DatasetSplit, InteractedItems, SamplingConfig};
use crate::embedding::{init, Checkpoint, EmbeddingError, EmbeddingStore, GruParams};
use crate::eval::evaluate;
use crate::interest::{Gru, InterestEncoder};
use crate::linalg::Matrix;
use crate::losses::{LossBreakdown, LossError, LossWeights};
use crate::retrieval::RetrievalError;
use crate::Stage;

pub use adam::{adam_step, adam_step_rows, AdamConfig, AdamState, Moments};
pub use objective::{batch_objective, BatchProblem, Gradients, LocalInstance, ObjectiveConfig};

/// Cutoff used for model selection.
pub const SELECTION_K: usize = 200;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub n_interests: usize,
    pub batch_size: usize,
    pub epsilon: f64,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub patience: usize,
    pub max_epochs: usize,
    pub sampling: SamplingConfig,
    /// Training instances drawn from each sequence per epoch.
    pub samples_per_sequence: usize,
    pub seed: u64,
    pub skip_pretrain: bool,
    pub skip_finetune: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            n_interests: 4,
            batch_size: 1024,
            epsilon: 0.1,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            patience: 5,
            max_epochs: 100,
            sampling: SamplingConfig::default(),
            samples_per_sequence: 1,
            seed: 42,
            skip_pretrain: false,
            skip_finetune: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.n_interests == 0 {
            return bad("k must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        let w = &self.weights;
        if [w.orth, w.unif, w.unique].iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return bad("loss weights must be non-negative");
        }
        if !(self.adam.learning_rate > 0.0 && self.adam.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || self.adam.eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive");
        }
        if self.patience == 0 || self.max_epochs == 0 || self.samples_per_sequence == 0 {
            return bad("patience, max_epochs and samples_per_sequence must be positive");
        }
        if self.sampling.min_history == 0 || self.sampling.max_history == 0 {
            return bad("min_history and max_history must be positive");
        }
        if self.sampling.future_window == Some(0) {
            return bad("future_window must be positive");
        }
        if self.skip_pretrain && self.skip_finetune {
            return bad("cannot skip both stages");
        }
        Ok(())
    }

    fn objective(&self, stage: Stage) -> ObjectiveConfig {
        ObjectiveConfig { epsilon: self.epsilon, weights: self.weights, stage }
    }
}

/// Epoch-mean losses and the validation score that closed the epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub val_recall: f64,
    pub batches: usize,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "stage,epoch,main,orth,unif,unique,total,val_recall200";

    pub fn to_csv_line(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.stage, self.epoch, l.main, l.orth, l.unif, l.unique, l.total, self.val_recall
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub stage: Stage,
    pub epoch: usize,
    pub best_recall: f64,
    pub best_epoch: usize,
    pub since_improvement: usize,
    pub adam: AdamState,
    pub history: Vec<EpochRecord>,
}

/// Parameters being trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub store: EmbeddingStore,
    pub gru: GruParams,
}

impl Model {
    pub fn init(catalog_size: usize, cfg: &TrainConfig) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (store, gru) = init(catalog_size, cfg.dim, cfg.n_interests, &mut rng)?;
        Ok(Self { store, gru })
    }

    pub fn encoder(&self, epsilon: f64, stage: Stage) -> InterestEncoder {
        InterestEncoder::new(&self.store, &self.gru, epsilon, stage)
    }

    pub fn into_checkpoint(self, stage: Stage, optimizer: Option<AdamState>) -> Checkpoint {
        Checkpoint { stage, store: self.store, gru: self.gru, optimizer }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        Self { store: ckpt.store, gru: ckpt.gru }
    }
}

fn non_finite(losses: &LossBreakdown) -> bool {
    ![losses.main, losses.orth, losses.unif, losses.unique, losses.total].iter().all(|x| x.is_finite())
}

/// One optimizer step on `problem`. Item rows present in the batch, all
/// category rows and (fine-tune only) the GRU are updated, then item and
/// category rows are projected back onto the unit sphere.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    problem: &BatchProblem,
    cfg: &TrainConfig,
    stage: Stage,
) -> Result<LossBreakdown, TrainError> {
    let k = model.store.n_categories();
    let d = model.store.dim();
    let categories = Matrix::from_f32(k, d, model.store.categories());
    let gru = Gru::from_params(&model.gru);
    let (losses, grads) = batch_objective(&categories, &gru, problem, &cfg.objective(stage))?;
    if non_finite(&losses) {
        return Err(TrainError::Divergence(format!("non-finite loss at step {}: {losses:?}", adam.step + 1)));
    }

    adam.step += 1;
    let t = adam.step;
    adam_step_rows(model.store.items_mut(), grads.items.as_slice(), &problem.global, d, &mut adam.items, t, &cfg.adam)?;
    adam_step(model.store.categories_mut(), grads.categories.as_slice(), &mut adam.categories, t, &cfg.adam)?;
    if stage == Stage::Finetune {
        for ((param, grad), m) in model.gru.tensors_mut().into_iter().zip(grads.gru.tensors()).zip(adam.gru.iter_mut()) {
            adam_step(param, grad, m, t, &cfg.adam)?;
        }
    }
    model.store.renormalize_items(problem.global.iter().copied())?;
    model.store.renormalize_categories()?;
    Ok(losses)
}

/// Validation Recall@200 of `model` served as `stage`.
pub fn validation_recall(model: &Model, split: &DatasetSplit, cfg: &TrainConfig, stage: Stage) -> Result<f64, TrainError> {
    let encoder = model.encoder(cfg.epsilon, stage);
    let report = evaluate(&encoder, &model.store, &split.val, &[SELECTION_K], cfg.sampling.max_history)?;
    if report.n_users == 0 {
        return Err(TrainError::Config("validation split has no users with both history and truth".into()));
    }
    Ok(report.recall(SELECTION_K).unwrap_or(0.0))
}

/// Train one stage until validation Recall@200 fails to improve for
/// `patience` consecutive epochs or `max_epochs` is reached. On return
/// `model` holds the best parameters seen.
pub fn run_stage(
    model: &mut Model,
    split: &DatasetSplit,
    interacted: &InteractedItems,
    cfg: &TrainConfig,
    stage: Stage,
    rng: &mut ChaCha8Rng,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainState, TrainError> {
    let store = &model.store;
    let mut state = TrainState {
        stage,
        epoch: 0,
        best_recall: f64::NEG_INFINITY,
        best_epoch: 0,
        since_improvement: 0,
        adam: AdamState::new(store.catalog_size(), store.n_categories(), store.dim()),
        history: Vec::new(),
    };
    let mut best: Option<(Model, AdamState)> = None;
    let mut order: Vec<usize> =
        (0..split.train.len()).flat_map(|u| std::iter::repeat_n(u, cfg.samples_per_sequence)).collect();

    while state.epoch < cfg.max_epochs {
        state.epoch += 1;
        order.shuffle(rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let instances: Vec<_> =
                chunk.iter().filter_map(|&u| sample_instance(&split.train[u], &cfg.sampling, rng)).collect();
            if instances.is_empty() {
                continue;
            }
            let batch = make_batch(instances, split.catalog_size(), interacted, rng)?;
            let problem = BatchProblem::gather(&model.store, &batch);
            let l = train_step(model, &mut state.adam, &problem, cfg, stage)?;
            sum.main += l.main;
            sum.orth += l.orth;
            sum.unif += l.unif;
            sum.unique += l.unique;
            sum.total += l.total;
            batches += 1;
        }
        if batches == 0 {
            return Err(TrainError::Config(format!(
                "no training sequence is longer than min_history={}",
                cfg.sampling.min_history
            )));
        }
        let n = batches as f64;
        let losses = LossBreakdown {
            main: sum.main / n,
            orth: sum.orth / n,
            unif: sum.unif / n,
            unique: sum.unique / n,
            total: sum.total / n,
        };
        let val_recall = validation_recall(model, split, cfg, stage)?;
        let record = EpochRecord { stage, epoch: state.epoch, losses, val_recall, batches };
        observer(&record);
        state.history.push(record);

        if val_recall > state.best_recall {
            state.best_recall = val_recall;
            state.best_epoch = state.epoch;
            state.since_improvement = 0;
            best = Some((model.clone(), state.adam.clone()));
        } else {
            state.since_improvement += 1;
            if state.since_improvement >= cfg.patience {
                break;
            }
        }
    }
    if let Some((m, a)) = best {
        *model = m;
        state.adam = a;
    }
    Ok(state)
}

fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + stage as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best model of the last stage that ran, with its optimizer state.
    pub checkpoint: Checkpoint,
    pub stages: Vec<TrainState>,
}

impl TrainOutcome {
    pub fn history(&self) -> impl Iterator<Item = &EpochRecord> {
        self.stages.iter().flat_map(|s| s.history.iter())
    }
}

/// Initialize from `cfg.seed` and run the enabled stages in order.
pub fn train(
    split: &DatasetSplit,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let model = Model::init(split.catalog_size(), cfg)?;
    train_from(model, split, cfg, observer)
}

/// Run the enabled stages starting from `model`.
pub fn train_from(
    mut model: Model,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if model.store.n_categories() != cfg.n_interests || model.store.dim() != cfg.dim {
        return Err(TrainError::Config(format!(
            "model has k={}, d={} but config asks for k={}, d={}",
            model.store.n_categories(),
            model.store.dim(),
            cfg.n_interests,
            cfg.dim
        )));
    }
    if model.store.catalog_size() != split.catalog_size() {
        return Err(TrainError::Config(format!(
            "model covers {} items but the dataset has {}",
            model.store.catalog_size(),
            split.catalog_size()
        )));
    }
    let interacted = InteractedItems::from_split(split);
    let mut stages = Vec::new();
    for stage in [Stage::Pretrain, Stage::Finetune] {
        let skip = match stage {
            Stage::Pretrain => cfg.skip_pretrain,
            Stage::Finetune => cfg.skip_finetune,
        };
        if skip {
            continue;
        }
        let mut rng = stage_rng(cfg.seed, stage);
        stages.push(run_stage(&mut model, split, &interacted, cfg, stage, &mut rng, observer)?);
    }
    let last = stages.last().expect("at least one stage runs");
    let (stage, adam) = (last.stage, last.adam.clone());
    Ok(TrainOutcome { checkpoint: model.into_checkpoint(stage, Some(adam)), stages })
}
