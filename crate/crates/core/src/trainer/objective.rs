//! Forward and backward pass of the full training objective over one batch.

use std::collections::HashMap;

use crate::data::TrainBatch;
use crate::embedding::EmbeddingStore;
use crate::interest::{assign_hard, assign_soft, fuse, hard_interests, soft_interests, split_sequence, Gru};
use crate::linalg::{axpy, dot, Matrix};
use crate::losses::{orthogonality, sampled_softmax, total_loss, uniformity, uniqueness, CategoryMass, LossBreakdown, LossError, LossWeights};
use crate::Stage;

/// One instance expressed in batch-local item rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalInstance {
    pub history: Vec<usize>,
    /// Positive first, then the unmasked shared negatives.
    pub candidates: Vec<usize>,
}

/// A batch gathered into a dense local item table.
#[derive(Debug, Clone)]
pub struct BatchProblem {
    pub items: Matrix,
    pub instances: Vec<LocalInstance>,
    /// Local row → catalog index.
    pub global: Vec<usize>,
}

impl BatchProblem {
    pub fn gather(store: &EmbeddingStore, batch: &TrainBatch) -> Self {
        let mut local: HashMap<usize, usize> = HashMap::new();
        let mut global = Vec::new();
        let mut slot = |item: usize| {
            *local.entry(item).or_insert_with(|| {
                global.push(item);
                global.len() - 1
            })
        };
        let instances: Vec<LocalInstance> = (0..batch.len())
            .map(|i| LocalInstance {
                history: batch.instances[i].history.iter().map(|&it| slot(it)).collect(),
                candidates: batch.candidates(i).into_iter().map(&mut slot).collect(),
            })
            .collect();
        let d = store.dim();
        let mut items = Matrix::zeros(global.len(), d);
        for (r, &g) in global.iter().enumerate() {
            for (dst, &src) in items.row_mut(r).iter_mut().zip(store.item(g)) {
                *dst = src as f64;
            }
        }
        Self { items, instances, global }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub epsilon: f64,
    pub weights: LossWeights,
    pub stage: Stage,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// One row per local item of the batch.
    pub items: Matrix,
    pub categories: Matrix,
    /// All zero in the pre-train stage.
    pub gru: Gru,
}

fn rows_of(items: &Matrix, idx: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(idx.len(), items.cols());
    for (r, &i) in idx.iter().enumerate() {
        m.row_mut(r).copy_from_slice(items.row(i));
    }
    m
}

/// Batch loss: mean main loss over instances, orthogonality of
/// `categories`, uniformity of the batch's assignment mass, and (fine-tune
/// only) mean uniqueness over instances. Returns the breakdown and the
/// gradient of the weighted total.
pub fn batch_objective(
    categories: &Matrix,
    gru: &Gru,
    problem: &BatchProblem,
    cfg: &ObjectiveConfig,
) -> Result<(LossBreakdown, Gradients), LossError> {
    let k = categories.rows();
    let d = categories.cols();
    let eps = cfg.epsilon;
    let b = problem.instances.len().max(1) as f64;
    let finetune = cfg.stage == Stage::Finetune;

    let mut grads = Gradients {
        items: Matrix::zeros(problem.items.rows(), d),
        categories: Matrix::zeros(k, d),
        gru: Gru::zeros(d),
    };

    let mut main_total = 0.0;
    let mut unique_total = 0.0;
    // per instance: (assignment, dL/da accumulated so far)
    let mut pending = Vec::with_capacity(problem.instances.len());

    for inst in &problem.instances {
        let x = rows_of(&problem.items, &inst.history);
        let assign = assign_soft(categories, &x, eps);
        let (soft, _) = soft_interests(&assign, &x);

        let (hard, labels_valid) = if finetune {
            let labels = assign_hard(&assign);
            let subs = split_sequence(&labels, k);
            (Some((hard_interests(gru, &x, &subs), subs)), true)
        } else {
            (None, false)
        };
        let fused = match &hard {
            Some((h, _)) => fuse(&soft, &h.hard, &h.valid, cfg.stage),
            None => soft.clone(),
        };
        debug_assert!(labels_valid == finetune);

        let cands = rows_of(&problem.items, &inst.candidates);
        let main = sampled_softmax(&fused, &cands, eps)?;
        main_total += main.value;

        // candidate rows
        for (r, &c) in inst.candidates.iter().enumerate() {
            axpy(1.0 / b, main.grad_candidates.row(r), grads.items.row_mut(c));
        }

        // dL/du → dL/dp, dL/dq
        let mut d_soft = main.grad_interests.clone();
        if let Some((h, subs)) = &hard {
            for j in 0..k {
                if !h.valid[j] {
                    continue;
                }
                d_soft.row_mut(j).iter_mut().for_each(|g| *g *= 0.5);
                let dq: Vec<f64> = main.grad_interests.row(j).iter().map(|g| 0.5 * g / b).collect();
                let trace = h.traces[j].as_ref().expect("valid subsequence has a trace");
                let inputs: Vec<&[f64]> = subs[j].iter().map(|&pos| x.row(pos)).collect();
                let mut dx = vec![vec![0.0; d]; inputs.len()];
                gru.backward(trace, &inputs, &dq, &mut grads.gru, &mut dx);
                for (pos, g) in subs[j].iter().zip(&dx) {
                    axpy(1.0, g, grads.items.row_mut(inst.history[*pos]));
                }
            }
        }

        // p_j = Σ_l a_lj x_l
        let n = x.rows();
        let mut d_assign = Matrix::zeros(n, k);
        for l in 0..n {
            for j in 0..k {
                let dp = d_soft.row(j);
                d_assign[(l, j)] = dot(dp, x.row(l)) / b;
                axpy(assign.probs[(l, j)] / b, dp, grads.items.row_mut(inst.history[l]));
            }
        }

        if finetune {
            let (u, du) = uniqueness(&assign.probs);
            unique_total += u;
            d_assign.add_scaled(cfg.weights.unique / b, &du);
        }
        pending.push((x, assign, d_assign));
    }

    let mass = CategoryMass::from_assignments(k, pending.iter().map(|(_, a, _)| &a.probs));
    let (unif, d_mass) = uniformity(&mass)?;
    let (orth, d_orth) = orthogonality(categories);
    grads.categories.add_scaled(cfg.weights.orth, &d_orth);

    for ((x, assign, mut d_assign), inst) in pending.into_iter().zip(&problem.instances) {
        for l in 0..x.rows() {
            for j in 0..k {
                d_assign[(l, j)] += cfg.weights.unif * d_mass[j];
            }
            // softmax backward, then through r_lj = g_jᵀ x_l / ε
            let a = assign.probs.row(l);
            let da = d_assign.row(l);
            let inner = dot(a, da);
            for j in 0..k {
                let raw = assign.coords[(l, j)];
                if !(-1.0..=1.0).contains(&raw) {
                    continue;
                }
                let dr = a[j] * (da[j] - inner) / eps;
                if dr == 0.0 {
                    continue;
                }
                axpy(dr, x.row(l), grads.categories.row_mut(j));
                axpy(dr, categories.row(j), grads.items.row_mut(inst.history[l]));
            }
        }
    }

    let parts = total_loss(main_total / b, orth, unif, unique_total / b, &cfg.weights, cfg.stage);
    Ok((parts, grads))
}
