//! Loss terms with analytic gradients.
//!
//! * orthogonality of hyper-category embeddings,
//! * uniformity (coefficient of variation) of per-category assignment mass,
//! * uniqueness (cross-entropy against the most probable category),
//! * sampled-softmax main loss scored by the best-matching interest.

use thiserror::Error;

use crate::linalg::{argmax, axpy, dot, log_sum_exp, Matrix};
use crate::Stage;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("total category mass is zero; uniformity loss undefined")]
    DegenerateBatch,
    #[error("no negatives left after masking")]
    EmptyCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub orth: f64,
    pub unif: f64,
    pub unique: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { orth: 10.0, unif: 1.0, unique: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub main: f64,
    pub orth: f64,
    pub unif: f64,
    pub unique: f64,
    pub total: f64,
}

/// Weighted sum. The uniqueness term only counts in the fine-tune stage.
pub fn total_loss(main: f64, orth: f64, unif: f64, unique: f64, weights: &LossWeights, stage: Stage) -> LossBreakdown {
    let unique_weight = match stage {
        Stage::Pretrain => 0.0,
        Stage::Finetune => weights.unique,
    };
    LossBreakdown {
        main,
        orth,
        unif,
        unique,
        total: main + weights.orth * orth + weights.unif * unif + unique_weight * unique,
    }
}

/// `Σ_i Σ_{j≠i} (g_iᵀ g_j)²` over rows of `categories`; each unordered pair
/// is counted twice.
pub fn orthogonality(categories: &Matrix) -> (f64, Matrix) {
    let k = categories.rows();
    let mut grad = Matrix::zeros(k, categories.cols());
    let mut value = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let c = dot(categories.row(i), categories.row(j));
            value += 2.0 * c * c;
            // d/dg_i of 2c² = 4c g_j
            axpy(4.0 * c, categories.row(j), grad.row_mut(i));
            axpy(4.0 * c, categories.row(i), grad.row_mut(j));
        }
    }
    (value, grad)
}

/// Accumulated assignment mass per category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryMass {
    pub w: Vec<f64>,
    pub mu: f64,
    /// Population standard deviation.
    pub sigma: f64,
}

impl CategoryMass {
    pub fn new(w: Vec<f64>) -> Self {
        let k = w.len().max(1) as f64;
        let mu = w.iter().sum::<f64>() / k;
        let sigma = (w.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / k).sqrt();
        Self { w, mu, sigma }
    }

    /// Sum of the columns of every assignment matrix.
    pub fn from_assignments<'a, I: IntoIterator<Item = &'a Matrix>>(k: usize, probs: I) -> Self {
        let mut w = vec![0.0; k];
        for p in probs {
            for row in p.iter_rows() {
                axpy(1.0, row, &mut w);
            }
        }
        Self::new(w)
    }

    pub fn coefficient_of_variation(&self) -> Result<f64, LossError> {
        if self.mu <= 0.0 {
            return Err(LossError::DegenerateBatch);
        }
        Ok(self.sigma / self.mu)
    }
}

/// `σ_w / μ_w` and its gradient with respect to each `w_j`.
pub fn uniformity(mass: &CategoryMass) -> Result<(f64, Vec<f64>), LossError> {
    let value = mass.coefficient_of_variation()?;
    let k = mass.w.len() as f64;
    let (mu, sigma) = (mass.mu, mass.sigma);
    let grad = mass
        .w
        .iter()
        .map(|&wj| {
            // dσ/dw_j = (w_j − μ)/(kσ); at σ = 0 the subgradient 0 is used.
            let dsigma = if sigma > 0.0 { (wj - mu) / (k * sigma) } else { 0.0 };
            dsigma / mu - sigma / (mu * mu * k)
        })
        .collect();
    Ok((value, grad))
}

/// `(1/|s|) Σ_l −ln(max_j a_lj / Σ_j a_lj)` and its gradient w.r.t. `a`.
pub fn uniqueness(probs: &Matrix) -> (f64, Matrix) {
    let n = probs.rows();
    let mut grad = Matrix::zeros(n, probs.cols());
    if n == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / n as f64;
    let mut value = 0.0;
    for l in 0..n {
        let row = probs.row(l);
        let m = argmax(row);
        let total: f64 = row.iter().sum();
        value += -(row[m] / total).ln();
        let g = grad.row_mut(l);
        g.iter_mut().for_each(|x| *x = scale / total);
        g[m] -= scale / row[m];
    }
    (value * scale, grad)
}

#[derive(Debug, Clone)]
pub struct MainLoss {
    pub value: f64,
    /// Gradient w.r.t. each interest row.
    pub grad_interests: Matrix,
    /// Gradient w.r.t. each candidate row (row 0 is the positive).
    pub grad_candidates: Matrix,
    /// Interest that attained the max for each candidate.
    pub winners: Vec<usize>,
}

/// Sampled-softmax cross-entropy. Row 0 of `candidates` is the positive;
/// the rest are negatives. Each candidate is scored by its best interest,
/// `max_j vᵀu_j / ε`, and gradient flows only through that maximizer
/// (lowest index on ties).
pub fn sampled_softmax(interests: &Matrix, candidates: &Matrix, epsilon: f64) -> Result<MainLoss, LossError> {
    if candidates.rows() < 2 {
        return Err(LossError::EmptyCandidates);
    }
    let n = candidates.rows();
    let mut logits = Vec::with_capacity(n);
    let mut winners = Vec::with_capacity(n);
    let mut scores = vec![0.0; interests.rows()];
    for c in 0..n {
        for (j, s) in scores.iter_mut().enumerate() {
            *s = dot(candidates.row(c), interests.row(j));
        }
        let j = argmax(&scores);
        winners.push(j);
        logits.push(scores[j] / epsilon);
    }
    let lse = log_sum_exp(&logits);
    let value = lse - logits[0];

    let mut grad_interests = Matrix::zeros(interests.rows(), interests.cols());
    let mut grad_candidates = Matrix::zeros(n, candidates.cols());
    for c in 0..n {
        let coef = ((logits[c] - lse).exp() - if c == 0 { 1.0 } else { 0.0 }) / epsilon;
        let j = winners[c];
        axpy(coef, candidates.row(c), grad_interests.row_mut(j));
        axpy(coef, interests.row(j), grad_candidates.row_mut(c));
    }
    Ok(MainLoss { value, grad_interests, grad_candidates, winners })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_basis_has_zero_loss() {
        let g = Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]);
        let (v, grad) = orthogonality(&g);
        assert_eq!(v, 0.0);
        assert!(grad.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn duplicated_vector_counts_both_orders() {
        let g = Matrix::from_rows(&[[0.6, 0.8], [0.6, 0.8]]);
        assert!((orthogonality(&g).0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_category_orthogonality_is_empty_sum() {
        assert_eq!(orthogonality(&Matrix::from_rows(&[[0.6, 0.8]])).0, 0.0);
    }

    #[test]
    fn uniformity_examples() {
        assert_eq!(uniformity(&CategoryMass::new(vec![3.0, 3.0, 3.0])).unwrap().0, 0.0);
        let (v, _) = uniformity(&CategoryMass::new(vec![2.0, 4.0])).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(uniformity(&CategoryMass::new(vec![0.0, 0.0])), Err(LossError::DegenerateBatch));
    }

    #[test]
    fn uniformity_is_scale_invariant() {
        let a = uniformity(&CategoryMass::new(vec![1.0, 5.0, 2.5])).unwrap().0;
        let b = uniformity(&CategoryMass::new(vec![7.0, 35.0, 17.5])).unwrap().0;
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn uniqueness_examples() {
        let one_hot = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(uniqueness(&one_hot).0, 0.0);
        let half = Matrix::from_rows(&[[0.5, 0.5]]);
        assert!((uniqueness(&half).0 - std::f64::consts::LN_2).abs() < 1e-15);
        let uniform = Matrix::from_rows(&[[0.25; 4], [0.25; 4]]);
        assert!((uniqueness(&uniform).0 - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair_gives_ln2() {
        let u = Matrix::from_rows(&[[1.0, 0.0]]);
        let c = Matrix::from_rows(&[[0.0, 1.0], [0.0, -1.0]]);
        let loss = sampled_softmax(&u, &c, 0.1).unwrap();
        assert!((loss.value - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn dominant_positive_drives_loss_to_zero() {
        let u = Matrix::from_rows(&[[1.0, 0.0]]);
        let c = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]);
        assert!(sampled_softmax(&u, &c, 1e-3).unwrap().value < 1e-300);
    }

    #[test]
    fn positive_only_is_an_error() {
        let u = Matrix::from_rows(&[[1.0, 0.0]]);
        let c = Matrix::from_rows(&[[1.0, 0.0]]);
        assert!(matches!(sampled_softmax(&u, &c, 0.1), Err(LossError::EmptyCandidates)));
    }

    #[test]
    fn stage_gates_uniqueness() {
        let w = LossWeights::default();
        let pre = total_loss(1.0, 0.1, 0.2, 5.0, &w, Stage::Pretrain);
        assert!((pre.total - (1.0 + 10.0 * 0.1 + 0.2)).abs() < 1e-12);
        let fine = total_loss(1.0, 0.1, 0.2, 5.0, &w, Stage::Finetune);
        assert!((fine.total - (1.0 + 1.0 + 0.2 + 5.0)).abs() < 1e-12);
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &w, Stage::Finetune).total, 0.0);
    }
}
