//! Per-user interest extraction: soft assignment of history items to
//! hyper-categories, soft interests, hard routing into subsequences,
//! GRU-encoded hard interests and their fusion.

mod gru;

pub use gru::{Gru, GruStep, GruTrace};

use crate::embedding::{EmbeddingStore, GruParams};
use crate::linalg::{argmax, axpy, dot, Matrix};
use crate::Stage;

/// Soft assignment of each history item to each hyper-category.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    /// `|s| × k` raw cosines `g_jᵀ v_l` (unclamped).
    pub coords: Matrix,
    /// `|s| × k` row-stochastic assignment probabilities.
    pub probs: Matrix,
    pub epsilon: f64,
}

impl AssignmentMatrix {
    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    pub fn n_categories(&self) -> usize {
        self.probs.cols()
    }
}

/// Row-wise softmax of `coords / epsilon`, with coordinates clamped to
/// `[-1, 1]` and the row maximum subtracted before exponentiation.
pub fn softmax_assign(coords: &Matrix, epsilon: f64) -> Matrix {
    let mut probs = Matrix::zeros(coords.rows(), coords.cols());
    let mut logits = vec![0.0; coords.cols()];
    for l in 0..coords.rows() {
        for (j, z) in logits.iter_mut().enumerate() {
            *z = coords[(l, j)].clamp(-1.0, 1.0) / epsilon;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row = probs.row_mut(l);
        let mut total = 0.0;
        for (p, z) in row.iter_mut().zip(&logits) {
            *p = (z - max).exp();
            total += *p;
        }
        row.iter_mut().for_each(|p| *p /= total);
    }
    probs
}

/// Assignment probabilities of the history `items` (`|s| × d`) over the
/// hyper-categories `categories` (`k × d`).
pub fn assign_soft(categories: &Matrix, items: &Matrix, epsilon: f64) -> AssignmentMatrix {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut coords = Matrix::zeros(items.rows(), categories.rows());
    for l in 0..items.rows() {
        for j in 0..categories.rows() {
            coords[(l, j)] = dot(categories.row(j), items.row(l));
        }
    }
    let probs = softmax_assign(&coords, epsilon);
    AssignmentMatrix { coords, probs, epsilon }
}

/// `p_j = Σ_l a_lj v_l` and `intensity_j = Σ_l a_lj`.
pub fn soft_interests(assign: &AssignmentMatrix, items: &Matrix) -> (Matrix, Vec<f64>) {
    let k = assign.n_categories();
    let mut soft = Matrix::zeros(k, items.cols());
    let mut intensity = vec![0.0; k];
    for l in 0..items.rows() {
        let v = items.row(l);
        for j in 0..k {
            let a = assign.probs[(l, j)];
            intensity[j] += a;
            axpy(a, v, soft.row_mut(j));
        }
    }
    (soft, intensity)
}

/// Most probable category per item; ties go to the lowest index.
pub fn assign_hard(assign: &AssignmentMatrix) -> Vec<usize> {
    assign.probs.iter_rows().map(argmax).collect()
}

/// Positions of the sequence routed to each category, in original order.
pub fn split_sequence(labels: &[usize], n_categories: usize) -> Vec<Vec<usize>> {
    let mut subs = vec![Vec::new(); n_categories];
    for (pos, &c) in labels.iter().enumerate() {
        subs[c].push(pos);
    }
    subs
}

#[derive(Debug, Clone)]
pub struct HardInterests {
    /// `k × d`; rows for empty subsequences are zero.
    pub hard: Matrix,
    pub valid: Vec<bool>,
    pub traces: Vec<Option<GruTrace>>,
}

/// Final GRU state over each non-empty subsequence (positions into `items`).
pub fn hard_interests(gru: &Gru, items: &Matrix, subsequences: &[Vec<usize>]) -> HardInterests {
    let d = items.cols();
    let k = subsequences.len();
    let mut hard = Matrix::zeros(k, d);
    let mut valid = vec![false; k];
    let mut traces = Vec::with_capacity(k);
    for (j, sub) in subsequences.iter().enumerate() {
        if sub.is_empty() {
            traces.push(None);
            continue;
        }
        let trace = gru.run(sub.iter().map(|&pos| items.row(pos)));
        hard.row_mut(j).copy_from_slice(&trace.output);
        valid[j] = true;
        traces.push(Some(trace));
    }
    HardInterests { hard, valid, traces }
}

/// Pre-train: `u = p`. Fine-tune: `u_j = (p_j + q_j) / 2` where `q_j` is
/// valid, otherwise `u_j = p_j`.
pub fn fuse(soft: &Matrix, hard: &Matrix, valid: &[bool], stage: Stage) -> Matrix {
    let mut fused = soft.clone();
    if stage == Stage::Pretrain {
        return fused;
    }
    for (j, &ok) in valid.iter().enumerate() {
        if ok {
            for (u, q) in fused.row_mut(j).iter_mut().zip(hard.row(j)) {
                *u = 0.5 * (*u + q);
            }
        }
    }
    fused
}

/// Everything derived from one user sequence.
#[derive(Debug, Clone)]
pub struct InterestSet {
    pub assignment: AssignmentMatrix,
    pub soft: Matrix,
    pub intensity: Vec<f64>,
    pub hard: Matrix,
    pub hard_valid: Vec<bool>,
    pub fused: Matrix,
    pub hard_labels: Vec<usize>,
    /// Positions (into the sequence) routed to each category.
    pub subsequences: Vec<Vec<usize>>,
}

/// Compute the full interest set for history rows `items`.
/// The hard path is only evaluated in the fine-tune stage.
pub fn compute_interests(categories: &Matrix, gru: &Gru, items: &Matrix, epsilon: f64, stage: Stage) -> InterestSet {
    let k = categories.rows();
    let assignment = assign_soft(categories, items, epsilon);
    let (soft, intensity) = soft_interests(&assignment, items);
    let hard_labels = assign_hard(&assignment);
    let subsequences = split_sequence(&hard_labels, k);
    let (hard, hard_valid) = match stage {
        Stage::Pretrain => (Matrix::zeros(k, items.cols()), vec![false; k]),
        Stage::Finetune => {
            let h = hard_interests(gru, items, &subsequences);
            (h.hard, h.valid)
        }
    };
    let fused = fuse(&soft, &hard, &hard_valid, stage);
    InterestSet { assignment, soft, intensity, hard, hard_valid, fused, hard_labels, subsequences }
}

/// Frozen, `f64`-promoted view of a store for serving many users.
#[derive(Debug, Clone)]
pub struct InterestEncoder {
    pub categories: Matrix,
    pub gru: Gru,
    pub epsilon: f64,
    pub stage: Stage,
}

impl InterestEncoder {
    pub fn new(store: &EmbeddingStore, gru: &GruParams, epsilon: f64, stage: Stage) -> Self {
        Self {
            categories: Matrix::from_f32(store.n_categories(), store.dim(), store.categories()),
            gru: Gru::from_params(gru),
            epsilon,
            stage,
        }
    }

    pub fn gather(store: &EmbeddingStore, history: &[usize]) -> Matrix {
        let d = store.dim();
        let mut m = Matrix::zeros(history.len(), d);
        for (r, &item) in history.iter().enumerate() {
            for (dst, &src) in m.row_mut(r).iter_mut().zip(store.item(item)) {
                *dst = src as f64;
            }
        }
        m
    }

    pub fn encode(&self, store: &EmbeddingStore, history: &[usize]) -> InterestSet {
        let items = Self::gather(store, history);
        compute_interests(&self.categories, &self.gru, &items, self.epsilon, self.stage)
    }

    /// Hard category of each catalog item (`argmax_j g_jᵀ v`).
    pub fn item_labels(&self, store: &EmbeddingStore) -> Vec<usize> {
        let all: Vec<usize> = (0..store.catalog_size()).collect();
        let items = Self::gather(store, &all);
        assign_hard(&assign_soft(&self.categories, &items, self.epsilon))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let mut m = Matrix::zeros(n, d);
        for r in 0..n {
            let row = m.row_mut(r);
            row.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            let n = crate::linalg::norm(row);
            row.iter_mut().for_each(|x| *x /= n);
        }
        m
    }

    #[test]
    fn single_category_gets_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = assign_soft(&unit_rows(1, 5, &mut rng), &unit_rows(6, 5, &mut rng), 0.1);
        assert!(a.probs.as_slice().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn two_category_sharpening_value() {
        let coords = Matrix::from_rows(&[[0.5, -0.5]]);
        let p = softmax_assign(&coords, 0.1);
        // exp(5)/(exp(5)+exp(-5)) = 1/(1+exp(-10))
        assert!((p[(0, 0)] - 0.999_954_602_131_297_6).abs() < 1e-12);
        assert!((p[(0, 1)] - 4.539_786_870_243_439e-5).abs() < 1e-15);
    }

    #[test]
    fn equal_coordinates_are_uniform() {
        let p = softmax_assign(&Matrix::from_rows(&[[0.3, 0.3, 0.3, 0.3]]), 0.1);
        assert!(p.as_slice().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn single_item_soft_interest_is_item() {
        let items = Matrix::from_rows(&[[0.6, 0.8]]);
        let cats = Matrix::from_rows(&[[1.0, 0.0]]);
        let (p, intensity) = soft_interests(&assign_soft(&cats, &items, 0.1), &items);
        assert_eq!(p.row(0), items.row(0));
        assert_eq!(intensity, vec![1.0]);
    }

    #[test]
    fn one_hot_assignment_sums_category_items() {
        let items = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]);
        let assign = AssignmentMatrix {
            coords: Matrix::zeros(3, 2),
            probs: Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]),
            epsilon: 0.1,
        };
        let (p, intensity) = soft_interests(&assign, &items);
        assert_eq!(p.row(0), &[1.5, 0.5]);
        assert_eq!(p.row(1), &[0.0, 1.0]);
        assert_eq!(intensity, vec![2.0, 1.0]);
    }

    #[test]
    fn soft_interests_match_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cats = unit_rows(3, 6, &mut rng);
        let items = unit_rows(5, 6, &mut rng);
        let assign = assign_soft(&cats, &items, 0.1);
        let (p, _) = soft_interests(&assign, &items);
        for j in 0..3 {
            for c in 0..6 {
                let mut acc = 0.0;
                for l in 0..5 {
                    acc += assign.probs[(l, j)] * items[(l, c)];
                }
                assert!((acc - p[(j, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hard_labels_and_ties() {
        let assign = AssignmentMatrix {
            coords: Matrix::zeros(2, 2),
            probs: Matrix::from_rows(&[[0.7, 0.3], [0.5, 0.5]]),
            epsilon: 0.1,
        };
        assert_eq!(assign_hard(&assign), vec![0, 0]);
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_sequence(&[1, 1, 1], 3), vec![vec![], vec![0, 1, 2], vec![]]);
        assert_eq!(split_sequence(&[0, 1, 0, 1], 2), vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn empty_subsequence_is_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let items = unit_rows(2, 3, &mut rng);
        let h = hard_interests(&Gru::zeros(3), &items, &[vec![0, 1], vec![]]);
        assert_eq!(h.valid, vec![true, false]);
        assert_eq!(h.hard.row(0), &[0.0; 3]);
    }

    #[test]
    fn fusion_rules() {
        let p = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.2, 0.2, 0.2]]);
        let q = Matrix::from_rows(&[[0.0, 1.0, 0.0], [9.0, 9.0, 9.0]]);
        let u = fuse(&p, &q, &[true, false], Stage::Finetune);
        assert_eq!(u.row(0), &[0.5, 0.5, 0.0]);
        assert_eq!(u.row(1), p.row(1));
        assert_eq!(fuse(&p, &q, &[true, true], Stage::Pretrain), p);
        assert_eq!(fuse(&p, &p, &[true, true], Stage::Finetune), p);
    }
}
