//! Top-K candidate retrieval by maximum inner product over a user's
//! interests.
//!
//! An item's serving score is `max_j vᵀu_j`; it is attributed to the
//! interest attaining that maximum (lowest index on ties). Ranking is by
//! score descending, then item index ascending.

use std::cmp::Ordering;
use std::collections::HashSet;

use thiserror::Error;

use crate::embedding::EmbeddingStore;
use crate::linalg::{dot_mixed, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("K must be at least 1")]
    ZeroK,
    #[error("no interests to retrieve with")]
    NoInterests,
    #[error("dimension mismatch: {what} has {found}, expected {expected}")]
    Dimension { what: &'static str, found: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
    /// Interest each returned item is attributed to.
    pub attribution: Vec<usize>,
    pub per_interest_counts: Vec<usize>,
    /// Fewer than K items were available after exclusion.
    pub truncated: bool,
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    item: usize,
    score: f64,
    interest: usize,
}

fn rank_order(a: &Scored, b: &Scored) -> Ordering {
    b.score.total_cmp(&a.score).then(a.item.cmp(&b.item))
}

/// Best interest score of `item` and the interest that attains it.
pub fn score_item(item: &[f32], interests: &Matrix) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for j in 0..interests.rows() {
        let s = dot_mixed(item, interests.row(j));
        if s > best.0 {
            best = (s, j);
        }
    }
    best
}

fn check_query(store_dim: usize, interests: &Matrix, top_k: usize) -> Result<(), RetrievalError> {
    if top_k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if interests.rows() == 0 {
        return Err(RetrievalError::NoInterests);
    }
    if interests.cols() != store_dim {
        return Err(RetrievalError::Dimension { what: "interests", found: interests.cols(), expected: store_dim });
    }
    Ok(())
}

fn top_k_of(mut scored: Vec<Scored>, top_k: usize) -> Vec<Scored> {
    if scored.len() > top_k {
        scored.select_nth_unstable_by(top_k - 1, rank_order);
        scored.truncate(top_k);
    }
    scored.sort_unstable_by(rank_order);
    scored
}

fn finish(ranked: Vec<Scored>, n_interests: usize, top_k: usize) -> RetrievalResult {
    let mut per_interest_counts = vec![0; n_interests];
    for s in &ranked {
        per_interest_counts[s.interest] += 1;
    }
    RetrievalResult {
        truncated: ranked.len() < top_k,
        items: ranked.iter().map(|s| s.item).collect(),
        scores: ranked.iter().map(|s| s.score).collect(),
        attribution: ranked.iter().map(|s| s.interest).collect(),
        per_interest_counts,
    }
}

/// Exhaustive scan of the catalog, excluding `history`.
pub fn retrieve(
    store: &EmbeddingStore,
    interests: &Matrix,
    history: &[usize],
    top_k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    check_query(store.dim(), interests, top_k)?;
    let exclude: HashSet<usize> = history.iter().copied().collect();
    let scored: Vec<Scored> = (0..store.catalog_size())
        .filter(|i| !exclude.contains(i))
        .map(|item| {
            let (score, interest) = score_item(store.item(item), interests);
            Scored { item, score, interest }
        })
        .collect();
    Ok(finish(top_k_of(scored, top_k), interests.rows(), top_k))
}

/// A per-interest candidate generator.
///
/// `search` returns up to `k` `(item, score)` pairs for one query vector,
/// skipping `exclude`, ordered by score descending then item ascending.
/// Exact implementations return the true top `k`; approximate ones must
/// document how often they miss a true top-`k` item.
pub trait CandidateIndex: Send + Sync {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    fn search(&self, query: &[f64], k: usize, exclude: &HashSet<usize>) -> Vec<(usize, f64)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Brute-force inner-product index over a frozen copy of the item table.
#[derive(Debug, Clone)]
pub struct ExactIndex {
    dim: usize,
    items: Vec<f32>,
}

pub fn build_index(store: &EmbeddingStore) -> ExactIndex {
    ExactIndex { dim: store.dim(), items: store.items().to_vec() }
}

impl CandidateIndex for ExactIndex {
    fn len(&self) -> usize {
        self.items.len() / self.dim
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn search(&self, query: &[f64], k: usize, exclude: &HashSet<usize>) -> Vec<(usize, f64)> {
        let scored: Vec<Scored> = self
            .items
            .chunks_exact(self.dim)
            .enumerate()
            .filter(|(i, _)| !exclude.contains(i))
            .map(|(item, row)| Scored { item, score: dot_mixed(row, query), interest: 0 })
            .collect();
        if k == 0 {
            return Vec::new();
        }
        top_k_of(scored, k).into_iter().map(|s| (s.item, s.score)).collect()
    }
}

/// Union of the per-interest pools, each of size `per_interest_k`
/// (defaults to `top_k`).
pub fn candidate_pool(
    index: &dyn CandidateIndex,
    interests: &Matrix,
    history: &[usize],
    per_interest_k: usize,
) -> Vec<usize> {
    let exclude: HashSet<usize> = history.iter().copied().collect();
    let mut pool: Vec<usize> = (0..interests.rows())
        .flat_map(|j| index.search(interests.row(j), per_interest_k, &exclude))
        .map(|(item, _)| item)
        .collect();
    pool.sort_unstable();
    pool.dedup();
    pool
}

/// Fetch `per_interest_k` candidates per interest from `index`, then
/// re-score the merged pool exactly against `store` and keep the top K.
pub fn index_retrieve(
    index: &dyn CandidateIndex,
    store: &EmbeddingStore,
    interests: &Matrix,
    history: &[usize],
    top_k: usize,
    per_interest_k: Option<usize>,
) -> Result<RetrievalResult, RetrievalError> {
    check_query(store.dim(), interests, top_k)?;
    if index.len() != store.catalog_size() {
        return Err(RetrievalError::Dimension { what: "index", found: index.len(), expected: store.catalog_size() });
    }
    if index.dim() != store.dim() {
        return Err(RetrievalError::Dimension { what: "index dim", found: index.dim(), expected: store.dim() });
    }
    let pool = candidate_pool(index, interests, history, per_interest_k.unwrap_or(top_k));
    let scored: Vec<Scored> = pool
        .into_iter()
        .map(|item| {
            let (score, interest) = score_item(store.item(item), interests);
            Scored { item, score, interest }
        })
        .collect();
    Ok(finish(top_k_of(scored, top_k), interests.rows(), top_k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_store() -> EmbeddingStore {
        EmbeddingStore::from_parts(2, 1, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0], vec![1.0, 0.0])
    }

    #[test]
    fn ranks_by_inner_product() {
        let u = Matrix::from_rows(&[[1.0, 0.0]]);
        let r = retrieve(&toy_store(), &u, &[], 3).unwrap();
        assert_eq!(r.items, vec![0, 1, 2]);
        assert_eq!(r.scores, vec![1.0, 0.0, -1.0]);
        assert_eq!(r.per_interest_counts, vec![3]);
        assert!(!r.truncated);
    }

    #[test]
    fn history_is_excluded() {
        let u = Matrix::from_rows(&[[1.0, 0.0]]);
        let r = retrieve(&toy_store(), &u, &[0], 3).unwrap();
        assert_eq!(r.items, vec![1, 2]);
        assert!(r.truncated);
    }

    #[test]
    fn ties_break_by_item_index() {
        let store = EmbeddingStore::from_parts(2, 1, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0]);
        let u = Matrix::from_rows(&[[1.0, 0.0]]);
        assert_eq!(retrieve(&store, &u, &[], 2).unwrap().items, vec![0, 1]);
    }

    #[test]
    fn max_merge_attributes_to_best_interest() {
        let u = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]);
        let r = retrieve(&toy_store(), &u, &[], 3).unwrap();
        assert_eq!(r.items, vec![1, 0, 2]);
        assert_eq!(r.scores, vec![2.0, 1.0, 0.0]);
        assert_eq!(r.attribution, vec![1, 0, 1]);
        assert_eq!(r.per_interest_counts, vec![1, 2]);
    }

    #[test]
    fn bad_queries() {
        let u = Matrix::from_rows(&[[1.0, 0.0]]);
        assert_eq!(retrieve(&toy_store(), &u, &[], 0), Err(RetrievalError::ZeroK));
        assert_eq!(retrieve(&toy_store(), &Matrix::zeros(0, 2), &[], 1), Err(RetrievalError::NoInterests));
    }

    #[test]
    fn stale_index_rejected() {
        let index = build_index(&toy_store());
        let bigger = EmbeddingStore::from_parts(2, 1, vec![1.0; 8], vec![1.0, 0.0]);
        let u = Matrix::from_rows(&[[1.0, 0.0]]);
        assert!(matches!(
            index_retrieve(&index, &bigger, &u, &[], 1, None),
            Err(RetrievalError::Dimension { what: "index", .. })
        ));
    }

    #[test]
    fn exact_index_matches_scan() {
        let u = Matrix::from_rows(&[[0.3, 0.9], [1.0, -0.2]]);
        let store = toy_store();
        let index = build_index(&store);
        for k in 1..=3 {
            assert_eq!(index_retrieve(&index, &store, &u, &[1], k, None).unwrap(), retrieve(&store, &u, &[1], k).unwrap());
        }
    }
}
