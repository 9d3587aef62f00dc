//! Offline evaluation: Recall@K / HitRate@K, SPPMI co-occurrence analysis
//! of retrieval results, and planted-category recovery scores.

use std::collections::HashSet;

use pathfinding::kuhn_munkres::kuhn_munkres;
use rayon::prelude::*;

use crate::data::{EvalRecord, Sequence};
use crate::embedding::EmbeddingStore;
use crate::interest::InterestEncoder;
use crate::interest::assign_soft;
use crate::linalg::{axpy, dot, Matrix};
use crate::losses::CategoryMass;
use crate::retrieval::{retrieve, RetrievalError, RetrievalResult};

pub const DEFAULT_KS: [usize; 3] = [50, 100, 200];

/// `|top-K ∩ truth| / |truth|`; `None` for an empty truth set.
pub fn recall_at_k(recommended: &[usize], truth: &[usize], k: usize) -> Option<f64> {
    let truth: HashSet<usize> = truth.iter().copied().collect();
    if truth.is_empty() {
        return None;
    }
    let hits = recommended.iter().take(k).collect::<HashSet<_>>().into_iter().filter(|i| truth.contains(i)).count();
    Some(hits as f64 / truth.len() as f64)
}

pub fn hit_at_k(recommended: &[usize], truth: &[usize], k: usize) -> bool {
    recommended.iter().take(k).any(|i| truth.contains(i))
}

/// Fraction of users with at least one hit; `None` without users.
pub fn hitrate(hits: &[bool]) -> Option<f64> {
    if hits.is_empty() {
        return None;
    }
    Some(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub k: usize,
    pub recall: f64,
    pub hitrate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub n_users: usize,
    /// Items contributed by each interest across all users at the largest K.
    pub per_interest_counts: Vec<usize>,
}

impl EvalReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.k == k).map(|r| r.recall)
    }

    pub fn hitrate(&self, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.k == k).map(|r| r.hitrate)
    }

    pub fn to_csv(&self, split: &str) -> String {
        let mut out = String::from("split,k,recall,hitrate,users\n");
        for r in &self.rows {
            out.push_str(&format!("{split},{},{:.6},{:.6},{}\n", r.k, r.recall, r.hitrate, self.n_users));
        }
        out
    }
}

/// Retrieval for one evaluation record: interests from the most recent
/// `max_history` items, excluding every history item from the ranking.
pub fn retrieve_for(
    encoder: &InterestEncoder,
    store: &EmbeddingStore,
    history: &[usize],
    max_history: usize,
    top_k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    let recent = &history[history.len().saturating_sub(max_history)..];
    let interests = encoder.encode(store, recent);
    retrieve(store, &interests.fused, history, top_k)
}

/// Macro-averaged Recall@K and HitRate@K over `records`.
pub fn evaluate(
    encoder: &InterestEncoder,
    store: &EmbeddingStore,
    records: &[EvalRecord],
    ks: &[usize],
    max_history: usize,
) -> Result<EvalReport, RetrievalError> {
    let top = ks.iter().copied().max().ok_or(RetrievalError::ZeroK)?;
    let per_user: Vec<(Vec<f64>, Vec<bool>, Vec<usize>)> = records
        .par_iter()
        .filter(|r| !r.truth.is_empty() && !r.history.is_empty())
        .map(|r| {
            let res = retrieve_for(encoder, store, &r.history, max_history, top)?;
            let recalls = ks.iter().map(|&k| recall_at_k(&res.items, &r.truth, k).unwrap_or(0.0)).collect();
            let hits = ks.iter().map(|&k| hit_at_k(&res.items, &r.truth, k)).collect();
            Ok((recalls, hits, res.per_interest_counts))
        })
        .collect::<Result<_, RetrievalError>>()?;

    let n = per_user.len();
    let mut per_interest_counts = vec![0; encoder.categories.rows()];
    for (_, _, c) in &per_user {
        for (a, b) in per_interest_counts.iter_mut().zip(c) {
            *a += b;
        }
    }
    let rows = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let recall = if n == 0 { 0.0 } else { per_user.iter().map(|u| u.0[i]).sum::<f64>() / n as f64 };
            let hits: Vec<bool> = per_user.iter().map(|u| u.1[i]).collect();
            MetricRow { k, recall, hitrate: hitrate(&hits).unwrap_or(0.0) }
        })
        .collect();
    Ok(EvalReport { rows, n_users: n, per_interest_counts })
}

/// Shifted positive PMI between items of a subset, with user-level
/// co-occurrence over training sequences. The diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SppmiMatrix {
    pub items: Vec<usize>,
    pub values: Matrix,
    pub shift: f64,
}

impl SppmiMatrix {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// CSV with a header row and a leading column of item ids.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("item_id");
        for &i in &self.items {
            out.push(',');
            out.push_str(&names[i]);
        }
        out.push('\n');
        for (r, &i) in self.items.iter().enumerate() {
            out.push_str(&names[i]);
            for v in self.values.row(r) {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// `count(i,j)` = users whose training sequence holds both items,
/// `count(i)` = users holding `i`, `D` = number of sequences;
/// `SPPMI = max(ln(count(i,j)·D / (count(i)·count(j))) − ln shift, 0)`.
pub fn sppmi(train: &[Sequence], items: &[usize], shift: f64) -> SppmiMatrix {
    assert!(shift > 0.0, "shift must be positive");
    let m = items.len();
    let position: std::collections::HashMap<usize, Vec<usize>> =
        items.iter().enumerate().fold(Default::default(), |mut acc, (p, &it)| {
            acc.entry(it).or_insert_with(Vec::new).push(p);
            acc
        });
    let mut single = vec![0u64; m];
    let mut pair = vec![0u64; m * m];
    let mut present = Vec::new();
    for seq in train {
        present.clear();
        let mut seen = HashSet::new();
        for it in &seq.items {
            if seen.insert(*it) {
                if let Some(ps) = position.get(it) {
                    present.extend_from_slice(ps);
                }
            }
        }
        for (a, &p) in present.iter().enumerate() {
            single[p] += 1;
            for &q in &present[a + 1..] {
                pair[p * m + q] += 1;
                pair[q * m + p] += 1;
            }
        }
    }
    let d = train.len() as f64;
    let log_shift = shift.ln();
    let mut values = Matrix::zeros(m, m);
    for p in 0..m {
        for q in 0..m {
            let c = pair[p * m + q];
            if p == q || c == 0 || single[p] == 0 || single[q] == 0 {
                continue;
            }
            let pmi = (c as f64 * d / (single[p] as f64 * single[q] as f64)).ln();
            values[(p, q)] = (pmi - log_shift).max(0.0);
        }
    }
    SppmiMatrix { items: items.to_vec(), values, shift }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversitySummary {
    /// Mean SPPMI over off-diagonal pairs attributed to the same interest.
    pub within_interest: Option<f64>,
    /// Mean SPPMI over pairs attributed to different interests.
    pub cross_interest: Option<f64>,
    /// Mean SPPMI over all off-diagonal pairs.
    pub overall: Option<f64>,
    pub within_pairs: usize,
    pub cross_pairs: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct PairSums {
    within: (f64, usize),
    cross: (f64, usize),
}

impl PairSums {
    fn add(&mut self, matrix: &SppmiMatrix, attribution: &[usize]) {
        assert_eq!(matrix.len(), attribution.len());
        for p in 0..matrix.len() {
            for q in (p + 1)..matrix.len() {
                let v = matrix.values[(p, q)];
                let slot = if attribution[p] == attribution[q] { &mut self.within } else { &mut self.cross };
                slot.0 += v;
                slot.1 += 1;
            }
        }
    }

    fn summary(&self) -> DiversitySummary {
        let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        DiversitySummary {
            within_interest: mean(self.within),
            cross_interest: mean(self.cross),
            overall: mean((self.within.0 + self.cross.0, self.within.1 + self.cross.1)),
            within_pairs: self.within.1,
            cross_pairs: self.cross.1,
        }
    }
}

pub fn diversity_summary(matrix: &SppmiMatrix, attribution: &[usize]) -> DiversitySummary {
    let mut sums = PairSums::default();
    sums.add(matrix, attribution);
    sums.summary()
}

/// Pair-weighted diversity over the top-K retrieval of every record: each
/// user's result gets its own SPPMI matrix and the pair sums are pooled.
pub fn retrieval_diversity(
    encoder: &InterestEncoder,
    store: &EmbeddingStore,
    train: &[Sequence],
    records: &[EvalRecord],
    top_k: usize,
    max_history: usize,
    shift: f64,
) -> Result<DiversitySummary, RetrievalError> {
    let per_user: Vec<PairSums> = records
        .par_iter()
        .filter(|r| !r.history.is_empty())
        .map(|r| {
            let res = retrieve_for(encoder, store, &r.history, max_history, top_k)?;
            let mut sums = PairSums::default();
            sums.add(&sppmi(train, &res.items, shift), &res.attribution);
            Ok(sums)
        })
        .collect::<Result<_, RetrievalError>>()?;
    let mut total = PairSums::default();
    for s in per_user {
        total.within.0 += s.within.0;
        total.within.1 += s.within.1;
        total.cross.0 += s.cross.0;
        total.cross.1 += s.cross.1;
    }
    Ok(total.summary())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recovery {
    /// Adjusted mutual information (arithmetic-mean normalization).
    pub ami: f64,
    /// Accuracy under the best one-to-one label matching.
    pub accuracy: f64,
}

fn contingency(a: &[usize], b: &[usize]) -> (Vec<Vec<u64>>, Vec<u64>, Vec<u64>) {
    let ra = a.iter().max().map_or(0, |m| m + 1);
    let rb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; rb]; ra];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    // Drop empty rows/columns so only observed labels count.
    let rows: Vec<Vec<u64>> = table.into_iter().filter(|r| r.iter().any(|&c| c > 0)).collect();
    let keep: Vec<usize> = (0..rb).filter(|&j| rows.iter().any(|r| r[j] > 0)).collect();
    let rows: Vec<Vec<u64>> = rows.into_iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect();
    let row_sums = rows.iter().map(|r| r.iter().sum()).collect();
    let col_sums = (0..keep.len()).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
    (rows, row_sums, col_sums)
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum()
}

/// Adjusted mutual information between two labelings of the same items.
pub fn adjusted_mutual_info(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n_items = a.len();
    let (table, row_sums, col_sums) = contingency(a, b);
    if (row_sums.len() == 1 && col_sums.len() == 1) || n_items == 0 {
        return 1.0;
    }
    let n = n_items as f64;
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (row_sums[i] as f64 * col_sums[j] as f64)).ln();
            }
        }
    }

    // Expected MI under the hypergeometric permutation model.
    let mut ln_fact = vec![0.0f64; n_items + 1];
    for i in 1..=n_items {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let mut emi = 0.0;
    for &ai in &row_sums {
        for &bj in &col_sums {
            let (ai, bj) = (ai as usize, bj as usize);
            let lo = (ai + bj).saturating_sub(n_items).max(1);
            let hi = ai.min(bj);
            let base = ln_fact[ai] + ln_fact[bj] + ln_fact[n_items - ai] + ln_fact[n_items - bj] - ln_fact[n_items];
            for nij in lo..=hi {
                let term = (nij as f64 / n) * (n * nij as f64 / (ai as f64 * bj as f64)).ln();
                let log_p = base
                    - ln_fact[nij]
                    - ln_fact[ai - nij]
                    - ln_fact[bj - nij]
                    - ln_fact[n_items + nij - ai - bj];
                emi += term * log_p.exp();
            }
        }
    }
    let normalizer = 0.5 * (entropy(&row_sums, n) + entropy(&col_sums, n));
    let mut denominator = normalizer - emi;
    denominator = if denominator < 0.0 { denominator.min(-f64::EPSILON) } else { denominator.max(f64::EPSILON) };
    (mi - emi) / denominator
}

/// Fraction of items whose learned label maps onto their planted label
/// under the best one-to-one matching of label sets.
pub fn matched_accuracy(planted: &[usize], learned: &[usize]) -> f64 {
    assert_eq!(planted.len(), learned.len());
    if planted.is_empty() {
        return 1.0;
    }
    let (table, _, _) = contingency(planted, learned);
    let size = table.len().max(table.first().map_or(0, Vec::len));
    let mut weights = pathfinding::matrix::Matrix::new(size, size, 0i64);
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            weights[(i, j)] = c as i64;
        }
    }
    let (total, _) = kuhn_munkres(&weights);
    total as f64 / planted.len() as f64
}

pub fn category_recovery(planted: &[usize], learned: &[usize]) -> Recovery {
    Recovery { ami: adjusted_mutual_info(planted, learned), accuracy: matched_accuracy(planted, learned) }
}

/// Largest `|g_iᵀg_j|` over distinct category pairs; 0 for a single category.
pub fn max_off_diagonal(categories: &Matrix) -> f64 {
    let k = categories.rows();
    let mut worst: f64 = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            worst = worst.max(dot(categories.row(i), categories.row(j)).abs());
        }
    }
    worst
}

/// Mean over catalog items of their largest assignment probability.
pub fn mean_max_assignment(encoder: &InterestEncoder, store: &EmbeddingStore) -> f64 {
    let n = store.catalog_size();
    if n == 0 {
        return 0.0;
    }
    let all: Vec<usize> = (0..n).collect();
    let items = InterestEncoder::gather(store, &all);
    let assign = assign_soft(&encoder.categories, &items, encoder.epsilon);
    assign.probs.iter_rows().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).sum::<f64>() / n as f64
}

/// Assignment mass per category accumulated over every interaction of the
/// training sequences.
pub fn corpus_mass(encoder: &InterestEncoder, store: &EmbeddingStore, train: &[Sequence]) -> CategoryMass {
    let all: Vec<usize> = (0..store.catalog_size()).collect();
    let items = InterestEncoder::gather(store, &all);
    let probs = assign_soft(&encoder.categories, &items, encoder.epsilon).probs;
    let mut w = vec![0.0; encoder.categories.rows()];
    for seq in train {
        for &it in &seq.items {
            axpy(1.0, probs.row(it), &mut w);
        }
    }
    CategoryMass::new(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[1, 9, 8], &[1, 2], 3), Some(0.5));
        assert_eq!(recall_at_k(&[2, 1, 8], &[1, 2], 3), Some(1.0));
        assert_eq!(recall_at_k(&[7, 9, 8], &[1, 2], 3), Some(0.0));
        assert_eq!(recall_at_k(&[7, 1], &[1], 1), Some(0.0));
        assert_eq!(recall_at_k(&[7], &[], 1), None);
    }

    #[test]
    fn hitrate_examples() {
        assert_eq!(hitrate(&[true, true]), Some(1.0));
        assert_eq!(hitrate(&[false, false]), Some(0.0));
        assert_eq!(hitrate(&[true, true, false, true]), Some(0.75));
        assert_eq!(hitrate(&[]), None);
    }

    fn seq(user: usize, items: &[usize]) -> Sequence {
        Sequence { user, items: items.to_vec(), timestamps: vec![0; items.len()] }
    }

    #[test]
    fn never_co_occurring_is_zero() {
        let train = vec![seq(0, &[1]), seq(1, &[2])];
        let m = sppmi(&train, &[1, 2], 1.0);
        assert_eq!(m.values.as_slice(), &[0.0; 4]);
    }

    #[test]
    fn always_together_gives_ln_d_over_c() {
        // items 1 and 2 appear together in 2 of 5 users and never apart
        let train = vec![seq(0, &[1, 2]), seq(1, &[2, 1]), seq(2, &[3]), seq(3, &[4]), seq(4, &[3, 4])];
        let m = sppmi(&train, &[1, 2], 1.0);
        assert!((m.values[(0, 1)] - (5.0f64 / 2.0).ln()).abs() < 1e-15);
        assert_eq!(m.values[(0, 1)], m.values[(1, 0)]);
        assert_eq!(m.values[(0, 0)], 0.0);
    }

    #[test]
    fn shift_subtracts_log() {
        let train = vec![seq(0, &[1, 2]), seq(1, &[3]), seq(2, &[4]), seq(3, &[5])];
        let plain = sppmi(&train, &[1, 2], 1.0).values[(0, 1)];
        let shifted = sppmi(&train, &[1, 2], 2.0).values[(0, 1)];
        assert!((plain - shifted - 2f64.ln()).abs() < 1e-15);
        assert_eq!(sppmi(&train, &[1, 2], 100.0).values[(0, 1)], 0.0);
    }

    #[test]
    fn diversity_split_by_attribution() {
        let values = Matrix::from_rows(&[[0.0, 2.0, 0.5], [2.0, 0.0, 1.0], [0.5, 1.0, 0.0]]);
        let m = SppmiMatrix { items: vec![0, 1, 2], values, shift: 1.0 };
        let s = diversity_summary(&m, &[0, 0, 1]);
        assert_eq!(s.within_interest, Some(2.0));
        assert_eq!(s.cross_interest, Some(0.75));
        assert_eq!(s.overall, Some(3.5 / 3.0));
        assert_eq!((s.within_pairs, s.cross_pairs), (1, 2));
    }

    #[test]
    fn identical_labelings_recover_perfectly() {
        let a = [0, 0, 1, 1, 2, 2, 3];
        let r = category_recovery(&a, &a);
        assert!((r.ami - 1.0).abs() < 1e-12);
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn permuted_labels_match_fully() {
        let a = [0, 0, 1, 1, 2, 2];
        let b = [2, 2, 0, 0, 1, 1];
        let r = category_recovery(&a, &b);
        assert_eq!(r.accuracy, 1.0);
        assert!((r.ami - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unequal_label_counts() {
        let planted = [0, 0, 0, 1, 1, 1];
        let learned = [0, 0, 1, 2, 2, 2];
        assert!((matched_accuracy(&planted, &learned) - 5.0 / 6.0).abs() < 1e-15);
        assert!((matched_accuracy(&learned, &planted) - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let values = Matrix::from_rows(&[[0.0, 1.5], [1.5, 0.0]]);
        let m = SppmiMatrix { items: vec![1, 0], values, shift: 1.0 };
        let names = vec!["a".to_string(), "b".to_string()];
        assert_eq!(m.to_csv(&names), "item_id,b,a\nb,0.000000,1.500000\na,1.500000,0.000000\n");
    }
}
