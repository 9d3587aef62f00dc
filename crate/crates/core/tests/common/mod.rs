#![allow(dead_code)]

use opal::interest::{assign_hard, assign_soft, compute_interests, Gru};
use opal::linalg::{argmax, dot, Matrix};
use opal::losses::{orthogonality, sampled_softmax, uniformity, uniqueness, CategoryMass, LossWeights};
use opal::trainer::{batch_objective, BatchProblem, LocalInstance, ObjectiveConfig};
use opal::Stage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Denominator floor for `rel_err`. Central differences of an O(1) loss
/// carry about 1e-10 of rounding noise at this step size, so smaller
/// gradient entries cannot be resolved relatively.
pub const FD_FLOOR: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, FD_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let row = m.row_mut(r);
        for x in row.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= n);
    }
    m
}

pub fn random_gru(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Gru {
    let mut g = Gru::zeros(dim);
    for t in g.tensors_mut() {
        for x in t.iter_mut() {
            *x = rng.random_range(-scale..scale);
        }
    }
    g
}

/// Random batch: `n_items` local rows, `b` instances with histories of
/// length `1..=max_len`, each scored against its positive and `b` shared
/// negatives.
pub fn random_problem(rng: &mut ChaCha8Rng, n_items: usize, dim: usize, b: usize, max_len: usize) -> BatchProblem {
    let items = unit_rows(rng, n_items, dim);
    let negatives: Vec<usize> = (0..b).map(|_| rng.random_range(0..n_items)).collect();
    let instances = (0..b)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            let history = (0..len).map(|_| rng.random_range(0..n_items)).collect();
            let positive = rng.random_range(0..n_items);
            let mut candidates = vec![positive];
            candidates.extend(negatives.iter().copied().filter(|&n| n != positive));
            if candidates.len() == 1 {
                candidates.push((positive + 1) % n_items);
            }
            LocalInstance { history, candidates }
        })
        .collect();
    BatchProblem { items, instances, global: (0..n_items).collect() }
}

/// Discrete choices made by the forward pass: hard labels, clamp mask and
/// winning interest per candidate. Finite differences are only meaningful
/// where a perturbation leaves this unchanged.
pub fn signature(categories: &Matrix, gru: &Gru, problem: &BatchProblem, eps: f64, stage: Stage) -> Vec<usize> {
    let mut sig = Vec::new();
    for inst in &problem.instances {
        let x = gather(&problem.items, &inst.history);
        let a = assign_soft(categories, &x, eps);
        sig.extend(assign_hard(&a));
        sig.extend(a.coords.as_slice().iter().map(|c| (c.abs() > 1.0) as usize));
        let set = compute_interests(categories, gru, &x, eps, stage);
        for &c in &inst.candidates {
            let scores: Vec<f64> = (0..set.fused.rows()).map(|j| dot(problem.items.row(c), set.fused.row(j))).collect();
            sig.push(argmax(&scores));
        }
    }
    sig
}

pub fn gather(items: &Matrix, idx: &[usize]) -> Matrix {
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| items.row(i).to_vec()).collect();
    Matrix::from_rows(&rows)
}

pub fn objective(stage: Stage) -> ObjectiveConfig {
    ObjectiveConfig { epsilon: 0.1, weights: LossWeights::default(), stage }
}

pub fn total(categories: &Matrix, gru: &Gru, problem: &BatchProblem, cfg: &ObjectiveConfig) -> f64 {
    batch_objective(categories, gru, problem, cfg).unwrap().0.total
}

/// Outcome of comparing one analytic gradient against central differences.
#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
}

impl FdReport {
    pub fn merge(&mut self, o: FdReport) {
        self.checked += o.checked;
        self.skipped += o.skipped;
        self.max_rel = self.max_rel.max(o.max_rel);
    }
}

/// Which parameter block of the batch objective to perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Items,
    Categories,
    Gru,
}

/// Central-difference check of `batch_objective` w.r.t. one block.
pub fn check_objective(categories: &Matrix, gru: &Gru, problem: &BatchProblem, cfg: &ObjectiveConfig, block: Block) -> FdReport {
    let (_, grads) = batch_objective(categories, gru, problem, cfg).unwrap();
    let base_sig = signature(categories, gru, problem, cfg.epsilon, cfg.stage);
    let mut report = FdReport::default();

    let n = match block {
        Block::Items => problem.items.as_slice().len(),
        Block::Categories => categories.as_slice().len(),
        Block::Gru => grads.gru.tensors().iter().map(|t| t.len()).sum(),
    };
    for idx in 0..n {
        let eval = |delta: f64| -> (f64, Vec<usize>) {
            let mut c = categories.clone();
            let mut g = gru.clone();
            let mut p = problem.clone();
            match block {
                Block::Items => p.items.as_mut_slice()[idx] += delta,
                Block::Categories => c.as_mut_slice()[idx] += delta,
                Block::Gru => {
                    let mut rest = idx;
                    for t in g.tensors_mut() {
                        if rest < t.len() {
                            t[rest] += delta;
                            break;
                        }
                        rest -= t.len();
                    }
                }
            }
            (total(&c, &g, &p, cfg), signature(&c, &g, &p, cfg.epsilon, cfg.stage))
        };
        let (plus, sp) = eval(FD_STEP);
        let (minus, sm) = eval(-FD_STEP);
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic = match block {
            Block::Items => grads.items.as_slice()[idx],
            Block::Categories => grads.categories.as_slice()[idx],
            Block::Gru => {
                let mut rest = idx;
                let mut v = 0.0;
                for t in grads.gru.tensors() {
                    if rest < t.len() {
                        v = t[rest];
                        break;
                    }
                    rest -= t.len();
                }
                v
            }
        };
        report.checked += 1;
        report.max_rel = report.max_rel.max(rel_err(analytic, numeric));
    }
    report
}

pub fn fd_matrix(x: &Matrix, analytic: &Matrix, f: impl Fn(&Matrix) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.as_slice().len() {
        let mut p = x.clone();
        p.as_mut_slice()[i] += FD_STEP;
        let mut m = x.clone();
        m.as_mut_slice()[i] -= FD_STEP;
        let numeric = (f(&p) - f(&m)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic.as_slice()[i], numeric));
    }
    worst
}

/// Worst relative error of the orthogonality gradient over `n` random G.
pub fn orthogonality_suite(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let k = rng.random_range(2..=4);
        let d = rng.random_range(k..=8);
        let g = unit_rows(&mut rng, k, d);
        let (_, grad) = orthogonality(&g);
        worst = worst.max(fd_matrix(&g, &grad, |m| orthogonality(m).0));
    }
    worst
}

pub fn uniformity_suite(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let k = rng.random_range(2..=4);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..5.0)).collect();
        let (_, grad) = uniformity(&CategoryMass::new(w.clone())).unwrap();
        let x = Matrix::from_vec(1, k, w);
        let g = Matrix::from_vec(1, k, grad);
        worst = worst.max(fd_matrix(&x, &g, |m| uniformity(&CategoryMass::new(m.as_slice().to_vec())).unwrap().0));
    }
    worst
}

pub fn uniqueness_suite(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < n {
        let k = rng.random_range(2..=4);
        let len = rng.random_range(1..=6);
        let mut a = Matrix::zeros(len, k);
        a.as_mut_slice().iter_mut().for_each(|x| *x = rng.random_range(0.05..1.0));
        // tie points excluded: require a clear row maximum
        let clear = a.iter_rows().all(|r| {
            let m = argmax(r);
            r.iter().enumerate().all(|(j, &x)| j == m || r[m] - x > 1e-3)
        });
        if !clear {
            continue;
        }
        let (_, grad) = uniqueness(&a);
        worst = worst.max(fd_matrix(&a, &grad, |m| uniqueness(m).0));
        done += 1;
    }
    worst
}

pub fn main_loss_suite(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < n {
        let k = rng.random_range(1..=4);
        let d = rng.random_range(2..=8);
        let u = unit_rows(&mut rng, k, d);
        let n_cand = rng.random_range(2..=6);
        let c = unit_rows(&mut rng, n_cand, d);
        let loss = sampled_softmax(&u, &c, 0.1).unwrap();
        let winners = |u: &Matrix, c: &Matrix| sampled_softmax(u, c, 0.1).unwrap().winners;
        let w0 = winners(&u, &c);
        // skip instances where any candidate's best interest is within a hair of the runner-up
        let stable = (0..u.as_slice().len()).all(|i| {
            let mut p = u.clone();
            p.as_mut_slice()[i] += 1e-3;
            let mut m = u.clone();
            m.as_mut_slice()[i] -= 1e-3;
            winners(&p, &c) == w0 && winners(&m, &c) == w0
        });
        if !stable {
            continue;
        }
        let f_u = |m: &Matrix| sampled_softmax(m, &c, 0.1).unwrap().value;
        let f_c = |m: &Matrix| sampled_softmax(&u, m, 0.1).unwrap().value;
        worst = worst.max(fd_matrix(&u, &loss.grad_interests, f_u));
        worst = worst.max(fd_matrix(&c, &loss.grad_candidates, f_c));
        done += 1;
    }
    worst
}

/// Full batch objective on `n` random problems, checked block by block.
pub fn objective_suite(stage: Stage, blocks: &[Block], seed: u64, n: usize) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = FdReport::default();
    for _ in 0..n {
        let k = rng.random_range(1..=4);
        let d = rng.random_range(2..=8);
        let categories = unit_rows(&mut rng, k, d);
        let gru = random_gru(&mut rng, d, 0.8);
        let b = rng.random_range(1..=4);
        let problem = random_problem(&mut rng, 10, d, b, 6);
        let cfg = objective(stage);
        for &block in blocks {
            total.merge(check_objective(&categories, &gru, &problem, &cfg, block));
        }
    }
    total
}
