mod common;

use common::*;
use opal::Stage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn orthogonality_gradient() {
    let worst = orthogonality_suite(1, 20);
    assert!(worst < FD_TOL, "{worst}");
}

#[test]
fn uniformity_gradient() {
    let worst = uniformity_suite(2, 20);
    assert!(worst < FD_TOL, "{worst}");
}

#[test]
fn uniqueness_gradient() {
    let worst = uniqueness_suite(3, 20);
    assert!(worst < FD_TOL, "{worst}");
}

#[test]
fn main_loss_gradient() {
    let worst = main_loss_suite(4, 20);
    assert!(worst < FD_TOL, "{worst}");
}

#[test]
fn pretrain_objective_gradient() {
    let r = objective_suite(Stage::Pretrain, &[Block::Items, Block::Categories], 5, 20);
    assert!(r.max_rel < FD_TOL, "{r:?}");
    assert!(r.checked > 10 * r.skipped, "{r:?}");
}

#[test]
fn finetune_objective_gradient() {
    let r = objective_suite(Stage::Finetune, &[Block::Items, Block::Categories, Block::Gru], 6, 20);
    assert!(r.max_rel < FD_TOL, "{r:?}");
    assert!(r.checked > 10 * r.skipped, "{r:?}");
}

#[test]
fn pretrain_gru_gradient_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let categories = unit_rows(&mut rng, 3, 5);
    let gru = random_gru(&mut rng, 5, 0.5);
    let problem = random_problem(&mut rng, 12, 5, 3, 6);
    let (_, grads) = opal::trainer::batch_objective(&categories, &gru, &problem, &objective(Stage::Pretrain)).unwrap();
    assert!(grads.gru.tensors().iter().all(|t| t.iter().all(|&x| x == 0.0)));
}
