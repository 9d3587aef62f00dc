use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Vec<f32>,
    pub second: Vec<f32>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self { first: vec![0.0; n], second: vec![0.0; n] }
    }
}

/// Optimizer state for items, categories and the nine GRU tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    /// Number of optimizer steps taken so far.
    pub step: u64,
    pub items: Moments,
    pub categories: Moments,
    pub gru: Vec<Moments>,
}

impl AdamState {
    pub fn new(catalog_size: usize, n_categories: usize, dim: usize) -> Self {
        Self {
            step: 0,
            items: Moments::zeros(catalog_size * dim),
            categories: Moments::zeros(n_categories * dim),
            gru: crate::embedding::GruParams::tensor_lengths(dim).iter().map(|&n| Moments::zeros(n)).collect(),
        }
    }

    /// Moments in checkpoint tensor order.
    pub fn all_moments(&self) -> Vec<&Moments> {
        let mut v = vec![&self.items, &self.categories];
        v.extend(self.gru.iter());
        v
    }

    pub fn all_moments_mut(&mut self) -> Vec<&mut Moments> {
        let mut v = vec![&mut self.items, &mut self.categories];
        v.extend(self.gru.iter_mut());
        v
    }
}

fn check_finite(grads: &[f64]) -> Result<(), TrainError> {
    match grads.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(TrainError::Divergence(format!("non-finite gradient at element {i}"))),
        None => Ok(()),
    }
}

#[inline]
fn update_one(p: &mut f32, g: f64, m: &mut f32, v: &mut f32, bias1: f64, bias2: f64, cfg: &AdamConfig) {
    let m_new = cfg.beta1 * *m as f64 + (1.0 - cfg.beta1) * g;
    let v_new = cfg.beta2 * *v as f64 + (1.0 - cfg.beta2) * g * g;
    *m = m_new as f32;
    *v = v_new as f32;
    let m_hat = m_new / bias1;
    let v_hat = v_new / bias2;
    *p = (*p as f64 - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps)) as f32;
}

fn bias(cfg: &AdamConfig, step: u64) -> (f64, f64) {
    let t = step.max(1) as i32;
    (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t))
}

/// Dense bias-corrected Adam update. `step` is the 1-based index of the
/// current optimizer step.
pub fn adam_step(
    params: &mut [f32],
    grads: &[f64],
    moments: &mut Moments,
    step: u64,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), moments.first.len());
    check_finite(grads)?;
    let (b1, b2) = bias(cfg, step);
    for i in 0..params.len() {
        update_one(&mut params[i], grads[i], &mut moments.first[i], &mut moments.second[i], b1, b2, cfg);
    }
    Ok(())
}

/// Adam update restricted to the listed rows; `grads` holds one `dim`-wide
/// row per entry of `rows`. Rows not listed keep their parameters and
/// moments.
pub fn adam_step_rows(
    params: &mut [f32],
    grads: &[f64],
    rows: &[usize],
    dim: usize,
    moments: &mut Moments,
    step: u64,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    assert_eq!(grads.len(), rows.len() * dim);
    check_finite(grads)?;
    let (b1, b2) = bias(cfg, step);
    for (r, &row) in rows.iter().enumerate() {
        for c in 0..dim {
            let i = row * dim + c;
            update_one(&mut params[i], grads[r * dim + c], &mut moments.first[i], &mut moments.second[i], b1, b2, cfg);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3f32, -0.7];
        let mut m = Moments::zeros(2);
        adam_step(&mut p, &[0.0, 0.0], &mut m, 1, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0f32];
        let mut m = Moments::zeros(1);
        adam_step(&mut p, &[1.0], &mut m, 1, &cfg).unwrap();
        // m̂ = v̂ = 1, so the step is lr / (1 + eps)
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((p[0] as f64 - expected).abs() < 1e-7);
        // constant gradient keeps the step at ≈ lr
        for t in 2..=5 {
            let before = p[0] as f64;
            adam_step(&mut p, &[1.0], &mut m, t, &cfg).unwrap();
            assert!((before - p[0] as f64 - 0.001).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = vec![0.0f32];
        let mut m = Moments::zeros(1);
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut m, 1, &AdamConfig::default()),
            Err(TrainError::Divergence(_))
        ));
    }

    #[test]
    fn sparse_rows_touch_only_listed() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.5f32; 6];
        let mut m = Moments::zeros(6);
        adam_step_rows(&mut p, &[1.0, -1.0], &[1], 2, &mut m, 1, &cfg).unwrap();
        assert_eq!(&p[0..2], &[0.5, 0.5]);
        assert_eq!(&p[4..6], &[0.5, 0.5]);
        assert!(p[2] < 0.5 && p[3] > 0.5);
        assert_eq!(m.first[0], 0.0);
    }
}
