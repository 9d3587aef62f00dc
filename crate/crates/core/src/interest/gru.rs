use crate::embedding::GruParams;
use crate::linalg::{sigmoid, Matrix};

/// GRU weights promoted to `f64`; also used as a gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStep {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GruTrace {
    steps: Vec<GruStep>,
    pub output: Vec<f64>,
}

impl Gru {
    pub fn zeros(dim: usize) -> Self {
        let m = || Matrix::zeros(dim, dim);
        Self {
            w_z: m(),
            w_r: m(),
            w_h: m(),
            u_z: m(),
            u_r: m(),
            u_h: m(),
            b_z: vec![0.0; dim],
            b_r: vec![0.0; dim],
            b_h: vec![0.0; dim],
        }
    }

    pub fn from_params(p: &GruParams) -> Self {
        let d = p.dim;
        let m = |x: &[f32]| Matrix::from_f32(d, d, x);
        let v = |x: &[f32]| x.iter().map(|&a| a as f64).collect();
        Self {
            w_z: m(&p.w_z),
            w_r: m(&p.w_r),
            w_h: m(&p.w_h),
            u_z: m(&p.u_z),
            u_r: m(&p.u_r),
            u_h: m(&p.u_h),
            b_z: v(&p.b_z),
            b_r: v(&p.b_r),
            b_h: v(&p.b_h),
        }
    }

    pub fn dim(&self) -> usize {
        self.b_z.len()
    }

    /// Tensors in checkpoint order (matches [`GruParams::tensors`]).
    pub fn tensors(&self) -> [&[f64]; 9] {
        [
            self.w_z.as_slice(),
            self.w_r.as_slice(),
            self.w_h.as_slice(),
            self.u_z.as_slice(),
            self.u_r.as_slice(),
            self.u_h.as_slice(),
            &self.b_z,
            &self.b_r,
            &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.w_z.as_mut_slice(),
            self.w_r.as_mut_slice(),
            self.w_h.as_mut_slice(),
            self.u_z.as_mut_slice(),
            self.u_r.as_mut_slice(),
            self.u_h.as_mut_slice(),
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Gru) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            crate::linalg::axpy(alpha, b, a);
        }
    }

    /// One cell application.
    pub fn cell(&self, x: &[f64], h: &[f64]) -> GruStep {
        let d = self.dim();
        let mut wx = vec![0.0; d];
        let mut uh = vec![0.0; d];

        self.w_z.matvec(x, &mut wx);
        self.u_z.matvec(h, &mut uh);
        let z: Vec<f64> = (0..d).map(|i| sigmoid(wx[i] + uh[i] + self.b_z[i])).collect();

        self.w_r.matvec(x, &mut wx);
        self.u_r.matvec(h, &mut uh);
        let r: Vec<f64> = (0..d).map(|i| sigmoid(wx[i] + uh[i] + self.b_r[i])).collect();

        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        self.w_h.matvec(x, &mut wx);
        self.u_h.matvec(&rh, &mut uh);
        let n: Vec<f64> = (0..d).map(|i| (wx[i] + uh[i] + self.b_h[i]).tanh()).collect();

        GruStep { h_prev: h.to_vec(), z, r, n }
    }

    /// Run over `inputs` from a zero hidden state.
    pub fn run<'a, I>(&self, inputs: I) -> GruTrace
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut h = vec![0.0; self.dim()];
        let mut steps = Vec::new();
        for x in inputs {
            let step = self.cell(x, &h);
            h = step.output();
            steps.push(step);
        }
        GruTrace { steps, output: h }
    }

    /// Back-propagate `d_out` (gradient w.r.t. the final hidden state).
    /// Accumulates parameter gradients into `grad` and input gradients into
    /// `d_inputs[t]` for each step `t`.
    pub fn backward(&self, trace: &GruTrace, inputs: &[&[f64]], d_out: &[f64], grad: &mut Gru, d_inputs: &mut [Vec<f64>]) {
        let d = self.dim();
        debug_assert_eq!(inputs.len(), trace.steps.len());
        let mut dh = d_out.to_vec();
        let mut d_pre = vec![0.0; d];
        let mut d_rh = vec![0.0; d];
        for t in (0..trace.steps.len()).rev() {
            let s = &trace.steps[t];
            let x = inputs[t];
            let mut dh_prev: Vec<f64> = (0..d).map(|i| dh[i] * s.z[i]).collect();

            // candidate branch
            for i in 0..d {
                let dn = dh[i] * (1.0 - s.z[i]);
                d_pre[i] = dn * (1.0 - s.n[i] * s.n[i]);
            }
            let rh: Vec<f64> = s.r.iter().zip(&s.h_prev).map(|(a, b)| a * b).collect();
            grad.w_h.add_outer(&d_pre, x);
            grad.u_h.add_outer(&d_pre, &rh);
            crate::linalg::axpy(1.0, &d_pre, &mut grad.b_h);
            self.w_h.matvec_t_acc(&d_pre, &mut d_inputs[t]);
            d_rh.fill(0.0);
            self.u_h.matvec_t_acc(&d_pre, &mut d_rh);
            let dr: Vec<f64> = (0..d).map(|i| d_rh[i] * s.h_prev[i]).collect();
            for i in 0..d {
                dh_prev[i] += d_rh[i] * s.r[i];
            }

            // update gate
            for i in 0..d {
                let dz = dh[i] * (s.h_prev[i] - s.n[i]);
                d_pre[i] = dz * s.z[i] * (1.0 - s.z[i]);
            }
            grad.w_z.add_outer(&d_pre, x);
            grad.u_z.add_outer(&d_pre, &s.h_prev);
            crate::linalg::axpy(1.0, &d_pre, &mut grad.b_z);
            self.w_z.matvec_t_acc(&d_pre, &mut d_inputs[t]);
            self.u_z.matvec_t_acc(&d_pre, &mut dh_prev);

            // reset gate
            for i in 0..d {
                d_pre[i] = dr[i] * s.r[i] * (1.0 - s.r[i]);
            }
            grad.w_r.add_outer(&d_pre, x);
            grad.u_r.add_outer(&d_pre, &s.h_prev);
            crate::linalg::axpy(1.0, &d_pre, &mut grad.b_r);
            self.w_r.matvec_t_acc(&d_pre, &mut d_inputs[t]);
            self.u_r.matvec_t_acc(&d_pre, &mut dh_prev);

            dh = dh_prev;
        }
    }
}

impl GruStep {
    pub fn output(&self) -> Vec<f64> {
        (0..self.z.len()).map(|i| (1.0 - self.z[i]) * self.n[i] + self.z[i] * self.h_prev[i]).collect()
    }
}
