use nalgebra::DMatrix;

use super::scalar::ScalarDynState;
use super::{check_dt, check_growth, DynError, Result};
use crate::tensor::{pearson_slices, Rng};

/// Feedback used by the matrix system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DynRule {
    /// `R_i = W_i^t`.
    Bp,
    /// `R_i = R_i(0) + eps * W_i^t`.
    Feedback { eps: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDynState {
    /// `W_1..W_k`, `W_i` is `n_i x n_{i-1}`.
    pub w: Vec<DMatrix<f64>>,
    /// `R_1(0)..R_k(0)`, `R_i` is `n_{i-1} x n_i`. `R_1` never enters the
    /// dynamics and is kept for the alignment report only.
    pub r0: Vec<DMatrix<f64>>,
    /// `T`, `n_k x n_0`.
    pub target: DMatrix<f64>,
    pub rule: DynRule,
    pub dt: f64,
    pub iteration: usize,
    e0_norm: f64,
}

impl MatrixDynState {
    pub fn new(
        w: Vec<DMatrix<f64>>,
        r0: Vec<DMatrix<f64>>,
        target: DMatrix<f64>,
        rule: DynRule,
        dt: f64,
    ) -> Result<Self> {
        check_dt(dt)?;
        if w.is_empty() {
            return Err(DynError::Invalid("need at least one layer".into()));
        }
        if r0.len() != w.len() {
            return Err(DynError::Invalid(format!("{} feedback matrices for {} layers", r0.len(), w.len())));
        }
        for i in 0..w.len() {
            if i > 0 && w[i].ncols() != w[i - 1].nrows() {
                return Err(DynError::Invalid(format!(
                    "W_{} has {} columns, W_{} has {} rows",
                    i + 1,
                    w[i].ncols(),
                    i,
                    w[i - 1].nrows()
                )));
            }
            if r0[i].shape() != (w[i].ncols(), w[i].nrows()) {
                return Err(DynError::Invalid(format!(
                    "R_{} is {:?}, expected {:?}",
                    i + 1,
                    r0[i].shape(),
                    (w[i].ncols(), w[i].nrows())
                )));
            }
        }
        let out = (w[w.len() - 1].nrows(), w[0].ncols());
        if target.shape() != out {
            return Err(DynError::Invalid(format!("T is {:?}, expected {:?}", target.shape(), out)));
        }
        if let DynRule::Feedback { eps } = rule {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(DynError::Invalid(format!("eps must be finite and >= 0, got {eps}")));
            }
        }
        let mut s = MatrixDynState {
            w,
            r0,
            target,
            rule,
            dt,
            iteration: 0,
            e0_norm: 0.0,
        };
        s.e0_norm = s.error().norm();
        Ok(s)
    }

    pub fn depth(&self) -> usize {
        self.w.len()
    }

    /// Current feedback matrix of layer `i` (0-based).
    pub fn feedback(&self, i: usize) -> DMatrix<f64> {
        match self.rule {
            DynRule::Bp => self.w[i].transpose(),
            DynRule::Feedback { eps } => &self.r0[i] + self.w[i].transpose() * eps,
        }
    }

    fn prefix_products(&self) -> Vec<DMatrix<f64>> {
        let mut p: Vec<DMatrix<f64>> = Vec::with_capacity(self.w.len());
        p.push(self.w[0].clone());
        for i in 1..self.w.len() {
            let next = &self.w[i] * &p[i - 1];
            p.push(next);
        }
        p
    }

    /// `W_k ... W_1`.
    pub fn product(&self) -> DMatrix<f64> {
        self.prefix_products().pop().expect("at least one layer")
    }

    /// `E = T - W_k ... W_1`.
    pub fn error(&self) -> DMatrix<f64> {
        &self.target - self.product()
    }

    /// `e^2 = tr(E^t E)`.
    pub fn error_sq(&self) -> f64 {
        self.error().norm_squared()
    }

    /// Projections `u_j^t E v_j` onto the columns of `u` and `v`.
    pub fn mode_errors(&self, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Vec<f64> {
        let e = self.error();
        (0..u.ncols()).map(|j| (u.column(j).transpose() * &e * v.column(j))[(0, 0)]).collect()
    }

    /// `corr(W_i, R_i^t)` per layer; NaN while either side is constant.
    pub fn correlations(&self) -> Vec<f64> {
        (0..self.w.len())
            .map(|i| {
                let rt = self.feedback(i).transpose();
                pearson_slices(self.w[i].as_slice(), rt.as_slice()).unwrap_or(f64::NAN)
            })
            .collect()
    }

    /// Derivatives of all `W_i` from the current state, with `e^2`.
    fn derivatives(&self) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let k = self.w.len();
        let p = self.prefix_products();
        let e = &self.target - &p[k - 1];
        // m = R_{i+1} ... R_k E, built top down
        let mut dw: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); k];
        let mut m = e.clone();
        for i in (0..k).rev() {
            dw[i] = if i == 0 { m.clone() } else { &m * p[i - 1].transpose() };
            if i > 0 {
                m = self.feedback(i) * &m;
            }
        }
        (dw, e)
    }

    /// One Euler step in place. Returns `e^2` of the state before the step.
    pub fn step(&mut self) -> Result<f64> {
        let (dw, e) = self.derivatives();
        let norm = e.norm();
        check_growth(self.iteration, norm, self.e0_norm, self.dt)?;
        for (w, d) in self.w.iter_mut().zip(&dw) {
            *w += d * self.dt;
        }
        if self.w.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(DynError::Unstable {
                iteration: self.iteration,
                growth: f64::INFINITY,
                suggested_dt: self.dt / 10.0,
            });
        }
        self.iteration += 1;
        Ok(norm * norm)
    }

    /// Steps until `max_iters` or first passage, returning `e^2` per
    /// iteration from the initial state.
    pub fn trajectory(&mut self, max_iters: usize, stop_at_passage: bool) -> Result<Vec<f64>> {
        let mut e2 = Vec::with_capacity(max_iters + 1);
        for _ in 0..max_iters {
            let v = self.step()?;
            e2.push(v);
            if stop_at_passage && v <= super::PASSAGE_FRACTION * e2[0] {
                return Ok(e2);
            }
        }
        e2.push(self.error_sq());
        Ok(e2)
    }
}

/// One explicit Euler step on the matrix system.
pub fn euler_step_matrix(s: &MatrixDynState) -> Result<MatrixDynState> {
    let mut next = s.clone();
    next.step()?;
    Ok(next)
}

/// Matrix system whose modes decouple along the singular directions of `T`.
#[derive(Debug, Clone)]
pub struct AlignedInit {
    pub state: MatrixDynState,
    /// Left singular vectors of `T`, `n_k x n_k`.
    pub u: DMatrix<f64>,
    /// Right singular vectors of `T`, `n_0 x n_k`.
    pub v: DMatrix<f64>,
    pub sigma: Vec<f64>,
    /// `lambda_r[i][j]`: feedback gain of layer `i` (0-based) on mode `j`.
    pub lambda_r: Vec<Vec<f64>>,
}

impl AlignedInit {
    /// One scalar system per singular direction.
    pub fn scalar_states(&self) -> Result<Vec<ScalarDynState>> {
        let eps = match self.state.rule {
            DynRule::Feedback { eps } => eps,
            DynRule::Bp => return Err(DynError::Invalid("aligned systems need random feedback".into())),
        };
        (0..self.sigma.len())
            .map(|j| {
                let lr = self.lambda_r.iter().map(|l| l[j]).collect();
                ScalarDynState::new(lr, self.sigma[j], eps, self.state.dt)
            })
            .collect()
    }
}

fn gaussian(rng: &mut Rng, rows: usize, cols: usize, sd: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| sd * rng.normal())
}

/// `n x m` matrix with orthonormal columns, `m <= n`.
fn orthonormal_frame(rng: &mut Rng, n: usize, m: usize) -> DMatrix<f64> {
    gaussian(rng, n, m, 1.0).qr().q()
}

/// Random target and feedback set up so that `W_i = U_{i+1} L_i U_i^t` and
/// `R_i(0) = U_i L_{R,i} U_{i+1}^t` with `U_1 = V`, `U_{k+1} = U` from the
/// thin SVD `T = U S V^t`. `W(0) = 0`. Feedback gains are uniform in
/// `gain_range`. Needs `dims[k] <= dims[i]` for all `i`.
pub fn aligned_init(
    dims: &[usize],
    rng: &mut Rng,
    eps: f64,
    dt: f64,
    gain_range: (f64, f64),
) -> Result<AlignedInit> {
    if dims.len() < 2 {
        return Err(DynError::Invalid("need at least input and output dimensions".into()));
    }
    let k = dims.len() - 1;
    let nk = dims[k];
    if nk == 0 || dims.iter().any(|&d| d < nk) {
        return Err(DynError::Invalid(format!("output width must be >= 1 and <= every width, got {dims:?}")));
    }
    let (lo, hi) = gain_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(DynError::Invalid(format!("gain range must satisfy 0 < lo <= hi, got {gain_range:?}")));
    }
    let target = gaussian(rng, nk, dims[0], 1.0 / (dims[0] as f64).sqrt());
    let svd = target.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let v = svd.v_t.expect("requested").transpose();
    let sigma: Vec<f64> = svd.singular_values.iter().cloned().collect();
    // frames[i] is U_{i+1}: n_i x n_k
    let mut frames = Vec::with_capacity(k + 1);
    frames.push(v.clone());
    for &n in &dims[1..k] {
        frames.push(orthonormal_frame(rng, n, nk));
    }
    frames.push(u.clone());
    let mut lambda_r = Vec::with_capacity(k);
    let mut r0 = Vec::with_capacity(k);
    let mut w = Vec::with_capacity(k);
    for i in 0..k {
        let gains: Vec<f64> = (0..nk).map(|_| rng.uniform_range(lo, hi)).collect();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(gains.clone()));
        r0.push(&frames[i] * d * frames[i + 1].transpose());
        w.push(DMatrix::zeros(dims[i + 1], dims[i]));
        lambda_r.push(gains);
    }
    let state = MatrixDynState::new(w, r0, target, DynRule::Feedback { eps }, dt)?;
    Ok(AlignedInit {
        state,
        u,
        v,
        sigma,
        lambda_r,
    })
}
