use super::{check_dt, check_growth, DynError, Result, PASSAGE_FRACTION};
use crate::tensor::Rng;

/// One decoupled mode: `lambda_i` are the layer gains, `lambda_r[i]` the
/// feedback gains (`lambda_r[0]` never enters the dynamics).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarDynState {
    pub lambda: Vec<f64>,
    pub lambda_r: Vec<f64>,
    pub lambda_t: f64,
    pub eps: f64,
    pub dt: f64,
    pub iteration: usize,
    e0: f64,
}

impl ScalarDynState {
    /// State at `lambda = 0`.
    pub fn new(lambda_r: Vec<f64>, lambda_t: f64, eps: f64, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        if lambda_r.is_empty() {
            return Err(DynError::Invalid("need at least one layer".into()));
        }
        if lambda_r[1..].iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(DynError::Invalid(format!("feedback gains must be > 0, got {lambda_r:?}")));
        }
        if !(lambda_t > 0.0 && lambda_t.is_finite()) {
            return Err(DynError::Invalid(format!("target gain must be > 0, got {lambda_t}")));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(DynError::Invalid(format!("eps must be finite and >= 0, got {eps}")));
        }
        Ok(ScalarDynState {
            lambda: vec![0.0; lambda_r.len()],
            lambda_r,
            lambda_t,
            eps,
            dt,
            iteration: 0,
            e0: lambda_t,
        })
    }

    pub fn depth(&self) -> usize {
        self.lambda.len()
    }

    /// `e = lambda_T - prod lambda_i`.
    pub fn error(&self) -> f64 {
        self.lambda_t - self.lambda.iter().product::<f64>()
    }

    pub fn error_sq(&self) -> f64 {
        let e = self.error();
        e * e
    }

    /// `d lambda_i = prod_{j>i}(lambda_{R,j} + eps lambda_j) * e * prod_{j<i} lambda_j`.
    pub fn derivatives(&self) -> Vec<f64> {
        let k = self.lambda.len();
        let e = self.error();
        let mut above = vec![1.0; k];
        for i in (0..k.saturating_sub(1)).rev() {
            above[i] = above[i + 1] * (self.lambda_r[i + 1] + self.eps * self.lambda[i + 1]);
        }
        let mut below = 1.0;
        let mut d = Vec::with_capacity(k);
        for i in 0..k {
            d.push(above[i] * e * below);
            below *= self.lambda[i];
        }
        d
    }

    pub fn step(&mut self) -> Result<()> {
        let d = self.derivatives();
        for (l, v) in self.lambda.iter_mut().zip(d) {
            *l += self.dt * v;
        }
        self.iteration += 1;
        check_growth(self.iteration, self.error().abs(), self.e0.abs(), self.dt)
    }

    /// `e^2` per iteration from the current state through `max_iters` steps,
    /// stopping early at first passage when asked.
    pub fn trajectory(&mut self, max_iters: usize, stop_at_passage: bool) -> Result<Vec<f64>> {
        let mut e2 = Vec::with_capacity(max_iters + 1);
        e2.push(self.error_sq());
        for _ in 0..max_iters {
            self.step()?;
            let v = self.error_sq();
            e2.push(v);
            if stop_at_passage && v <= PASSAGE_FRACTION * e2[0] {
                break;
            }
        }
        Ok(e2)
    }

    /// Signed residuals `lambda_{R,i} lambda_i + eps/2 lambda_i^2 - lambda_{i-1}^2 / 2`
    /// with their scales `lambda_{i-1}^2 / 2`, for `i = 2..k`.
    pub fn conservation_residuals(&self) -> Vec<(f64, f64)> {
        (1..self.lambda.len())
            .map(|i| {
                let l = self.lambda[i];
                let scale = 0.5 * self.lambda[i - 1] * self.lambda[i - 1];
                (self.lambda_r[i] * l + 0.5 * self.eps * l * l - scale, scale)
            })
            .collect()
    }
}

/// One explicit Euler step on the scalar system.
pub fn euler_step_scalar(s: &ScalarDynState) -> Result<ScalarDynState> {
    let mut n = s.clone();
    n.step()?;
    Ok(n)
}

/// Largest residual of the conserved relations at this state, each
/// relative to its own `lambda_{i-1}^2 / 2`.
pub fn conserved_check(s: &ScalarDynState) -> f64 {
    s.conservation_residuals()
        .into_iter()
        .map(|(r, scale)| r.abs() / (scale + f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Tracks conserved-relation residuals along a trajectory. Each relation's
/// largest absolute residual is measured against the largest
/// `lambda_{i-1}^2 / 2` seen, since pointwise ratios are 0/0 near the start.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConservationMonitor {
    max_residual: Vec<f64>,
    max_scale: Vec<f64>,
}

impl ConservationMonitor {
    pub fn observe(&mut self, s: &ScalarDynState) {
        let r = s.conservation_residuals();
        if self.max_residual.len() != r.len() {
            self.max_residual = vec![0.0; r.len()];
            self.max_scale = vec![0.0; r.len()];
        }
        for (i, (res, scale)) in r.into_iter().enumerate() {
            self.max_residual[i] = self.max_residual[i].max(res.abs());
            self.max_scale[i] = self.max_scale[i].max(scale);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.max_residual.iter().cloned().fold(0.0, f64::max)
    }

    pub fn relative(&self) -> f64 {
        self.max_residual
            .iter()
            .zip(&self.max_scale)
            .map(|(&r, &s)| if r == 0.0 { 0.0 } else { r / s })
            .fold(0.0, f64::max)
    }
}

/// Passage iterations per `eps` and whether larger `eps` is never slower.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MonotonicityReport {
    pub eps: Vec<f64>,
    /// `None` when the run did not pass within its budget.
    pub passage: Vec<Option<usize>>,
    pub threshold: f64,
    pub never_slower: bool,
    pub strictly_faster: bool,
}

/// Runs `passage(eps)` for each `eps` and compares every pair with
/// `eps_a < eps_b`. A missing passage counts as infinitely slow.
pub fn rate_monotonicity<F>(eps_list: &[f64], mut passage: F) -> MonotonicityReport
where
    F: FnMut(f64) -> Option<usize>,
{
    let passages: Vec<Option<usize>> = eps_list.iter().map(|&e| passage(e)).collect();
    let key = |p: Option<usize>| p.map_or(f64::INFINITY, |v| v as f64);
    let mut never_slower = true;
    let mut strictly_faster = true;
    for a in 0..eps_list.len() {
        for b in 0..eps_list.len() {
            if eps_list[a] < eps_list[b] {
                let (pa, pb) = (key(passages[a]), key(passages[b]));
                never_slower &= pb <= pa;
                strictly_faster &= pb < pa;
            }
        }
    }
    MonotonicityReport {
        eps: eps_list.to_vec(),
        passage: passages,
        threshold: PASSAGE_FRACTION,
        never_slower,
        strictly_faster,
    }
}

/// Draws `(lambda_{R,2}, lambda_{R,3})` with both below `0.05 * lambda_t` and
/// `lambda_{R,2} > (1 + sqrt(1 + eps_max)) / 2 * lambda_{R,3}`.
pub fn sample_ordered_feedback(rng: &mut Rng, lambda_t: f64, eps_max: f64) -> (f64, f64) {
    let cap = 0.05 * lambda_t;
    let c = (1.0 + (1.0 + eps_max).sqrt()) / 2.0;
    let r3 = rng.uniform_range(0.1, 0.9) * cap / c;
    let lo = c * r3;
    let r2 = lo + (cap - lo) * rng.uniform_range(0.05, 1.0);
    (r2, r3)
}
