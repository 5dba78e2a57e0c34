use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::Serialize;

use super::matrix::{DynRule, MatrixDynState};
use super::{first_passage, DynError, Result, PASSAGE_FRACTION};
use crate::tensor::Rng;

/// Deep linear regression onto a random product target, compared across
/// BP (random `W(0)`) and random feedback runs (`W(0) = 0`) at several `eps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    /// `n_0, n_1, ..., n_k`.
    pub dims: Vec<usize>,
    /// Entry sd of the factors whose product is the target.
    pub target_sd: f64,
    /// Entry sd of `R(0)` in the feedback runs.
    pub feedback_sd: f64,
    /// Entry sd of `W(0)` in the BP run.
    pub bp_init_sd: f64,
    pub eps: Vec<f64>,
    pub dt: f64,
    pub max_iters: usize,
    /// Stop each run at first passage instead of running `max_iters`.
    pub stop_at_passage: bool,
    /// Record every this many iterations (the last one is always recorded).
    pub record_every: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dims: vec![40, 100, 100, 10],
            target_sd: 0.2,
            feedback_sd: 0.01,
            bp_init_sd: 0.2,
            eps: vec![0.0, 0.25, 0.5, 1.0],
            dt: 1e-2,
            max_iters: 5000,
            stop_at_passage: false,
            record_every: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRun {
    /// `None` for the BP run.
    pub eps: Option<f64>,
    pub iterations: Vec<usize>,
    pub log10_e2: Vec<f64>,
    /// `corr[l][t]`: `corr(W_l, R_l^t)` at recorded iteration `t`.
    pub corr: Vec<Vec<f64>>,
    pub passage: Option<usize>,
    pub final_iteration: usize,
    pub final_corr: Vec<f64>,
    /// Set when the run stopped on divergence.
    pub failure: Option<String>,
}

impl SimRun {
    pub fn label(&self) -> String {
        match self.eps {
            None => "bp".into(),
            Some(e) => format!("{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimBundle {
    pub config: SimConfig,
    pub passage_fraction: f64,
    /// The BP run first, then one run per `eps` in config order.
    pub runs: Vec<SimRun>,
}

impl SimBundle {
    pub fn bp(&self) -> &SimRun {
        &self.runs[0]
    }

    pub fn feedback_runs(&self) -> &[SimRun] {
        &self.runs[1..]
    }

    /// `iteration,eps,log10_e2,corr_layer_1..corr_layer_k`.
    pub fn to_csv(&self) -> String {
        let k = self.config.dims.len() - 1;
        let mut out = String::from("iteration,eps,log10_e2");
        for l in 1..=k {
            let _ = write!(out, ",corr_layer_{l}");
        }
        out.push('\n');
        for run in &self.runs {
            let label = run.label();
            for (t, &it) in run.iterations.iter().enumerate() {
                let _ = write!(out, "{it},{label},{}", run.log10_e2[t]);
                for c in &run.corr {
                    let _ = write!(out, ",{}", c[t]);
                }
                out.push('\n');
            }
        }
        out
    }
}

fn gaussian(rng: &mut Rng, rows: usize, cols: usize, sd: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| sd * rng.normal())
}

fn run(mut s: MatrixDynState, cfg: &SimConfig, eps: Option<f64>) -> SimRun {
    let k = s.depth();
    let every = cfg.record_every.max(1);
    let mut r = SimRun {
        eps,
        iterations: Vec::new(),
        log10_e2: Vec::new(),
        corr: vec![Vec::new(); k],
        passage: None,
        final_iteration: 0,
        final_corr: Vec::new(),
        failure: None,
    };
    let mut e2 = Vec::with_capacity(cfg.max_iters + 1);
    loop {
        let it = s.iteration;
        if it == cfg.max_iters {
            let v = s.error_sq();
            e2.push(v);
            push_record(&mut r, it, v, s.correlations());
            break;
        }
        let corr = it.is_multiple_of(every).then(|| s.correlations());
        let v = match s.step() {
            Ok(v) => v,
            Err(e) => {
                r.failure = Some(e.to_string());
                break;
            }
        };
        e2.push(v);
        if let Some(c) = corr {
            push_record(&mut r, it, v, c);
        }
        if cfg.stop_at_passage && v <= PASSAGE_FRACTION * e2[0] {
            let v = s.error_sq();
            e2.push(v);
            push_record(&mut r, s.iteration, v, s.correlations());
            break;
        }
    }
    r.passage = first_passage(&e2);
    r.final_iteration = *r.iterations.last().unwrap_or(&0);
    r.final_corr = r.corr.iter().map(|c| *c.last().unwrap_or(&f64::NAN)).collect();
    r
}

fn push_record(r: &mut SimRun, it: usize, e2: f64, corr: Vec<f64>) {
    r.iterations.push(it);
    r.log10_e2.push(e2.log10());
    for (c, x) in r.corr.iter_mut().zip(corr) {
        c.push(x);
    }
}

/// Builds the target and initial conditions from `cfg.seed` and runs BP
/// plus one random feedback run per `eps`, each on its own thread. All
/// feedback runs share the same `R(0)`.
pub fn replicate_sim(cfg: &SimConfig) -> Result<SimBundle> {
    let dims = &cfg.dims;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(DynError::Invalid(format!("bad dimensions {dims:?}")));
    }
    let k = dims.len() - 1;
    let root = Rng::new(cfg.seed);
    let mut rt = root.derive(0);
    // factors W*_i with the same shapes as W_i, product n_k x n_0
    let mut target = gaussian(&mut rt, dims[1], dims[0], cfg.target_sd);
    for i in 1..k {
        target = gaussian(&mut rt, dims[i + 1], dims[i], cfg.target_sd) * target;
    }
    let mut rw = root.derive(1);
    let bp_w: Vec<DMatrix<f64>> = (0..k).map(|i| gaussian(&mut rw, dims[i + 1], dims[i], cfg.bp_init_sd)).collect();
    let mut rr = root.derive(2);
    let r0: Vec<DMatrix<f64>> = (0..k).map(|i| gaussian(&mut rr, dims[i], dims[i + 1], cfg.feedback_sd)).collect();
    let zero_w: Vec<DMatrix<f64>> = (0..k).map(|i| DMatrix::zeros(dims[i + 1], dims[i])).collect();

    let mut states = vec![(
        MatrixDynState::new(bp_w, r0.clone(), target.clone(), DynRule::Bp, cfg.dt)?,
        None,
    )];
    for &eps in &cfg.eps {
        let s = MatrixDynState::new(zero_w.clone(), r0.clone(), target.clone(), DynRule::Feedback { eps }, cfg.dt)?;
        states.push((s, Some(eps)));
    }
    let runs = std::thread::scope(|scope| {
        let handles: Vec<_> = states
            .into_iter()
            .map(|(s, eps)| scope.spawn(move || run(s, cfg, eps)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    Ok(SimBundle {
        config: cfg.clone(),
        passage_fraction: PASSAGE_FRACTION,
        runs,
    })
}
