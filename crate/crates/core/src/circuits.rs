//! Discrete-time local circuits that produce the output error signal and
//! shut feedback off at saturated units.
//!
//! The output circuit has a main unit `delta_c` with input
//! `H = h + 2M s - 2M t` and a control unit `t` driven by `delta_c`. Updates
//! are synchronous in two phases per step: `delta_c` first, then `t`.
//! Where the closed intervals of the `delta_c` transfer function meet, the
//! first listed region wins (so `H = M` maps to 1 and `H = -M` to 0).

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("input {value} outside the supported range [-{bound}, {bound}]")]
    OutOfRange { value: f64, bound: f64 },
    #[error("feedback {value} must lie strictly inside (-{bound}, {bound})")]
    FeedbackRange { value: f64, bound: f64 },
    #[error("supervisory signal must be +1 or -1, got {0}")]
    Supervision(i8),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("no fixed point or cycle within {0} steps")]
    NoConvergence(usize),
    #[error("cycle {0:?} never rests at 0 and has no single value")]
    RestlessCycle(Vec<f64>),
}

pub type Result<T> = std::result::Result<T, CircuitError>;

/// Steps allowed before the output circuit must have settled.
pub const MAX_STEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitParams {
    /// Bound on `|h|`.
    pub m: f64,
    /// Learning threshold.
    pub s: f64,
    pub mu: f64,
    /// Overshoot of the outermost transfer regions.
    pub eps_osc: f64,
    /// Bound on `|delta|` for the shutdown circuit.
    pub k: f64,
}

impl Default for CircuitParams {
    fn default() -> Self {
        CircuitParams {
            m: 10.0,
            s: 1.0,
            mu: 1.0,
            eps_osc: 0.1,
            k: 10.0,
        }
    }
}

impl CircuitParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.m) || !pos(self.k) || !pos(self.eps_osc) {
            return Err(CircuitError::Invalid(format!("M, K and eps must be > 0: {self:?}")));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(CircuitError::Invalid(format!("mu must lie in (0, 1], got {}", self.mu)));
        }
        if !(self.s >= 0.0 && self.s < self.m) {
            return Err(CircuitError::Invalid(format!("S must lie in [0, M), got {}", self.s)));
        }
        Ok(())
    }

    /// Transfer function of the main output unit.
    pub fn sigma_delta(&self, x: f64) -> f64 {
        let (m, s) = (self.m, self.s);
        if x > 2.0 * m + s {
            1.0 + self.eps_osc
        } else if x >= m {
            1.0
        } else if x >= -m {
            0.0
        } else if x >= -2.0 * m - s {
            -self.mu
        } else {
            -self.mu - self.eps_osc
        }
    }

    /// Transfer function of the control unit.
    pub fn sigma_t(&self, x: f64) -> f64 {
        if x > 1.0 {
            1.0
        } else if x >= -self.mu {
            0.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputCircuit {
    pub params: CircuitParams,
    /// Feedforward input to the output unit, `|h| <= M`.
    pub h: f64,
    /// Supervisory signal: +1 when the unit's class is presented, else -1.
    pub supervision: i8,
    pub delta: f64,
    pub t: f64,
}

impl OutputCircuit {
    /// Circuit at rest (`delta = t = 0`) with the given inputs.
    pub fn new(params: CircuitParams, h: f64, supervision: i8) -> Result<Self> {
        params.validate()?;
        if supervision != 1 && supervision != -1 {
            return Err(CircuitError::Supervision(supervision));
        }
        if !(h.abs() <= params.m) {
            return Err(CircuitError::OutOfRange { value: h, bound: params.m });
        }
        Ok(OutputCircuit {
            params,
            h,
            supervision,
            delta: 0.0,
            t: 0.0,
        })
    }

    /// `H = h + 2M s - 2M t`.
    pub fn total_input(&self) -> f64 {
        let m2 = 2.0 * self.params.m;
        self.h + m2 * f64::from(self.supervision) - m2 * self.t
    }

    fn update_delta(&mut self) {
        self.delta = self.params.sigma_delta(self.total_input());
    }

    fn update_t(&mut self) {
        self.t = self.params.sigma_t(self.delta);
    }
}

/// One synchronous step: `delta_c`, then `t_c`.
pub fn output_circuit_step(c: &OutputCircuit) -> Result<OutputCircuit> {
    if !(c.h.abs() <= c.params.m) {
        return Err(CircuitError::OutOfRange {
            value: c.h,
            bound: c.params.m,
        });
    }
    let mut n = *c;
    n.update_delta();
    n.update_t();
    Ok(n)
}

/// One row per half-step: micro-step index, `delta_c`, `t_c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub micro_step: usize,
    pub delta: f64,
    pub t: f64,
}

/// Micro-step trace for `steps` full steps, starting with the initial state.
pub fn output_circuit_trace(c: &OutputCircuit, steps: usize) -> Result<Vec<TraceRow>> {
    output_circuit_step(c)?;
    let mut s = *c;
    let mut rows = vec![TraceRow {
        micro_step: 0,
        delta: s.delta,
        t: s.t,
    }];
    for i in 0..steps {
        s.update_delta();
        rows.push(TraceRow {
            micro_step: 2 * i + 1,
            delta: s.delta,
            t: s.t,
        });
        s.update_t();
        rows.push(TraceRow {
            micro_step: 2 * i + 2,
            delta: s.delta,
            t: s.t,
        });
    }
    Ok(rows)
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("step,delta,t\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.micro_step, r.delta, r.t);
    }
    out
}

/// Long-run behaviour of the output circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct Settled {
    /// Values of `delta_c` after each full step over one period.
    pub cycle: Vec<f64>,
    /// Period in micro-steps (2 for a fixed point).
    pub period_micro: usize,
    /// Full steps taken before entering the cycle.
    pub transient: usize,
}

/// Runs full steps until a state repeats.
pub fn output_circuit_settle(c: &OutputCircuit) -> Result<Settled> {
    let mut s = output_circuit_step(c)?;
    let mut seen = vec![(s.delta, s.t)];
    for _ in 1..MAX_STEPS {
        s = output_circuit_step(&s)?;
        let key = (s.delta, s.t);
        if let Some(first) = seen.iter().position(|&v| v == key) {
            let cycle: Vec<f64> = seen[first..].iter().map(|v| v.0).collect();
            return Ok(Settled {
                period_micro: 2 * cycle.len(),
                cycle,
                transient: first,
            });
        }
        seen.push(key);
    }
    Err(CircuitError::NoConvergence(MAX_STEPS))
}

/// The value the circuit stands for once oscillations are ignored: the
/// fixed point, or 0 for any cycle that passes through 0.
pub fn output_circuit_effective(c: &OutputCircuit) -> Result<f64> {
    let s = output_circuit_settle(c)?;
    if s.cycle.len() == 1 {
        return Ok(s.cycle[0]);
    }
    if s.cycle.contains(&0.0) {
        return Ok(0.0);
    }
    Err(CircuitError::RestlessCycle(s.cycle))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShutdownCircuit {
    pub k: f64,
    /// 1 while `x >= 1`.
    pub u: f64,
    /// -1 while `x <= -1`.
    pub v: f64,
}

impl ShutdownCircuit {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(CircuitError::Invalid(format!("K must be > 0, got {k}")));
        }
        Ok(ShutdownCircuit { k, u: 0.0, v: 0.0 })
    }

    /// Passes values at or above `-K`, silences the rest.
    pub fn sigma(&self, y: f64) -> f64 {
        if y >= -self.k {
            y
        } else {
            0.0
        }
    }
}

/// Sets the control units from the feedforward activity `x`, then returns
/// the gated feedback `sigma(delta - 2K u + 2K v)`. Needs `|delta| < K`.
pub fn shutdown_step(c: &mut ShutdownCircuit, x: f64, delta: f64) -> Result<f64> {
    if !(delta.abs() < c.k) {
        return Err(CircuitError::FeedbackRange { value: delta, bound: c.k });
    }
    c.u = if x >= 1.0 { 1.0 } else { 0.0 };
    c.v = if x <= -1.0 { -1.0 } else { 0.0 };
    debug_assert!(c.u * c.v == 0.0);
    Ok(c.sigma(delta - 2.0 * c.k * c.u + 2.0 * c.k * c.v))
}

/// Grid points where a circuit disagrees with a reference rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub checked: usize,
    /// `(input a, input b, expected, got)`; `got` is NaN when the circuit
    /// had no single value.
    pub counterexamples: Vec<(f64, f64, f64, f64)>,
}

impl GridReport {
    pub fn is_clean(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// `n + 1` evenly spaced points from `lo` to `hi` inclusive.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Compares `output_circuit_effective` against `reference(h, s)` over
/// `h` in `[-M, M]` at `step` and `s` in `{+1, -1}`.
pub fn output_grid_report<F>(params: CircuitParams, step: f64, reference: F) -> Result<GridReport>
where
    F: Fn(f64, i8) -> f64,
{
    params.validate()?;
    let n = (2.0 * params.m / step).round() as usize;
    let mut report = GridReport {
        checked: 0,
        counterexamples: Vec::new(),
    };
    for h in grid(-params.m, params.m, n) {
        for s in [1i8, -1] {
            let want = reference(h, s);
            let got = output_circuit_effective(&OutputCircuit::new(params, h, s)?).unwrap_or(f64::NAN);
            report.checked += 1;
            if got != want {
                report.counterexamples.push((h, f64::from(s), want, got));
            }
        }
    }
    Ok(report)
}

/// Compares `shutdown_step` against `reference(x, delta)` on the product
/// of the two grids.
pub fn shutdown_grid_report<F>(k: f64, xs: &[f64], deltas: &[f64], reference: F) -> Result<GridReport>
where
    F: Fn(f64, f64) -> f64,
{
    let mut c = ShutdownCircuit::new(k)?;
    let mut report = GridReport {
        checked: 0,
        counterexamples: Vec::new(),
    };
    for &x in xs {
        for &d in deltas {
            let got = shutdown_step(&mut c, x, d)?;
            let want = reference(x, d);
            report.checked += 1;
            if got != want {
                report.counterexamples.push((x, d, want, got));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::hinge_delta;
    use crate::tensor::gate_open;
    use proptest::prelude::*;

    fn p() -> CircuitParams {
        CircuitParams::default()
    }

    fn circuit(h: f64, s: i8) -> OutputCircuit {
        OutputCircuit::new(p(), h, s).unwrap()
    }

    /// Single-unit hinge delta: the unit is the target when `s = 1`.
    fn hinge_reference(h: f64, s: i8, mu: f64) -> f64 {
        let mut out = [0.0; 2];
        if s == 1 {
            hinge_delta(&[h, 0.0], 0, mu, &mut out);
            out[0]
        } else {
            hinge_delta(&[0.0, h], 0, mu, &mut out);
            out[1]
        }
    }

    #[test]
    fn present_below_threshold_holds_at_one() {
        for h in [-10.0, -3.0, 0.0, 0.7, 1.0] {
            let s = output_circuit_settle(&circuit(h, 1)).unwrap();
            assert_eq!(s.cycle, vec![1.0], "h = {h}");
            assert_eq!(s.period_micro, 2);
        }
    }

    #[test]
    fn present_above_threshold_oscillates_through_zero() {
        let c = circuit(3.0, 1);
        let s = output_circuit_settle(&c).unwrap();
        assert_eq!(s.cycle, vec![1.1, 0.0]);
        assert_eq!(s.period_micro, 4);
        let tr = output_circuit_trace(&c, 2).unwrap();
        let states: Vec<(f64, f64)> = tr.iter().map(|r| (r.delta, r.t)).collect();
        assert_eq!(states, vec![(0.0, 0.0), (1.1, 0.0), (1.1, 1.0), (0.0, 1.0), (0.0, 0.0)]);
        assert_eq!(output_circuit_effective(&c).unwrap(), 0.0);
    }

    #[test]
    fn absent_above_minus_threshold_holds_at_minus_mu() {
        let params = CircuitParams { mu: 0.5, ..p() };
        for h in [-1.0, 0.0, 4.0, 9.5] {
            let c = OutputCircuit::new(params, h, -1).unwrap();
            assert_eq!(output_circuit_settle(&c).unwrap().cycle, vec![-0.5], "h = {h}");
        }
    }

    #[test]
    fn absent_below_minus_threshold_oscillates() {
        let s = output_circuit_settle(&circuit(-2.0, -1)).unwrap();
        assert_eq!(s.cycle.len(), 2);
        assert!(s.cycle.contains(&0.0) && s.cycle.contains(&-1.1));
        assert_eq!(s.period_micro, 4);
    }

    #[test]
    fn threshold_itself_counts_as_below() {
        assert_eq!(output_circuit_effective(&circuit(1.0, 1)).unwrap(), 1.0);
    }

    #[test]
    fn boundary_at_the_input_bound_follows_the_first_region() {
        // H = 3M: oscillates between 1 + eps and 1 without resting
        assert!(matches!(
            output_circuit_effective(&circuit(10.0, 1)),
            Err(CircuitError::RestlessCycle(_))
        ));
        // H = -M falls in the zero region and stays there
        assert_eq!(output_circuit_effective(&circuit(10.0, -1)).unwrap(), 0.0);
    }

    #[test]
    fn contract_violations() {
        assert!(OutputCircuit::new(p(), 10.5, 1).is_err());
        assert!(OutputCircuit::new(p(), 0.0, 0).is_err());
        let mut c = circuit(0.0, 1);
        c.h = -11.0;
        assert!(output_circuit_step(&c).is_err());
        let mut s = ShutdownCircuit::new(10.0).unwrap();
        assert!(shutdown_step(&mut s, 0.0, 10.0).is_err());
        assert!(CircuitParams { mu: 1.5, ..p() }.validate().is_err());
    }

    #[test]
    fn shutdown_examples() {
        let mut c = ShutdownCircuit::new(10.0).unwrap();
        assert_eq!(shutdown_step(&mut c, 0.5, 0.3).unwrap(), 0.3);
        for d in [-9.9, -1.0, 0.0, 4.0, 9.9] {
            assert_eq!(shutdown_step(&mut c, 1.2, d).unwrap(), 0.0);
        }
        assert_eq!(shutdown_step(&mut c, -1.0, 0.3).unwrap(), 0.0);
        assert_eq!(c.v, -1.0);
        assert_eq!(c.u, 0.0);
    }

    #[test]
    fn grid_agrees_away_from_the_input_bound() {
        let r = output_grid_report(p(), 0.1, |h, s| hinge_reference(h, s, 1.0)).unwrap();
        assert_eq!(r.checked, 402);
        let bad: Vec<f64> = r.counterexamples.iter().map(|c| c.0).collect();
        assert!(bad.iter().all(|&h| h == 10.0), "{:?}", r.counterexamples);
    }

    #[test]
    fn shutdown_matches_the_gate_on_a_grid() {
        let xs = grid(-3.0, 3.0, 120);
        let ds = grid(-9.5, 9.5, 38);
        let r = shutdown_grid_report(10.0, &xs, &ds, |x, d| if gate_open(x) { d } else { 0.0 }).unwrap();
        assert_eq!(r.checked, 121 * 39);
        assert!(r.is_clean(), "{:?}", r.counterexamples);
    }

    #[test]
    fn trace_csv_layout() {
        let tr = output_circuit_trace(&circuit(0.0, 1), 1).unwrap();
        assert_eq!(trace_csv(&tr), "step,delta,t\n0,0,0\n1,1,0\n2,1,0\n");
    }

    proptest! {
        #[test]
        fn effective_value_ignores_the_overshoot(h in -9.99f64..9.99, s in prop::bool::ANY, eps in 0.001f64..1.0) {
            let s = if s { 1 } else { -1 };
            let a = output_circuit_effective(&OutputCircuit::new(p(), h, s).unwrap()).unwrap();
            let b = output_circuit_effective(&OutputCircuit::new(CircuitParams { eps_osc: eps, ..p() }, h, s).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn control_units_never_both_fire(x in -5.0f64..5.0, d in -9.99f64..9.99) {
            let mut c = ShutdownCircuit::new(10.0).unwrap();
            shutdown_step(&mut c, x, d).unwrap();
            prop_assert_eq!(c.u * c.v, 0.0);
        }
    }
}
