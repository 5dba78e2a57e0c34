use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::Serialize;
use urfb_core::circuits::{
    grid, output_circuit_settle, output_circuit_trace, output_grid_report, shutdown_grid_report, trace_csv,
    CircuitParams, GridReport, OutputCircuit,
};
use urfb_core::feedback::hinge_delta;
use urfb_core::tensor::gate_open;

use crate::manifest::RunManifest;

/// `h=<value>,s=<+1|-1>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub h: f64,
    pub s: i8,
}

impl FromStr for TracePoint {
    type Err = String;
    fn from_str(text: &str) -> Result<Self, String> {
        let (mut h, mut s) = (None, None);
        for part in text.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(|| format!("expected key=value, got `{part}`"))?;
            match k.trim() {
                "h" => h = Some(v.trim().parse::<f64>().map_err(|e| format!("h: {e}"))?),
                "s" => s = Some(v.trim().parse::<i8>().map_err(|e| format!("s: {e}"))?),
                other => return Err(format!("unknown trace key `{other}`")),
            }
        }
        Ok(TracePoint {
            h: h.ok_or("missing h")?,
            s: s.ok_or("missing s")?,
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CircuitArgs {
    #[arg(long, default_value_t = 10.0)]
    pub m: f64,
    /// Learning threshold S.
    #[arg(long, default_value_t = 1.0)]
    pub s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eps_osc: f64,
    #[arg(long, default_value_t = 10.0)]
    pub k: f64,
    /// Grid step for h in [-M, M].
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
    /// Margin of the hinge reference; defaults to --mu. Setting it apart from
    /// --mu checks that disagreements are reported.
    #[arg(long)]
    pub ref_mu: Option<f64>,
    /// Also write the settled micro-step trace of one input, e.g. h=2,s=1.
    #[arg(long)]
    pub trace: Option<TracePoint>,
}

#[derive(Serialize)]
struct Report {
    equivalent: bool,
    output_checked: usize,
    /// `(h, s, expected, got)`.
    output_counterexamples: Vec<(f64, f64, f64, f64)>,
    shutdown_checked: usize,
    /// `(x, delta, expected, got)`.
    shutdown_counterexamples: Vec<(f64, f64, f64, f64)>,
}

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

fn describe(name: &str, r: &GridReport, a: &str, b: &str) -> String {
    let mut s = format!("{name}: {} points, {} counterexamples\n", r.checked, r.counterexamples.len());
    for c in &r.counterexamples {
        let got = if c.3.is_nan() { "no single value".to_string() } else { c.3.to_string() };
        let _ = writeln!(s, "  {a}={} {b}={} expected {} got {got}", c.0, c.1, c.2);
    }
    s
}

/// Grid checks of both circuits, written to `report.json` and `report.txt`,
/// plus `trace.csv` when requested. Fails when any counterexample is found.
pub fn cmd_circuit(args: &CircuitArgs, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new("circuit", args.clone(), 0, out);
    let p = CircuitParams {
        m: args.m,
        s: args.s,
        mu: args.mu,
        eps_osc: args.eps_osc,
        k: args.k,
    };
    let ref_mu = args.ref_mu.unwrap_or(args.mu);
    if let Some(tp) = args.trace {
        let c = OutputCircuit::new(p, tp.h, tp.s)?;
        let settled = output_circuit_settle(&c)?;
        let rows = output_circuit_trace(&c, settled.transient + settled.cycle.len())?;
        let tail = rows[rows.len() - settled.period_micro..].to_vec();
        std::fs::write(out.join("trace.csv"), trace_csv(&tail))?;
        manifest.add("trace.csv");
        println!("trace h={} s={}: cycle {:?}, period {} micro-steps", tp.h, tp.s, settled.cycle, settled.period_micro);
    }
    let output = output_grid_report(p, args.step, |h, s| hinge_reference(h, s, ref_mu))?;
    let xs = grid(-3.0, 3.0, 240);
    let ds = grid(-0.999 * p.k, 0.999 * p.k, 200);
    let shutdown = shutdown_grid_report(p.k, &xs, &ds, |x, d| if gate_open(x) { d } else { 0.0 })?;
    let report = Report {
        equivalent: output.is_clean() && shutdown.is_clean(),
        output_checked: output.checked,
        output_counterexamples: output.counterexamples.clone(),
        shutdown_checked: shutdown.checked,
        shutdown_counterexamples: shutdown.counterexamples.clone(),
    };
    let text = format!(
        "equivalent: {}\n{}{}",
        report.equivalent,
        describe("output circuit", &output, "h", "s"),
        describe("shutdown circuit", &shutdown, "x", "delta")
    );
    std::fs::write(out.join("report.txt"), &text)?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    manifest.add("report.txt");
    manifest.add("report.json");
    manifest.finish().context("writing manifest")?;
    print!("{text}");
    if !report.equivalent {
        bail!(anyhow!(
            "circuits disagree with the reference at {} points",
            report.output_counterexamples.len() + report.shutdown_counterexamples.len()
        ));
    }
    Ok(())
}
