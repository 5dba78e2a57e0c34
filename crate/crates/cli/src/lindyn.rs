use std::path::Path;

use anyhow::{bail, Result};
use clap::Args;
use serde::Serialize;
use urfb_core::lindyn::{rate_monotonicity, replicate_sim, MonotonicityReport, SimConfig};

use crate::manifest::RunManifest;
use crate::plot::{line_chart, Panel};

#[derive(Debug, Clone, Args)]
pub struct LindynArgs {
    /// Number of layers; widths default to 40,100,..,100,10.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Explicit widths n_0,..,n_k (overrides --k).
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Feedback interpolation values, 0 = fixed, 1 = updated.
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Include the BP run (default: only when --eps is not given).
    #[arg(long)]
    pub bp: Option<bool>,
    #[arg(long, default_value_t = 1e-2)]
    pub dt: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    #[arg(long)]
    pub stop_at_passage: bool,
    #[arg(long, default_value_t = 10)]
    pub record_every: usize,
    #[arg(long, default_value_t = 0.2)]
    pub target_sd: f64,
    #[arg(long, default_value_t = 0.01)]
    pub feedback_sd: f64,
    #[arg(long, default_value_t = 0.2)]
    pub bp_init_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl LindynArgs {
    pub fn config(&self) -> Result<SimConfig> {
        let dims = match &self.dims {
            Some(d) => d.clone(),
            None => {
                if self.k == 0 {
                    bail!("--k must be >= 1");
                }
                let mut d = vec![40];
                d.extend(std::iter::repeat_n(100, self.k - 1));
                d.push(10);
                d
            }
        };
        let defaults = SimConfig::default();
        Ok(SimConfig {
            dims,
            target_sd: self.target_sd,
            feedback_sd: self.feedback_sd,
            bp_init_sd: self.bp_init_sd,
            eps: self.eps.clone().unwrap_or(defaults.eps),
            dt: self.dt,
            max_iters: self.max_iters,
            stop_at_passage: self.stop_at_passage,
            record_every: self.record_every,
            seed: self.seed,
        })
    }
}

#[derive(Serialize)]
struct RunSummary {
    label: String,
    passage: Option<usize>,
    final_iteration: usize,
    final_corr: Vec<f64>,
    failure: Option<String>,
}

#[derive(Serialize)]
struct Summary {
    passage_fraction: f64,
    runs: Vec<RunSummary>,
    monotonicity: MonotonicityReport,
}

/// Writes `lindyn.csv`, `summary.json`, `lindyn.png` (log error, then one
/// correlation panel per layer) and the manifest.
pub fn cmd_lindyn(args: &LindynArgs, out: &Path) -> Result<()> {
    let cfg = args.config()?;
    let with_bp = args.bp.unwrap_or(args.eps.is_none());
    std::fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new("lindyn", cfg.clone(), cfg.seed, out);
    let mut bundle = replicate_sim(&cfg)?;
    if let Some(f) = bundle.runs.iter().find_map(|r| r.failure.as_ref().map(|f| (r.label(), f.clone()))) {
        bail!("run eps={} failed: {}", f.0, f.1);
    }
    let mono = rate_monotonicity(&cfg.eps, |e| {
        bundle.feedback_runs().iter().find(|r| r.eps == Some(e)).and_then(|r| r.passage)
    });
    if !with_bp {
        bundle.runs.retain(|r| r.eps.is_some());
    }
    std::fs::write(out.join("lindyn.csv"), bundle.to_csv())?;
    manifest.add("lindyn.csv");

    let summary = Summary {
        passage_fraction: bundle.passage_fraction,
        runs: bundle
            .runs
            .iter()
            .map(|r| RunSummary {
                label: r.label(),
                passage: r.passage,
                final_iteration: r.final_iteration,
                final_corr: r.final_corr.clone(),
                failure: r.failure.clone(),
            })
            .collect(),
        monotonicity: mono,
    };
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    manifest.add("summary.json");
    for r in &summary.runs {
        println!("{:>5}: passage {:?}, final corr {:?}", r.label, r.passage, r.final_corr);
    }
    println!(
        "passage never slower with eps: {}, strictly faster: {}",
        summary.monotonicity.never_slower, summary.monotonicity.strictly_faster
    );

    let xs = |r: &urfb_core::lindyn::SimRun| r.iterations.iter().map(|&i| i as f64).collect::<Vec<_>>();
    let mut panels = vec![Panel {
        series: bundle.runs.iter().map(|r| xs(r).into_iter().zip(r.log10_e2.iter().cloned()).collect()).collect(),
        y_range: None,
    }];
    for l in 0..cfg.dims.len() - 1 {
        panels.push(Panel {
            series: bundle.runs.iter().map(|r| xs(r).into_iter().zip(r.corr[l].iter().cloned()).collect()).collect(),
            y_range: Some((-1.0, 1.0)),
        });
    }
    line_chart(&out.join("lindyn.png"), &panels)?;
    manifest.add("lindyn.png");
    manifest.finish()?;
    Ok(())
}
