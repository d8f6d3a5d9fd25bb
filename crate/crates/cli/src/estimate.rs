use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use brownlab::exponents::{
    estimate_eta, estimate_qn, eta_formula, fit_exponent, xi_formula, EstimatorGrid, QN_CSV_HEADER,
};
use brownlab::fractal::{dimension_runs, FractalParams, FractalSet};
use brownlab::grid::strip_exit_experiment;
use brownlab::operator::{
    make_config, power_iterate, sample_config, separation_ratio_one, weighted_coupling_experiment,
    ConfigKind, OperatorGrid,
};
use brownlab::stats::{ols, RunningStats};
use brownlab::{StreamKey, DEFAULT_SEED};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{parse_list, Params};
use crate::{Estimator, UsageError};

#[derive(Debug, Serialize)]
struct Summary {
    estimate: f64,
    stderr: f64,
    target: Option<f64>,
    z: Option<f64>,
}

impl Summary {
    fn new(estimate: f64, stderr: f64, target: Option<f64>) -> Self {
        let z = target.map(|t| (estimate - t) / stderr);
        Self {
            estimate,
            stderr,
            target,
            z,
        }
    }

    fn line(&self, label: &str) -> String {
        let mut s = format!(
            "{label}: estimate {:.6} stderr {:.6}",
            self.estimate, self.stderr
        );
        match (self.target, self.z) {
            (Some(t), Some(z)) => {
                let _ = write!(s, " target {t:.6} z {z:+.2}");
            }
            _ => s.push_str(" target none"),
        }
        s
    }
}

struct Output {
    label: String,
    csv: String,
    json: Value,
    summary: Summary,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn lambda_of(p: &Params, default: f64) -> Result<f64> {
    let l = p.lambda.unwrap_or(default);
    if !(l >= 0.0 && l.is_finite()) {
        return Err(usage(format!("--lambda must be >= 0, got {l}")));
    }
    Ok(l)
}

fn list_of(p: &Params, default: &str) -> Result<Vec<u32>> {
    parse_list(p.scales.as_deref().unwrap_or(default)).map_err(|e| usage(format!("--scales: {e}")))
}

fn at_least(name: &str, v: usize, min: usize) -> Result<usize> {
    if v < min {
        return Err(usage(format!("--{name} must be >= {min}, got {v}")));
    }
    Ok(v)
}

fn estimator_grid(p: &Params) -> Result<EstimatorGrid> {
    let mut g = EstimatorGrid::default();
    if let Some(r) = p.rows_per_unit {
        g.rows_per_unit = at_least("rows-per-unit", r, 4)?;
    }
    Ok(g)
}

fn operator_grid(p: &Params) -> Result<OperatorGrid> {
    let mut g = OperatorGrid::default();
    if let Some(r) = p.rows_per_unit {
        g.rows_per_unit = at_least("rows-per-unit", r, 4)?;
    }
    Ok(g)
}

/// Parameters echoed into the JSON output; output locations are left out so the
/// file does not depend on where it is written.
fn echo(p: &Params) -> Value {
    let mut p = p.clone();
    p.out = None;
    p.prefix = None;
    serde_json::to_value(p).expect("plain data")
}

pub fn run(which: Estimator, p: &Params) -> Result<()> {
    let seed = p.seed.unwrap_or(DEFAULT_SEED);
    let key = StreamKey::new(seed).named(which.name());
    let out = match which {
        Estimator::Xi => xi(p, key)?,
        Estimator::Eta => eta(p, key)?,
        Estimator::Eigen => eigen(p, key)?,
        Estimator::FrontierDim => dimension(p, FractalSet::Frontier, key)?,
        Estimator::PioneerDim => dimension(p, FractalSet::Pioneer, key)?,
        Estimator::StripDensity => strip(p, key)?,
        Estimator::Separation => separation(p, key)?,
        Estimator::Couple => couple(p, key)?,
    };

    let dir = p.out_dir();
    let prefix = p.prefix.clone().unwrap_or_else(|| which.name().to_string());
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("writing output: creating {}", dir.display()))?;
    let mut doc = json!({
        "command": which.name(),
        "seed": seed,
        "params": echo(p),
        "summary": out.summary,
    });
    doc["result"] = out.json;
    let csv: PathBuf = dir.join(format!("{prefix}.csv"));
    let js: PathBuf = dir.join(format!("{prefix}.json"));
    std::fs::write(&csv, &out.csv).with_context(|| format!("writing output: {}", csv.display()))?;
    std::fs::write(&js, serde_json::to_string_pretty(&doc)? + "\n")
        .with_context(|| format!("writing output: {}", js.display()))?;
    println!("{}", out.summary.line(&out.label));
    eprintln!("wrote {} and {}", csv.display(), js.display());
    Ok(())
}

fn xi(p: &Params, key: StreamKey) -> Result<Output> {
    let k = p.k.unwrap_or(1);
    if !(1..=3).contains(&k) {
        return Err(usage(format!("--k must be 1, 2 or 3 for xi, got {k}")));
    }
    let lambda = lambda_of(p, 1.0)?;
    let scales = list_of(p, "2..6")?;
    if scales.len() < 3 {
        return Err(usage("xi needs at least 3 scales"));
    }
    let samples = at_least("samples", p.samples.unwrap_or(2000), 2)?;
    let grid = estimator_grid(p)?;
    let mut rows = Vec::with_capacity(scales.len());
    for &n in &scales {
        rows.push(
            estimate_qn(k, lambda, n, samples, &grid, key)
                .with_context(|| format!("sampling q_n at n = {n}"))?,
        );
    }
    let fit = fit_exponent(&rows).context("fitting the exponent")?;
    let mut csv = format!("{QN_CSV_HEADER}\n");
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    let target = xi_formula(f64::from(k), lambda)?;
    Ok(Output {
        label: format!("xi({k}, {lambda})"),
        csv,
        json: fit.summary_json(),
        summary: Summary::new(fit.exponent(), fit.stderr, Some(target)),
    })
}

fn eta(p: &Params, key: StreamKey) -> Result<Output> {
    let k = p.k.unwrap_or(1);
    if !(1..=3).contains(&k) {
        return Err(usage(format!("--k must be 1, 2 or 3 for eta, got {k}")));
    }
    let scales = list_of(p, "2..7")?;
    let samples = at_least("samples", p.samples.unwrap_or(20_000), 2)?;
    let grid = estimator_grid(p)?;
    let fit = estimate_eta(k, &scales, samples, &grid, key)
        .context("estimating disconnection probabilities")?;
    let mut csv = String::from("rho,log_probability,log_std_error\n");
    for ((s, m), e) in fit
        .scales
        .iter()
        .zip(&fit.log_means)
        .zip(&fit.log_std_errors)
    {
        let _ = writeln!(csv, "{s},{m:.12e},{e:.12e}");
    }
    Ok(Output {
        label: format!("eta_{k}"),
        csv,
        json: fit.summary_json(),
        summary: Summary::new(fit.exponent(), fit.stderr, Some(eta_formula::<f64>(k)?)),
    })
}

fn eigen(p: &Params, key: StreamKey) -> Result<Output> {
    let lambda = lambda_of(p, 1.0)?;
    let particles = at_least("particles", p.particles.unwrap_or(400), 100)?;
    let steps = at_least("steps", p.steps.unwrap_or(40), 5)?;
    let inner = p.inner_samples.unwrap_or(0);
    let seed = make_config(ConfigKind::GammaPlusRadial, operator_grid(p)?)
        .context("building the seed configuration")?;
    let run =
        power_iterate(&seed, lambda, steps, particles, inner, key).context("power iteration")?;
    let json = json!({
        "lambda": run.lambda,
        "xi_hat": run.xi_hat,
        "stderr": run.stderr,
        "steps": run.steps,
        "particles": run.particles,
    });
    Ok(Output {
        label: format!("eigen(lambda = {lambda})"),
        csv: run.trace_csv(),
        json,
        summary: Summary::new(run.xi_hat, run.stderr, Some(xi_formula(2.0, lambda)?)),
    })
}

fn dimension(p: &Params, set: FractalSet, key: StreamKey) -> Result<Output> {
    let d = FractalParams::default();
    let params = FractalParams {
        steps: at_least("steps", p.steps.unwrap_or(d.steps), 2)?,
        span: p.span.unwrap_or(d.span),
        extent: at_least("extent", p.extent.unwrap_or(d.extent), 8)?,
        checkpoints: at_least("checkpoints", p.checkpoints.unwrap_or(d.checkpoints), 2)?,
        discard_extremes: d.discard_extremes,
    };
    if !(params.span > 0.0 && params.span <= 2.0 * params.extent as f64) {
        return Err(usage("--span must lie in (0, 2 extent]"));
    }
    let walks = at_least("walks", p.walks.unwrap_or(1), 1)?;
    let runs = dimension_runs(set, &params, walks, key).context("measuring dimensions")?;
    let dims: Vec<f64> = runs.iter().map(|r| r.fit.dimension).collect();
    let st = RunningStats::from_slice(&dims);
    let stderr = if walks > 1 {
        st.std_error()
    } else {
        runs[0].fit.stderr
    };

    let mut csv = String::from("walk,box_size,count\n");
    for (w, r) in runs.iter().enumerate() {
        for (s, c) in r.table.box_sizes.iter().zip(&r.table.counts) {
            let _ = writeln!(csv, "{w},{s},{c}");
        }
    }
    let (name, target) = match set {
        FractalSet::Frontier => ("frontier", 4.0 / 3.0),
        FractalSet::Pioneer => ("pioneer", 7.0 / 4.0),
    };
    let json = json!({
        "dimension": st.mean,
        "stderr": stderr,
        "window": [runs[0].fit.window.0, runs[0].fit.window.1],
        "walks": runs.iter().map(|r| r.fit.summary_json()).collect::<Vec<_>>(),
        "cells": runs.iter().map(|r| r.cells.len()).collect::<Vec<_>>(),
        "checkpoint_density": runs.iter().map(|r| r.checkpoint_density).collect::<Vec<_>>(),
    });
    Ok(Output {
        label: format!("{name} dimension"),
        csv,
        json,
        summary: Summary::new(st.mean, stderr, Some(target)),
    })
}

fn strip(p: &Params, key: StreamKey) -> Result<Output> {
    let y = p.y.unwrap_or(3.0);
    if !(y > 0.0) {
        return Err(usage("--y must be positive"));
    }
    let bins = at_least("bins", p.bins.unwrap_or(32), 2)?;
    let walks = at_least("walks", p.walks.unwrap_or(100_000), 1)?;
    let cmp = strip_exit_experiment(y, bins, walks, key)
        .context("conditioned walks in the half-strip")?;
    let mut csv = String::from("lo,hi,expected,observed,count,z\n");
    for b in &cmp.bins {
        let _ = writeln!(
            csv,
            "{:.6},{:.6},{:.9},{:.9},{},{:.3}",
            b.lo, b.hi, b.expected, b.observed, b.count, b.z_score
        );
    }
    print!("{csv}");
    // Estimate: total variation distance between the series and the walks; its
    // standard error under the series is about sqrt(bins / (2 pi walks)).
    let se = (bins as f64 / (2.0 * std::f64::consts::PI * walks as f64)).sqrt();
    let json = json!({
        "total_variation": cmp.total_variation,
        "max_abs_z": cmp.max_abs_z,
        "start": [cmp.start_x, cmp.start_y],
        "walks": cmp.walks,
    });
    Ok(Output {
        label: format!(
            "strip exit density (y = {y}, max |z| {:.2}), total variation",
            cmp.max_abs_z
        ),
        csv,
        json,
        summary: Summary::new(cmp.total_variation, se, None),
    })
}

fn separation(p: &Params, key: StreamKey) -> Result<Output> {
    let lambda = lambda_of(p, 1.0)?;
    let samples = at_least("samples", p.samples.unwrap_or(400), 1)?;
    let configs = at_least("configs", p.configs.unwrap_or(20), 1)?;
    let grid = operator_grid(p)?;
    let mut ratios = Vec::with_capacity(configs);
    for i in 0..configs {
        let c = sample_config(grid, key.named("configs").child(i as u64), 100)
            .with_context(|| format!("sampling configuration {i}"))?;
        ratios.push(
            separation_ratio_one(&c, lambda, samples, key.child(i as u64))
                .with_context(|| format!("extending configuration {i}"))?,
        );
    }
    let mut csv = String::from("config,ratio\n");
    for (i, r) in ratios.iter().enumerate() {
        let _ = writeln!(csv, "{i},{r:.9}");
    }
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    // Binomial standard error of the smallest ratio.
    let se = (min * (1.0 - min) / samples as f64).sqrt();
    Ok(Output {
        label: format!("separation ratio (lambda = {lambda}, median {median:.4}), minimum"),
        csv,
        json: json!({ "ratios": ratios, "minimum": min, "median": median }),
        summary: Summary::new(min, se, None),
    })
}

fn couple(p: &Params, key: StreamKey) -> Result<Output> {
    let lambda = lambda_of(p, 1.0)?;
    let particles = at_least("particles", p.particles.unwrap_or(100), 1)?;
    let ns = list_of(p, "3,6,9,12")?;
    if ns[0] < 3 {
        return Err(usage("couple needs n >= 3"));
    }
    let grid = operator_grid(p)?;
    let a = make_config(ConfigKind::GammaPlusRadial, grid).context("building the first start")?;
    let b = sample_config(grid, key.named("start"), 100).context("sampling the second start")?;
    let mut reports = Vec::with_capacity(ns.len());
    for &n in &ns {
        reports.push(
            weighted_coupling_experiment(
                &a,
                &b,
                n as usize,
                lambda,
                particles,
                key.child(u64::from(n)),
            )
            .with_context(|| format!("coupling at n = {n}"))?,
        );
    }
    let mut csv =
        String::from("n,m,mismatch_xm,tail_and_trace_match,y_m_fraction,boundary_trace_overlap\n");
    for r in &reports {
        let d = &r.summary_discrepancies;
        let _ = writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            r.n,
            r.m,
            1.0 - r.match_fraction_xm,
            d.tail_and_trace_match_fraction,
            d.y_m_fraction,
            d.boundary_trace_overlap
        );
    }
    let x: Vec<f64> = ns.iter().map(|&n| f64::from(n)).collect();
    let y: Vec<f64> = reports.iter().map(|r| 1.0 - r.match_fraction_xm).collect();
    let (slope, se) = ols(&x, &y).map_or((0.0, 0.0), |l| (l.slope, l.slope_stderr));
    Ok(Output {
        label: format!(
            "coupling mismatch trend (lambda = {lambda}, negative at 2 sigma: {}), slope",
            slope + 2.0 * se < 0.0
        ),
        csv,
        json: json!({ "reports": reports, "slope": slope, "slope_stderr": se }),
        summary: Summary::new(slope, se, None),
    })
}
