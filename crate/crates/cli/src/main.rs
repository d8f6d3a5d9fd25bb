//! `brownlab`: closed-form exponents and reproducible Monte Carlo estimates.

// Guards are written `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod estimate;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use brownlab::exponents::{dimension_formulas, eta_formula, xi_formula};
use clap::{Parser, Subcommand, ValueEnum};

use config::Params;

#[derive(Debug, Parser)]
#[command(
    name = "brownlab",
    version,
    about = "Planar Brownian exponents: formulas and Monte Carlo estimates"
)]
struct Cli {
    /// Worker threads (results do not depend on this)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Print closed-form exponents and dimensions
    Formula {
        /// Number of paths (real, > 0)
        #[arg(long, value_parser = positive)]
        k: Option<f64>,
        /// Weight exponent (>= 0)
        #[arg(long, value_parser = non_negative)]
        lambda: Option<f64>,
        /// Print the frontier, pioneer and frontier double point dimensions
        #[arg(long)]
        dims: bool,
    },
    /// Run an estimator, write CSV/JSON and print a summary line
    Estimate {
        #[arg(value_enum)]
        which: Estimator,
        /// JSON file with default parameters
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        params: Params,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Estimator {
    Xi,
    Eta,
    Eigen,
    FrontierDim,
    PioneerDim,
    StripDensity,
    Separation,
    Couple,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Self::Xi => "xi",
            Self::Eta => "eta",
            Self::Eigen => "eigen",
            Self::FrontierDim => "frontier-dim",
            Self::PioneerDim => "pioneer-dim",
            Self::StripDensity => "strip-density",
            Self::Separation => "separation",
            Self::Couple => "couple",
        }
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s}")),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a non-negative number, got {s}")),
    }
}

/// Bad parameters found after parsing; exits like a clap usage error.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn formula(k: Option<f64>, lambda: Option<f64>, dims: bool) -> Result<()> {
    let fmt = |x: f64| format!("{x:.12}");
    if dims {
        let d = dimension_formulas::<f64>();
        println!("frontier        {}", fmt(d.frontier));
        println!("pioneer         {}", fmt(d.pioneer));
        println!("double_frontier {}", fmt(d.double_frontier));
        if k.is_none() && lambda.is_none() {
            return Ok(());
        }
    }
    let lambda = lambda.unwrap_or(1.0);
    match k {
        Some(k) => {
            println!("xi({k}, {lambda}) = {}", fmt(xi_formula(k, lambda)?));
            if k.fract() == 0.0 {
                println!("eta_{k} = {}", fmt(eta_formula::<f64>(k as u32)?));
            }
        }
        None => {
            println!("k,xi(k;{lambda}),eta_k");
            for k in 1..=6u32 {
                println!(
                    "{k},{},{}",
                    fmt(xi_formula(f64::from(k), lambda)?),
                    fmt(eta_formula::<f64>(k)?)
                );
            }
            if !dims {
                let d = dimension_formulas::<f64>();
                println!(
                    "dimensions: frontier {} pioneer {} double_frontier {}",
                    fmt(d.frontier),
                    fmt(d.pioneer),
                    fmt(d.double_frontier)
                );
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()?;
    }
    match cli.command {
        Command::Formula { k, lambda, dims } => formula(k, lambda, dims),
        Command::Estimate {
            which,
            config,
            params,
        } => {
            let params = params
                .merged(config.as_deref())
                .map_err(|e| UsageError(format!("{e:#}")))?;
            estimate::run(which, &params)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e:#}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
