//! Closed-form exponents and their Monte Carlo estimators.
//!
//! Estimators work on a log-polar lattice so that every annulus `e^j <= |z| < e^{j+1}`
//! is resolved at the same relative resolution; walks are simulated in `log z`.

use num_integer::Roots;
use num_rational::Ratio;
#[allow(unused_imports)]
use num_traits::{Float, One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    flood_outside, DirichletProblem, GridError, Lattice, LatticeMask, LogPolarLattice,
    PoleCondition, Region, Site, SorParams,
};
use crate::paths::{run_log_polyline, Floor, PathError};
use crate::rng::StreamKey;
use crate::scalar::Real;
use crate::stats::{ols, ols_slope_propagated_stderr, RunningStats};

#[derive(Debug, Error)]
pub enum ExponentError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("estimated mean is zero at scale {0}")]
    ZeroMean(u32),
    #[error("need at least {needed} scales, got {got}")]
    TooFewScales { needed: usize, got: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// `xi(k, lambda) = ((sqrt(24k+1) + sqrt(24 lambda+1) - 2)^2 - 4) / 48`.
pub fn xi_formula<T: Real>(k: T, lambda: T) -> Result<T, ExponentError> {
    if !(k > T::zero()) || !(lambda >= T::zero()) {
        return Err(ExponentError::InvalidArgument(format!(
            "xi needs k > 0 and lambda >= 0, got k = {k}, lambda = {lambda}"
        )));
    }
    let c24 = T::lit(24.0);
    let s = (c24 * k + T::one()).sqrt() + (c24 * lambda + T::one()).sqrt() - T::lit(2.0);
    Ok((s * s - T::lit(4.0)) / T::lit(48.0))
}

/// `eta_k = ((sqrt(24k+1) - 1)^2 - 4) / 48`, the disconnection exponent of `k` paths.
pub fn eta_formula<T: Real>(k: u32) -> Result<T, ExponentError> {
    if k < 1 {
        return Err(ExponentError::InvalidArgument("eta needs k >= 1".into()));
    }
    xi_formula(T::from_u32(k).expect("fits"), T::zero())
}

fn exact_sqrt(x: Ratio<i64>) -> Option<Ratio<i64>> {
    if x.is_negative() {
        return None;
    }
    let (n, d) = (*x.numer(), *x.denom());
    let (rn, rd) = (n.sqrt(), d.sqrt());
    (rn * rn == n && rd * rd == d).then(|| Ratio::new(rn, rd))
}

/// Exact value of [`xi_formula`] when both square roots are rational.
pub fn xi_exact(k: Ratio<i64>, lambda: Ratio<i64>) -> Option<Ratio<i64>> {
    if !k.is_positive() || lambda.is_negative() {
        return None;
    }
    let c24 = Ratio::from_integer(24);
    let one = Ratio::one();
    let s = exact_sqrt(c24 * k + one)? + exact_sqrt(c24 * lambda + one)? - Ratio::from_integer(2);
    Some((s * s - Ratio::from_integer(4)) / Ratio::from_integer(48))
}

/// Exact `eta_k` when `24k + 1` is a perfect square (k = 1, 2, 5, 7, ...).
pub fn eta_exact(k: u32) -> Option<Ratio<i64>> {
    (k >= 1).then(|| xi_exact(Ratio::from_integer(k as i64), Ratio::zero()))?
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dimensions<T> {
    /// Outer boundary of a Brownian path: `2 - eta_2 = 4/3`.
    pub frontier: T,
    /// Pioneer points: `2 - eta_1 = 7/4`.
    pub pioneer: T,
    /// Double points on the frontier: `2 - eta_4 = (1 + sqrt 97)/24`.
    pub double_frontier: T,
}

pub fn dimension_formulas<T: Real>() -> Dimensions<T> {
    let two = T::lit(2.0);
    let eta = |k| eta_formula::<T>(k).expect("k >= 1");
    Dimensions {
        frontier: two - eta(2),
        pioneer: two - eta(1),
        double_frontier: two - eta(4),
    }
}

/// Lattice and walk resolution for the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorGrid {
    /// Lattice rows per unit of `log r`.
    pub rows_per_unit: usize,
    /// `log` of the radius below which everything is a single pole node.
    pub floor: f64,
    /// Standard deviation of each walk step in `log z`.
    pub log_step: f64,
    /// Residual tolerance of the harmonic solves.
    pub tolerance: f64,
    pub max_steps: usize,
    /// Excursions deeper than this below the floor are replaced by their exact
    /// return point.
    pub return_depth: f64,
}

impl Default for EstimatorGrid {
    fn default() -> Self {
        Self {
            rows_per_unit: 12,
            floor: -2.0,
            log_step: 0.05,
            tolerance: 1e-8,
            max_steps: 50_000_000,
            return_depth: 1.0,
        }
    }
}

impl EstimatorGrid {
    fn validate(&self) -> Result<(), ExponentError> {
        if self.rows_per_unit < 4
            || !(self.floor < 0.0)
            || !(self.log_step > 0.0 && self.log_step <= 0.25)
        {
            return Err(ExponentError::InvalidArgument(
                "grid needs rows_per_unit >= 4, floor < 0, log_step in (0, 0.25]".into(),
            ));
        }
        if !(self.return_depth > 0.0) {
            return Err(ExponentError::InvalidArgument(
                "return depth must be positive".into(),
            ));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-3) {
            return Err(ExponentError::InvalidArgument(
                "tolerance must lie in (0, 1e-3]".into(),
            ));
        }
        Ok(())
    }

    pub fn walk_floor(&self) -> Floor<f64> {
        Floor::Return {
            level: self.floor,
            depth: self.return_depth,
        }
    }

    pub fn lattice(&self, top: f64) -> Result<LogPolarLattice<f64>, ExponentError> {
        Ok(LogPolarLattice::new(self.floor, top, self.rows_per_unit)?)
    }
}

/// Mean of `Zhat_n^lambda` at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QnEstimate {
    pub n: u32,
    pub lambda: f64,
    pub k: u32,
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    /// Samples whose unit circle was entirely covered.
    pub swallowed: usize,
}

pub const QN_CSV_HEADER: &str = "n,lambda,k,mean,std_error,samples,swallowed";

impl QnEstimate {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.12e},{:.12e},{},{}",
            self.n, self.lambda, self.k, self.mean, self.std_error, self.samples, self.swallowed
        )
    }
}

/// `x^lambda` with `0^0 = 0`.
#[inline]
pub fn weight_power(x: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        if x > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        x.powf(lambda)
    }
}

/// Per-sample values of `Zhat_n = sup_{b in dU} P^b(B reaches e^n before W^n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZhatSamples {
    pub n: u32,
    pub k: u32,
    /// `None` when only positivity was computed.
    pub values: Option<Vec<f64>>,
    pub positive: Vec<bool>,
    pub swallowed: usize,
}

impl ZhatSamples {
    pub fn estimate(&self, lambda: f64) -> Result<QnEstimate, ExponentError> {
        let xs: Vec<f64> = match (&self.values, lambda == 0.0) {
            (_, true) => self
                .positive
                .iter()
                .map(|&p| f64::from(u8::from(p)))
                .collect(),
            (Some(v), false) => v.iter().map(|&z| weight_power(z, lambda)).collect(),
            (None, false) => {
                return Err(ExponentError::InvalidArgument(
                    "only positivity was sampled; lambda must be 0".into(),
                ))
            }
        };
        let st = RunningStats::from_slice(&xs);
        Ok(QnEstimate {
            n: self.n,
            lambda,
            k: self.k,
            mean: st.mean,
            std_error: st.std_error(),
            samples: xs.len(),
            swallowed: self.swallowed,
        })
    }
}

fn zhat_one(
    k: u32,
    n: u32,
    grid: &EstimatorGrid,
    values: bool,
    key: StreamKey,
) -> Result<(f64, bool, bool), ExponentError> {
    let lat = grid.lattice(n as f64)?;
    let mut rng = key.rng();
    let mut mask = LatticeMask::empty(lat);
    let mut floor_hit = false;
    for j in 0..k {
        let start = (0.0, std::f64::consts::TAU * j as f64 / k as f64);
        let w = run_log_polyline(
            start,
            n as f64,
            grid.log_step,
            grid.walk_floor(),
            grid.max_steps,
            &mut rng,
        )?;
        mask.add_log_polyline(&w.points);
        floor_hit |= w.floor_hits > 0;
    }
    mask.set_pole(floor_hit);
    let circle: Vec<usize> = lat
        .circle_cells(1.0)
        .into_iter()
        .filter(|&c| !mask.is_occupied(c))
        .collect();
    if circle.is_empty() {
        return Ok((0.0, false, true));
    }
    let labels = flood_outside(&mask);
    if !circle.iter().any(|&c| labels.get(c) == Region::Outside) {
        return Ok((0.0, false, false));
    }
    if !values {
        return Ok((1.0, true, false));
    }
    let pole = if floor_hit {
        PoleCondition::Fixed(0.0)
    } else {
        PoleCondition::Harmonic
    };
    let mut problem = DirichletProblem::new(lat, vec![1.0], pole)?;
    problem.fix_mask(&mask, 0.0);
    // Cells cut off from the top are exactly 0.
    for (c, r) in labels.labels().iter().enumerate() {
        if matches!(r, Region::Enclosed(_)) {
            problem.fix(c, 0.0);
        }
    }
    let rows = lat.rows as f64;
    let field = problem.solve_polar(SorParams::with_tolerance(grid.tolerance), |c| {
        (lat.row_col(c).0 as f64 + 1.0) / (rows + 1.0)
    })?;
    let z = circle.iter().map(|&c| field.get(c)).fold(0.0, f64::max);
    Ok((z, z > 0.0, false))
}

/// Samples `Zhat_n` for `k` paths started at equally spaced points of the unit circle.
/// With `values = false` only positivity (the `lambda = 0` weight) is computed.
pub fn sample_zhat(
    k: u32,
    n: u32,
    samples: usize,
    grid: &EstimatorGrid,
    values: bool,
    key: StreamKey,
) -> Result<ZhatSamples, ExponentError> {
    grid.validate()?;
    if n < 1 || samples < 1 || !(1..=3).contains(&k) {
        return Err(ExponentError::InvalidArgument(
            "need n >= 1, samples >= 1, k in 1..=3".into(),
        ));
    }
    let key = key.named("zhat").child(k as u64).child(n as u64);
    let out: Vec<(f64, bool, bool)> = (0..samples)
        .into_par_iter()
        .map(|i| zhat_one(k, n, grid, values, key.child(i as u64)))
        .collect::<Result<_, _>>()?;
    Ok(ZhatSamples {
        n,
        k,
        values: values.then(|| out.iter().map(|o| o.0).collect()),
        positive: out.iter().map(|o| o.1).collect(),
        swallowed: out.iter().filter(|o| o.2).count(),
    })
}

/// Estimate of `q_n(lambda)`: the mean of `Zhat_n^lambda`.
pub fn estimate_qn(
    k: u32,
    lambda: f64,
    n: u32,
    samples: usize,
    grid: &EstimatorGrid,
    key: StreamKey,
) -> Result<QnEstimate, ExponentError> {
    if !(lambda >= 0.0) {
        return Err(ExponentError::InvalidArgument("lambda must be >= 0".into()));
    }
    sample_zhat(k, n, samples, grid, lambda > 0.0, key)?.estimate(lambda)
}

/// Least-squares line through `(scale, log mean)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub scales: Vec<u32>,
    pub log_means: Vec<f64>,
    /// Standard errors of the log means (delta method).
    pub log_std_errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Slope standard error propagated from the per-scale errors.
    pub stderr: f64,
    /// Slope standard error from the regression residuals.
    pub residual_stderr: f64,
    pub samples_per_scale: usize,
}

impl ExponentFit {
    /// The exponent, `-slope`.
    pub fn exponent(&self) -> f64 {
        -self.slope
    }

    /// `{slope, intercept, stderr, xi_hat, scales}`.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "xi_hat": self.exponent(),
            "scales": self.scales,
        })
    }
}

/// Fit from raw per-scale means and standard errors.
pub fn fit_log_means(
    scales: &[u32],
    means: &[f64],
    std_errors: &[f64],
    samples_per_scale: usize,
) -> Result<ExponentFit, ExponentError> {
    if scales.len() < 3 {
        return Err(ExponentError::TooFewScales {
            needed: 3,
            got: scales.len(),
        });
    }
    if scales.len() != means.len() || means.len() != std_errors.len() {
        return Err(ExponentError::InvalidArgument(
            "mismatched fit inputs".into(),
        ));
    }
    if scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExponentError::InvalidArgument(
            "scales must be strictly increasing".into(),
        ));
    }
    if let Some(i) = means.iter().position(|&m| !(m > 0.0)) {
        return Err(ExponentError::ZeroMean(scales[i]));
    }
    let x: Vec<f64> = scales.iter().map(|&s| s as f64).collect();
    let y: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let sig: Vec<f64> = means.iter().zip(std_errors).map(|(m, s)| s / m).collect();
    let line =
        ols(&x, &y).ok_or_else(|| ExponentError::InvalidArgument("degenerate fit".into()))?;
    Ok(ExponentFit {
        scales: scales.to_vec(),
        log_means: y,
        log_std_errors: sig.clone(),
        slope: line.slope,
        intercept: line.intercept,
        stderr: ols_slope_propagated_stderr(&x, &sig),
        residual_stderr: line.slope_stderr,
        samples_per_scale,
    })
}

pub fn fit_exponent(estimates: &[QnEstimate]) -> Result<ExponentFit, ExponentError> {
    let scales: Vec<u32> = estimates.iter().map(|e| e.n).collect();
    let means: Vec<f64> = estimates.iter().map(|e| e.mean).collect();
    let ses: Vec<f64> = estimates.iter().map(|e| e.std_error).collect();
    let per = estimates.iter().map(|e| e.samples).min().unwrap_or(0);
    fit_log_means(&scales, &means, &ses, per)
}

/// Non-disconnection frequencies at each `rho`, computed on common samples:
/// `k` walks start at the same point at unit distance from the probe and run to
/// `e^{rho_max}`; each prefix up to `e^rho` is tested for separating the probe from
/// the circle `e^rho`. A walk reaching the floor disk around the probe swallows it.
#[derive(Debug, Clone, PartialEq)]
pub struct DisconnectionTable {
    pub k: u32,
    pub scales: Vec<u32>,
    /// Per sample, the number of leading scales at which the probe stays connected.
    pub connected_scales: Vec<u8>,
    pub swallowed: usize,
}

impl DisconnectionTable {
    pub fn rows(&self) -> Vec<QnEstimate> {
        let n = self.connected_scales.len();
        self.scales
            .iter()
            .enumerate()
            .map(|(i, &rho)| {
                let hits = self
                    .connected_scales
                    .iter()
                    .filter(|&&c| c as usize > i)
                    .count();
                let p = hits as f64 / n as f64;
                QnEstimate {
                    n: rho,
                    lambda: 0.0,
                    k: self.k,
                    mean: p,
                    std_error: (p * (1.0 - p) / (n as f64 - 1.0).max(1.0)).sqrt(),
                    samples: n,
                    swallowed: self.swallowed,
                }
            })
            .collect()
    }
}

/// Whether the free pole connects to the top of the first `rows` rows.
fn pole_reaches_row(
    mask: &LatticeMask<LogPolarLattice<f64>>,
    rows: usize,
    seen: &mut Vec<bool>,
) -> bool {
    if mask.pole_occupied() {
        return false;
    }
    let lat = *mask.lattice();
    let limit = rows * lat.cols;
    seen.clear();
    seen.resize(limit, false);
    let mut stack: Vec<usize> = Vec::new();
    for (c, s) in seen.iter_mut().enumerate().take(lat.cols) {
        if !mask.is_occupied(c) {
            *s = true;
            stack.push(c);
        }
    }
    while let Some(v) = stack.pop() {
        if v + lat.cols >= limit {
            return true;
        }
        for (s, _) in lat.neighbors(v) {
            if let Site::Cell(w) = s {
                if w < limit && !seen[w] && !mask.is_occupied(w) {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    false
}

fn disconnection_one(
    k: u32,
    scales: &[u32],
    grid: &EstimatorGrid,
    key: StreamKey,
) -> Result<(u8, bool), ExponentError> {
    let top = *scales.last().expect("nonempty") as f64;
    let mut rng = key.rng();
    let mut walks = Vec::with_capacity(k as usize);
    for _ in 0..k {
        // A walk entering the floor disk swallows the probe at every later scale.
        let w = run_log_polyline(
            (0.0, 0.0),
            top,
            grid.log_step,
            Floor::Stop(grid.floor),
            grid.max_steps,
            &mut rng,
        )?;
        walks.push(w.points);
    }
    let lat = grid.lattice(top)?;
    let mut mask = LatticeMask::empty(lat);
    let mut done = vec![0usize; walks.len()];
    let mut seen = Vec::new();
    let mut connected = 0u8;
    for &rho in scales {
        let u = rho as f64;
        for (w, d) in walks.iter().zip(done.iter_mut()) {
            let Some(end) = w.iter().position(|p| p.0 >= u) else {
                return Ok((connected, true));
            };
            if end > *d {
                mask.add_log_polyline(&w[*d..=end]);
                *d = end;
            }
        }
        let rows = lat.row_starting_at(u).unwrap_or(lat.rows);
        if !pole_reaches_row(&mask, rows, &mut seen) {
            break;
        }
        connected += 1;
    }
    Ok((connected, false))
}

pub fn disconnection_table(
    k: u32,
    scales: &[u32],
    samples: usize,
    grid: &EstimatorGrid,
    key: StreamKey,
) -> Result<DisconnectionTable, ExponentError> {
    grid.validate()?;
    if k < 1
        || samples < 2
        || scales.is_empty()
        || scales.windows(2).any(|w| w[0] >= w[1])
        || scales[0] < 1
    {
        return Err(ExponentError::InvalidArgument(
            "need k >= 1, samples >= 2, increasing scales >= 1".into(),
        ));
    }
    let key = key.named("disconnection").child(k as u64);
    let out: Vec<(u8, bool)> = (0..samples)
        .into_par_iter()
        .map(|i| disconnection_one(k, scales, grid, key.child(i as u64)))
        .collect::<Result<_, _>>()?;
    Ok(DisconnectionTable {
        k,
        scales: scales.to_vec(),
        connected_scales: out.iter().map(|o| o.0).collect(),
        swallowed: out.iter().filter(|o| o.1).count(),
    })
}

/// Fit of `-log P(k paths do not disconnect the probe)` against `rho`.
pub fn estimate_eta(
    k: u32,
    rho_scales: &[u32],
    samples: usize,
    grid: &EstimatorGrid,
    key: StreamKey,
) -> Result<ExponentFit, ExponentError> {
    fit_exponent(&disconnection_table(k, rho_scales, samples, grid, key)?.rows())
}

/// Empirical check of `p(a + b) <= p(a) p(b)` for one-arm crossing probabilities.
#[derive(Debug, Clone, Serialize)]
pub struct OneArmReport {
    pub scales: Vec<u32>,
    pub probabilities: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub decreasing: bool,
    /// `(a, b, p(a+b), p(a) p(b), holds)` for every pair with `a + b` among the scales.
    pub submultiplicative: Vec<(u32, u32, f64, f64, bool)>,
    pub fit: ExponentFit,
}

pub fn one_arm_annulus_bound_check(
    rho_scales: &[u32],
    samples: usize,
    grid: &EstimatorGrid,
    key: StreamKey,
) -> Result<OneArmReport, ExponentError> {
    let rows = disconnection_table(1, rho_scales, samples, grid, key)?.rows();
    let p: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let se: Vec<f64> = rows.iter().map(|r| r.std_error).collect();
    let decreasing = p.windows(2).all(|w| w[1] <= w[0]);
    let idx = |s: u32| rho_scales.iter().position(|&x| x == s);
    let mut pairs = Vec::new();
    for (i, &a) in rho_scales.iter().enumerate() {
        for &b in &rho_scales[i..] {
            if let Some(j) = idx(a + b) {
                let (ia, ib) = (i, idx(b).expect("b in scales"));
                let prod = p[ia] * p[ib];
                let rel = (se[j] / p[j].max(1e-300))
                    .hypot(se[ia] / p[ia].max(1e-300))
                    .hypot(se[ib] / p[ib].max(1e-300));
                pairs.push((a, b, p[j], prod, p[j] <= prod * (1.0 + 3.0 * rel)));
            }
        }
    }
    Ok(OneArmReport {
        scales: rho_scales.to_vec(),
        probabilities: p,
        std_errors: se,
        decreasing,
        submultiplicative: pairs,
        fit: fit_exponent(&rows)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert!((xi_formula(2.0f64, 0.0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(xi_formula(1.0f64, 1.0).unwrap(), 1.25);
        assert_eq!(xi_formula(2.0f64, 1.0).unwrap(), 2.0);
        assert_eq!(eta_formula::<f64>(1).unwrap(), 0.25);
        assert!(
            (eta_formula::<f64>(4).unwrap() - (2.0 - (1.0 + 97f64.sqrt()) / 24.0)).abs() < 1e-12
        );
        assert!(eta_formula::<f64>(0).is_err());
        assert!(xi_formula(-1.0f64, 0.0).is_err());
        assert!(xi_formula(1.0f64, -0.5).is_err());
    }

    #[test]
    fn exact_rationals() {
        let r = |a: i64, b: i64| Ratio::new(a, b);
        assert_eq!(xi_exact(r(1, 1), r(1, 1)), Some(r(5, 4)));
        assert_eq!(xi_exact(r(2, 1), r(1, 1)), Some(r(2, 1)));
        assert_eq!(xi_exact(r(1, 1), r(2, 1)), Some(r(2, 1)));
        assert_eq!(eta_exact(1), Some(r(1, 4)));
        assert_eq!(eta_exact(2), Some(r(2, 3)));
        assert_eq!(eta_exact(3), None);
        // lambda = 1/2: 24/2 + 1 = 13 is not a square.
        assert_eq!(xi_exact(r(2, 1), r(1, 2)), None);
    }

    #[test]
    fn dimensions() {
        let d = dimension_formulas::<f64>();
        assert!((d.frontier - 4.0 / 3.0).abs() < 1e-12);
        assert!((d.pioneer - 1.75).abs() < 1e-12);
        assert!((d.double_frontier - (1.0 + 97f64.sqrt()) / 24.0).abs() < 1e-12);
    }

    #[test]
    fn exact_ols_recovers_line() {
        let scales = [1u32, 2, 3, 4, 5];
        let means: Vec<f64> = scales
            .iter()
            .map(|&n| (-1.25 * n as f64 + 0.3).exp())
            .collect();
        let fit = fit_log_means(&scales, &means, &[0.01; 5], 100).unwrap();
        assert!((fit.slope + 1.25).abs() < 1e-12);
        assert!((fit.intercept - 0.3).abs() < 1e-12);
        assert!((fit.exponent() - 1.25).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_log_means(&[1, 2], &[0.5, 0.2], &[0.1, 0.1], 1),
            Err(ExponentError::TooFewScales { .. })
        ));
        assert!(matches!(
            fit_log_means(&[1, 2, 3], &[0.5, 0.0, 0.1], &[0.1; 3], 1),
            Err(ExponentError::ZeroMean(2))
        ));
    }

    #[test]
    fn weight_convention() {
        assert_eq!(weight_power(0.0, 0.0), 0.0);
        assert_eq!(weight_power(0.3, 0.0), 1.0);
        assert!((weight_power(0.25, 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zhat_small_run_is_a_probability() {
        let grid = EstimatorGrid {
            rows_per_unit: 8,
            ..EstimatorGrid::default()
        };
        let s = sample_zhat(1, 1, 8, &grid, true, StreamKey::new(5)).unwrap();
        let v = s.values.as_ref().unwrap();
        assert!(v.iter().all(|&z| (0.0..=1.0).contains(&z)));
        let e0 = s.estimate(0.0).unwrap();
        let e1 = s.estimate(1.0).unwrap();
        assert!(e1.mean <= e0.mean + 1e-15);
    }
}
