//! Small statistics toolkit: streaming moments, least squares, and the
//! goodness-of-fit tests used by the estimators and their checks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Streaming mean/variance (Welford), mergeable with Chan's pairwise update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let nf = n as f64;
        let mean = self.mean + delta * other.count as f64 / nf;
        let m2 = self.m2 + other.m2 + delta * delta * self.count as f64 * other.count as f64 / nf;
        Self { count: n, mean, m2 }
    }

    /// Unbiased sample variance (0 with fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    /// Pairwise (tree) reduction of per-sample values; the result is independent of
    /// how the values were produced as long as their order is fixed.
    pub fn from_slice(values: &[f64]) -> Self {
        match values.len() {
            0 => Self::default(),
            1 => {
                let mut s = Self::default();
                s.push(values[0]);
                s
            }
            n => {
                let (a, b) = values.split_at(n / 2);
                Self::from_slice(a).merge(&Self::from_slice(b))
            }
        }
    }
}

/// Ordinary least squares fit of `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Residual-based standard error of the slope (0 for an exact two-point fit).
    pub slope_stderr: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|xi| (xi - mx) * (xi - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if n > 2 {
        let sse: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| {
                let r = yi - (slope * xi + intercept);
                r * r
            })
            .sum();
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(LineFit {
        slope,
        intercept,
        slope_stderr,
    })
}

/// Standard error of the OLS slope when each `y_i` carries independent noise with
/// standard deviation `sigma_i` (delta-method propagation).
pub fn ols_slope_propagated_stderr(x: &[f64], sigma: &[f64]) -> f64 {
    let nf = x.len() as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|xi| (xi - mx) * (xi - mx)).sum();
    x.iter()
        .zip(sigma)
        .map(|(xi, s)| {
            let w = (xi - mx) / sxx;
            w * w * s * s
        })
        .sum::<f64>()
        .sqrt()
}

/// Upper-tail probability of a chi-square statistic.
pub fn chi_square_sf(stat: f64, dof: f64) -> f64 {
    match ChiSquared::new(dof) {
        Ok(d) => 1.0 - d.cdf(stat),
        Err(_) => f64::NAN,
    }
}

/// Pearson goodness-of-fit of observed counts against expected probabilities.
/// Returns `(statistic, p_value)`; bins with zero expected mass are skipped.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> (f64, f64) {
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (&o, &p) in observed.iter().zip(probs) {
        if p <= 0.0 {
            continue;
        }
        let e = n * p;
        stat += (o as f64 - e).powi(2) / e;
        bins += 1;
    }
    let dof = bins.saturating_sub(1).max(1) as f64;
    (stat, chi_square_sf(stat, dof))
}

/// Two-sample chi-square homogeneity test on binned counts.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> (f64, f64) {
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let ka = (nb / na).sqrt();
    let kb = (na / nb).sqrt();
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x + y == 0 {
            continue;
        }
        let d = ka * x as f64 - kb * y as f64;
        stat += d * d / (x + y) as f64;
        bins += 1;
    }
    let dof = bins.saturating_sub(1).max(1) as f64;
    (stat, chi_square_sf(stat, dof))
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x: Vec<f64> = a.to_vec();
    let mut y: Vec<f64> = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    (d, kolmogorov_sf((en + 0.12 + 0.11 / en) * d))
}

fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = f64::from(k);
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Total-variation distance between two probability vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..101).map(|i| (f64::from(i) * 0.37).sin()).collect();
        let mut single = RunningStats::new();
        xs.iter().for_each(|&x| single.push(x));
        let tree = RunningStats::from_slice(&xs);
        assert_eq!(single.count, tree.count);
        assert!((single.mean - tree.mean).abs() < 1e-14);
        assert!((single.variance() - tree.variance()).abs() < 1e-13);
    }

    #[test]
    fn ols_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| -1.25 * v + 0.3).collect();
        let fit = ols(&x, &y).unwrap();
        assert!((fit.slope + 1.25).abs() < 1e-12);
        assert!((fit.intercept - 0.3).abs() < 1e-12);
        assert!(fit.slope_stderr < 1e-12);
    }

    #[test]
    fn ols_rejects_degenerate_abscissae() {
        assert!(ols(&[1.0, 1.0], &[0.0, 1.0]).is_none());
        assert!(ols(&[1.0], &[0.0]).is_none());
    }

    #[test]
    fn chi_square_sf_known_value() {
        // 95th percentile of chi-square(1) is 3.841.
        assert!((chi_square_sf(3.841_458_820_694_124, 1.0) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn ks_identical_samples_do_not_reject() {
        let a: Vec<f64> = (0..200).map(|i| f64::from(i) / 200.0).collect();
        let (d, p) = ks_two_sample(&a, &a);
        assert_eq!(d, 0.0);
        assert!(p > 0.99);
    }

    #[test]
    fn ks_separated_samples_reject() {
        let a: Vec<f64> = (0..200).map(|i| f64::from(i) / 200.0).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
        assert!(ks_two_sample(&a, &b).1 < 1e-6);
    }
}
