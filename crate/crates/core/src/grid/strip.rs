//! Exit density of Brownian motion from the half-strip `(0, pi) x (0, inf)` through
//! its bottom edge, in series form and on the lattice.

#[allow(unused_imports)]
use num_traits::{Float, FloatConst, One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::paths::Point2;
use crate::rng::StreamKey;
use crate::scalar::Real;

use super::dirichlet::{DirichletProblem, PoleCondition, SorParams};
use super::lattice::{Lattice, Site, StripLattice};
use super::walk::{h_walk_with, simple_walk_until};
use super::GridError;

/// Default number of series terms for height `y`: `max(8, ceil(12 / y))`, rounded up to even.
pub fn strip_terms<T: Real>(y: T) -> usize {
    let t = (T::lit(12.0) / y)
        .ceil()
        .to_usize()
        .unwrap_or(usize::MAX / 2)
        .max(8);
    t + t % 2
}

/// `h_z(s) = (2/pi) sum_{k=1}^{terms} sin(kx) sin(ks) e^{-ky}` for `z = x + iy`.
pub fn strip_exit_density<T: Real>(z: Point2<T>, s: T, terms: usize) -> Result<T, GridError> {
    if !(z.y > T::zero()) {
        return Err(GridError::InvalidArgument(
            "strip density needs Im z > 0".into(),
        ));
    }
    if terms == 0 {
        return Err(GridError::InvalidArgument(
            "strip density needs at least one term".into(),
        ));
    }
    let mut sum = T::zero();
    for k in 1..=terms {
        let kf = T::from_usize_lossy(k);
        sum += (kf * z.x).sin() * (kf * s).sin() * (-kf * z.y).exp();
    }
    Ok(sum * T::lit(2.0) / T::PI())
}

/// Bound on the series tail beyond `terms`.
pub fn strip_truncation_bound<T: Real>(y: T, terms: usize) -> T {
    let t = T::from_usize_lossy(terms + 1);
    T::lit(2.0) / T::PI() * (-t * y).exp() / (T::one() - (-y).exp())
}

/// Integral of the truncated series over `s in [a, b]`.
pub fn strip_exit_mass<T: Real>(z: Point2<T>, a: T, b: T, terms: usize) -> T {
    let mut sum = T::zero();
    for k in 1..=terms {
        let kf = T::from_usize_lossy(k);
        sum += (kf * z.x).sin() * (-kf * z.y).exp() * ((kf * a).cos() - (kf * b).cos()) / kf;
    }
    sum * T::lit(2.0) / T::PI()
}

#[derive(Debug, Clone, Serialize)]
pub struct StripBin {
    pub lo: f64,
    pub hi: f64,
    pub expected: f64,
    pub observed: f64,
    pub count: u64,
    pub z_score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StripComparison {
    pub start_x: f64,
    pub start_y: f64,
    pub walks: usize,
    pub bins: Vec<StripBin>,
    pub total_variation: f64,
    pub max_abs_z: f64,
}

/// Node lattice of the half-strip with `2 bins + 1` columns, truncated at height
/// `y + 8`, conditioned walks started at the node nearest `(pi/2, y)`; exit columns
/// are grouped two per bin and compared with the series integrated over each bin.
pub fn strip_exit_experiment(
    y: f64,
    bins: usize,
    walks: usize,
    key: StreamKey,
) -> Result<StripComparison, GridError> {
    if bins < 2 || walks == 0 || !(y > 0.0) {
        return Err(GridError::InvalidArgument(
            "need bins >= 2, walks >= 1, y > 0".into(),
        ));
    }
    let width = 2 * bins + 1;
    let lat = StripLattice::new(width, y + 8.0)?;
    let h = lat.spacing;
    let problem = DirichletProblem::new(lat, vec![1.0, 0.0], PoleCondition::Fixed(0.0))?;
    let guess = |c: usize| {
        let (_, j) = lat.node(c);
        (-(j as f64) * h).exp()
    };
    let field = problem.solve_from(SorParams::with_tolerance(1e-11), guess)?;
    let i0 = width / 2;
    let j0 = (y / h).round() as usize;
    let start = lat.index(i0, j0);
    let z = lat.center(start);

    let exits: Vec<usize> = (0..walks)
        .into_par_iter()
        .map(|w| {
            let mut rng = key.child(w as u64).rng();
            let mut last = Site::Cell(start);
            let mut prev = last;
            h_walk_with(&field, Site::Cell(start), 50_000_000, &mut rng, |s| {
                prev = last;
                last = s;
            })?;
            match (prev, last) {
                (Site::Cell(c), Site::Boundary(0)) => Ok(lat.node(c).0),
                _ => Err(GridError::NoPositiveNeighbor),
            }
        })
        .collect::<Result<_, _>>()?;

    let mut counts = vec![0u64; bins];
    for i in exits {
        counts[((i - 1) / 2).min(bins - 1)] += 1;
    }
    let terms = strip_terms(z.y).max(64);
    let total = strip_exit_mass(z, 0.0, std::f64::consts::PI, terms);
    let n = walks as f64;
    let mut out = Vec::with_capacity(bins);
    let mut tv = 0.0;
    let mut max_z: f64 = 0.0;
    for (b, &count) in counts.iter().enumerate() {
        // Bin b holds nodes 2b+1 and 2b+2; each node owns half a spacing on either side.
        let lo = if b == 0 {
            0.0
        } else {
            (2 * b) as f64 * h + 0.5 * h
        };
        let hi = if b + 1 == bins {
            std::f64::consts::PI
        } else {
            (2 * b + 2) as f64 * h + 0.5 * h
        };
        let p = strip_exit_mass(z, lo, hi, terms) / total;
        let obs = count as f64 / n;
        let sd = (p * (1.0 - p) / n).sqrt().max(1e-300);
        let zs = (obs - p) / sd;
        tv += (obs - p).abs();
        max_z = max_z.max(zs.abs());
        out.push(StripBin {
            lo,
            hi,
            expected: p,
            observed: obs,
            count,
            z_score: zs,
        });
    }
    Ok(StripComparison {
        start_x: z.x,
        start_y: z.y,
        walks,
        bins: out,
        total_variation: 0.5 * tv,
        max_abs_z: max_z,
    })
}

/// Fraction of unconditioned lattice walks from the node nearest `z` that leave the
/// strip (truncated at `z.y + 8`) through the bottom, with the series prediction.
pub fn strip_bottom_exit_check(
    z: Point2<f64>,
    width: usize,
    walks: usize,
    key: StreamKey,
) -> Result<(f64, f64, f64), GridError> {
    let lat = StripLattice::new(width, z.y + 8.0)?;
    let start = lat.nearest(z).ok_or(GridError::OutsideGrid)?;
    let zc = lat.center(start);
    let hits: usize = (0..walks)
        .into_par_iter()
        .map(|w| {
            let mut rng = key.child(w as u64).rng();
            simple_walk_until(&lat, Site::Cell(start), 100_000_000, &mut rng, |s| {
                matches!(s, Site::Boundary(_))
            })
            .map(|s| usize::from(s == Site::Boundary(0)))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .sum();
    let p_hat = hits as f64 / walks as f64;
    let p = strip_exit_mass(zc, 0.0, std::f64::consts::PI, strip_terms(zc.y).max(64));
    let se = (p * (1.0 - p) / walks as f64).sqrt();
    Ok((p_hat, p, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn terms_are_even_and_capped() {
        assert_eq!(strip_terms(3.0), 8);
        assert_eq!(strip_terms(1.0), 12);
        assert_eq!(strip_terms(0.7), 18);
        assert_eq!(strip_terms(0.1), 120);
    }

    #[test]
    fn rejects_non_positive_height() {
        assert!(strip_exit_density(Point2::new(1.0, 0.0), 1.0, 8).is_err());
        assert!(strip_exit_density(Point2::new(1.0, 1.0), 1.0, 0).is_err());
    }

    #[test]
    fn leading_order_at_height_three() {
        let z = Point2::new(PI / 2.0, 3.0);
        let v = strip_exit_density(z, PI / 2.0, strip_terms(3.0)).unwrap();
        let lead = 2.0 / PI * (-3.0f64).exp();
        assert!((v / lead - 1.0).abs() <= (-3.0f64).exp());
    }

    #[test]
    fn reflection_symmetry() {
        for &(x, y, s) in &[(0.3, 0.5, 1.1), (2.0, 1.5, 0.2), (1.0, 0.1, 3.0)] {
            let a = strip_exit_density(Point2::new(x, y), s, 40).unwrap();
            let b = strip_exit_density(Point2::new(PI - x, y), PI - s, 40).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_matches_midpoint_quadrature() {
        let z = Point2::new(1.2, 0.8);
        let terms = 60;
        let n = 4000;
        let h = PI / n as f64;
        let quad: f64 = (0..n)
            .map(|i| strip_exit_density(z, (i as f64 + 0.5) * h, terms).unwrap() * h)
            .sum();
        assert!((quad - strip_exit_mass(z, 0.0, PI, terms)).abs() < 1e-6);
    }
}
