//! Doob h-transform walks on a solved field.

#[allow(unused_imports)]
use num_traits::{Float, FloatConst, One, ToPrimitive, Zero};
use rand::Rng;

use crate::paths::{PlanarPath, Point2, StepLaw};
use crate::scalar::Real;

use super::dirichlet::ScalarField;
use super::lattice::{Lattice, Site};
use super::GridError;

/// Sites visited by a conditioned walk; `exit` is the first fixed site entered.
#[derive(Debug, Clone, PartialEq)]
pub struct HWalk {
    pub sites: Vec<Site>,
    pub exit: Site,
}

impl HWalk {
    /// Last free site before the exit.
    pub fn last_free(&self) -> Option<Site> {
        self.sites.iter().rev().nth(1).copied()
    }

    /// Polyline through cell centres (the pole maps to the origin; boundary sites
    /// are dropped).
    pub fn to_path<L: Lattice>(
        &self,
        lattice: &L,
    ) -> Result<PlanarPath<L::Scalar>, crate::paths::PathError> {
        let pts: Vec<Point2<L::Scalar>> = self
            .sites
            .iter()
            .filter_map(|s| match *s {
                Site::Cell(c) => Some(lattice.center(c)),
                Site::Pole => Some(Point2::origin()),
                Site::Boundary(_) => None,
            })
            .collect();
        PlanarPath::with_law(pts, StepLaw::Logarithmic(L::Scalar::lit(0.25)))
    }
}

/// One step of the conditioned chain from `from`: neighbour `w` with probability
/// proportional to `conductance * h(w)`.
#[inline]
fn step<L: Lattice, R: Rng + ?Sized>(
    field: &ScalarField<L>,
    pole_nbrs: &[(usize, L::Scalar)],
    from: Site,
    rng: &mut R,
) -> Result<Site, GridError> {
    type S<L> = <L as Lattice>::Scalar;
    let lat = field.lattice();
    match from {
        Site::Cell(c) => {
            let nb = lat.neighbors(c);
            let mut wts = [S::<L>::zero(); 4];
            let mut total = S::<L>::zero();
            for (k, (s, w)) in nb.iter().enumerate() {
                wts[k] = *w * field.site(*s);
                total += wts[k];
            }
            if !(total > S::<L>::zero()) {
                return Err(GridError::NoPositiveNeighbor);
            }
            let mut u = S::<L>::standard_uniform(rng) * total;
            for k in 0..4 {
                if u < wts[k] && wts[k] > S::<L>::zero() {
                    return Ok(nb[k].0);
                }
                u -= wts[k];
            }
            // Round-off: take the last positive option.
            Ok(nb[(0..4)
                .rev()
                .find(|&k| wts[k] > S::<L>::zero())
                .expect("positive total")]
            .0)
        }
        Site::Pole => {
            let total: S<L> = pole_nbrs.iter().map(|&(c, w)| w * field.get(c)).sum();
            if !(total > S::<L>::zero()) {
                return Err(GridError::NoPositiveNeighbor);
            }
            let mut u = S::<L>::standard_uniform(rng) * total;
            let mut last = None;
            for &(c, w) in pole_nbrs {
                let x = w * field.get(c);
                if x > S::<L>::zero() {
                    if u < x {
                        return Ok(Site::Cell(c));
                    }
                    last = Some(c);
                }
                u -= x;
            }
            Ok(Site::Cell(last.expect("positive total")))
        }
        Site::Boundary(_) => Err(GridError::InvalidArgument(
            "walk cannot start on a boundary".into(),
        )),
    }
}

/// Runs the h-transformed walk from `start` until it first enters a fixed site,
/// calling `visit` on every site (start and exit included). A fixed start
/// (such as an absorbing pole) takes its first step regardless. Never enters a site
/// with `h = 0`.
pub fn h_walk_with<L: Lattice, R: Rng + ?Sized>(
    field: &ScalarField<L>,
    start: Site,
    max_steps: usize,
    rng: &mut R,
    mut visit: impl FnMut(Site),
) -> Result<Site, GridError> {
    let pole_nbrs = if start == Site::Pole || field.lattice().has_pole() {
        field.lattice().pole_neighbors()
    } else {
        Vec::new()
    };
    let mut cur = start;
    visit(cur);
    for _ in 0..max_steps {
        let next = step(field, &pole_nbrs, cur, rng)?;
        debug_assert!(field.site(next) > L::Scalar::zero());
        visit(next);
        if field.is_fixed(next) {
            return Ok(next);
        }
        cur = next;
    }
    Err(GridError::WalkBudget(max_steps))
}

/// Collecting version of [`h_walk_with`].
pub fn h_transform_walk<L: Lattice, R: Rng + ?Sized>(
    field: &ScalarField<L>,
    start: Site,
    max_steps: usize,
    rng: &mut R,
) -> Result<HWalk, GridError> {
    let mut sites = Vec::new();
    let exit = h_walk_with(field, start, max_steps, rng, |s| sites.push(s))?;
    Ok(HWalk { sites, exit })
}

/// Unconditioned nearest-neighbour walk (steps proportional to conductance) until
/// `stop` returns true; returns the stopping site.
pub fn simple_walk_until<L: Lattice, R: Rng + ?Sized>(
    lattice: &L,
    start: Site,
    max_steps: usize,
    rng: &mut R,
    mut stop: impl FnMut(Site) -> bool,
) -> Result<Site, GridError> {
    let pole_nbrs = lattice.pole_neighbors();
    let mut cur = start;
    if stop(cur) {
        return Ok(cur);
    }
    for _ in 0..max_steps {
        cur = match cur {
            Site::Cell(c) => {
                let nb = lattice.neighbors(c);
                let total: L::Scalar = nb.iter().map(|(_, w)| *w).sum();
                let mut u = L::Scalar::standard_uniform(rng) * total;
                let mut pick = nb[3].0;
                for (s, w) in nb {
                    if u < w {
                        pick = s;
                        break;
                    }
                    u -= w;
                }
                pick
            }
            Site::Pole => {
                let k = rng.random_range(0..pole_nbrs.len());
                Site::Cell(pole_nbrs[k].0)
            }
            Site::Boundary(_) => return Ok(cur),
        };
        if stop(cur) {
            return Ok(cur);
        }
    }
    Err(GridError::WalkBudget(max_steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dirichlet::{DirichletProblem, PoleCondition, SorParams};
    use crate::grid::lattice::SquareLattice;
    use crate::rng::StreamKey;

    #[test]
    fn walk_avoids_zero_sites() {
        let lat = SquareLattice::new(1.0f64, 6).unwrap();
        let mut p = DirichletProblem::new(lat, vec![1.0], PoleCondition::Fixed(0.0)).unwrap();
        for j in -6..=6 {
            p.fix(lat.index(2, j).unwrap(), 0.0);
        }
        let f = p.solve(SorParams::with_tolerance(1e-10)).unwrap();
        let mut rng = StreamKey::new(3).rng();
        for _ in 0..200 {
            let w = h_transform_walk(&f, Site::Cell(lat.index(0, 0).unwrap()), 100_000, &mut rng)
                .unwrap();
            assert!(w.sites.iter().all(|&s| f.site(s) > 0.0));
            assert!(matches!(w.exit, Site::Boundary(0)));
        }
    }

    #[test]
    fn zero_field_is_malformed() {
        let lat = SquareLattice::new(1.0f64, 3).unwrap();
        let f = ScalarField::constant(lat, 0.0);
        let mut rng = StreamKey::new(1).rng();
        assert!(matches!(
            h_transform_walk(&f, Site::Cell(0), 10, &mut rng),
            Err(GridError::NoPositiveNeighbor)
        ));
    }
}
