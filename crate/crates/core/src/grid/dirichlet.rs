//! Discrete Dirichlet problems solved by red-black successive over-relaxation.

use crate::scalar::Real;
#[allow(unused_imports)]
use num_traits::{Float, FloatConst, One, ToPrimitive, Zero};

use super::lattice::{Lattice, LogPolarLattice, Site, SquareLattice};
use super::mask::LatticeMask;
use super::GridError;

/// Value of the pole node in a Dirichlet problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoleCondition<T> {
    /// Absorbing with the given value.
    Fixed(T),
    /// Free: the pole is the weighted mean of its neighbours.
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SorParams<T> {
    /// Relaxation factor; `None` picks `2 / (1 + sin(pi / L))` for the longest side `L`.
    pub omega: Option<T>,
    pub tolerance: T,
    pub max_iterations: usize,
}

impl<T: Real> SorParams<T> {
    pub fn with_tolerance(tolerance: T) -> Self {
        Self {
            omega: None,
            tolerance,
            max_iterations: 200_000,
        }
    }
}

impl<T: Real> Default for SorParams<T> {
    fn default() -> Self {
        Self::with_tolerance(T::lit(1e-9))
    }
}

/// A real-valued function on the sites of a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<L: Lattice> {
    lattice: L,
    values: Vec<L::Scalar>,
    fixed: Vec<bool>,
    pole: L::Scalar,
    pole_fixed: bool,
    boundary: Vec<L::Scalar>,
    iterations: usize,
}

impl<L: Lattice> ScalarField<L> {
    pub fn constant(lattice: L, value: L::Scalar) -> Self {
        let n = lattice.cell_count();
        let nb = lattice.boundary_labels();
        Self {
            lattice,
            values: vec![value; n],
            fixed: vec![false; n],
            pole: value,
            pole_fixed: false,
            boundary: vec![value; nb],
            iterations: 0,
        }
    }

    /// A field with the given cell values, all cells free.
    pub fn from_values(lattice: L, values: Vec<L::Scalar>) -> Self {
        let mut f = Self::constant(lattice, L::Scalar::zero());
        assert_eq!(values.len(), f.values.len(), "one value per cell");
        f.values = values;
        f
    }

    pub fn lattice(&self) -> &L {
        &self.lattice
    }

    #[inline]
    pub fn get(&self, cell: usize) -> L::Scalar {
        self.values[cell]
    }

    #[inline]
    pub fn site(&self, site: Site) -> L::Scalar {
        match site {
            Site::Cell(c) => self.values[c],
            Site::Pole => self.pole,
            Site::Boundary(b) => self.boundary[b as usize],
        }
    }

    /// Whether a site carries boundary data (cells fixed by the problem, fixed pole,
    /// lattice boundaries).
    #[inline]
    pub fn is_fixed(&self, site: Site) -> bool {
        match site {
            Site::Cell(c) => self.fixed[c],
            Site::Pole => self.pole_fixed,
            Site::Boundary(_) => true,
        }
    }

    pub fn values(&self) -> &[L::Scalar] {
        &self.values
    }

    pub fn pole(&self) -> L::Scalar {
        self.pole
    }

    /// Relaxation sweeps used by the solve.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Largest `|u - weighted mean of neighbours|` over free sites.
    pub fn max_residual(&self) -> L::Scalar {
        let mut worst = L::Scalar::zero();
        for c in 0..self.values.len() {
            if !self.fixed[c] {
                worst = worst.max((self.neighbor_mean(c) - self.values[c]).abs());
            }
        }
        if self.lattice.has_pole() && !self.pole_fixed {
            worst = worst.max((self.pole_mean() - self.pole).abs());
        }
        worst
    }

    #[inline]
    fn neighbor_mean(&self, c: usize) -> L::Scalar {
        let mut num = L::Scalar::zero();
        let mut den = L::Scalar::zero();
        for (s, w) in self.lattice.neighbors(c) {
            num += w * self.site(s);
            den += w;
        }
        num / den
    }

    fn pole_mean(&self) -> L::Scalar {
        let mut num = L::Scalar::zero();
        let mut den = L::Scalar::zero();
        for (c, w) in self.lattice.pole_neighbors() {
            num += w * self.values[c];
            den += w;
        }
        num / den
    }
}

/// Boundary data for a harmonic solve on a lattice.
#[derive(Debug, Clone)]
pub struct DirichletProblem<L: Lattice> {
    lattice: L,
    fixed: Vec<Option<L::Scalar>>,
    boundary: Vec<L::Scalar>,
    pole: PoleCondition<L::Scalar>,
}

impl<L: Lattice> DirichletProblem<L> {
    /// All cells free; `boundary[label]` is the value on each lattice boundary.
    pub fn new(
        lattice: L,
        boundary: Vec<L::Scalar>,
        pole: PoleCondition<L::Scalar>,
    ) -> Result<Self, GridError> {
        if boundary.len() != lattice.boundary_labels() {
            return Err(GridError::InvalidArgument(format!(
                "expected {} boundary values, got {}",
                lattice.boundary_labels(),
                boundary.len()
            )));
        }
        let n = lattice.cell_count();
        Ok(Self {
            lattice,
            fixed: vec![None; n],
            boundary,
            pole,
        })
    }

    pub fn lattice(&self) -> &L {
        &self.lattice
    }

    pub fn fix(&mut self, cell: usize, value: L::Scalar) {
        self.fixed[cell] = Some(value);
    }

    pub fn fixed_value(&self, cell: usize) -> Option<L::Scalar> {
        self.fixed[cell]
    }

    pub fn set_pole(&mut self, pole: PoleCondition<L::Scalar>) {
        self.pole = pole;
    }

    /// Fixes every occupied site of the mask (the pole included) to `value`.
    pub fn fix_mask(&mut self, mask: &LatticeMask<L>, value: L::Scalar) {
        for c in mask.occupied_cells() {
            self.fixed[c] = Some(value);
        }
        if mask.pole_occupied() {
            self.pole = PoleCondition::Fixed(value);
        }
    }

    pub fn solve(&self, params: SorParams<L::Scalar>) -> Result<ScalarField<L>, GridError> {
        let (lo, hi) = self.value_range();
        let guess = (lo + hi) * L::Scalar::lit(0.5);
        self.solve_from(params, |_| guess)
    }

    /// Solve starting from `guess(cell)` on free cells.
    pub fn solve_from(
        &self,
        params: SorParams<L::Scalar>,
        guess: impl Fn(usize) -> L::Scalar,
    ) -> Result<ScalarField<L>, GridError> {
        type S<L> = <L as Lattice>::Scalar;
        let tol = params.tolerance;
        if !(tol > S::<L>::zero()) {
            return Err(GridError::InvalidArgument(
                "tolerance must be positive".into(),
            ));
        }
        let lat = &self.lattice;
        let n = lat.cell_count();
        let has_pole = lat.has_pole();
        // Extended value array: cells, then pole, then boundary labels.
        let pole_slot = n;
        let bnd_base = n + 1;
        let mut vals: Vec<S<L>> = Vec::with_capacity(n + 1 + self.boundary.len());
        let (lo, hi) = self.value_range();
        for c in 0..n {
            vals.push(match self.fixed[c] {
                Some(v) => v,
                None => guess(c),
            });
        }
        let pole_free = has_pole && matches!(self.pole, PoleCondition::Harmonic);
        vals.push(match self.pole {
            PoleCondition::Fixed(v) => v,
            PoleCondition::Harmonic => (lo + hi) * S::<L>::lit(0.5),
        });
        vals.extend(self.boundary.iter().copied());

        // Compressed stencils for the free cells, split by colour.
        struct Stencil<T> {
            cell: u32,
            nbr: [u32; 4],
            w: [T; 4],
        }
        let mut red = Vec::new();
        let mut black = Vec::new();
        for c in 0..n {
            if self.fixed[c].is_some() {
                continue;
            }
            let mut nbr = [0u32; 4];
            let mut w = [S::<L>::zero(); 4];
            let mut den = S::<L>::zero();
            for (k, (s, wt)) in lat.neighbors(c).into_iter().enumerate() {
                nbr[k] = match s {
                    Site::Cell(o) => o as u32,
                    Site::Pole => pole_slot as u32,
                    Site::Boundary(b) => (bnd_base + b as usize) as u32,
                };
                w[k] = wt;
                den += wt;
            }
            for x in &mut w {
                *x /= den;
            }
            let st = Stencil {
                cell: c as u32,
                nbr,
                w,
            };
            if lat.color(c) {
                red.push(st);
            } else {
                black.push(st);
            }
        }
        let pole_nbrs: Vec<(usize, S<L>)> = if pole_free {
            let raw = lat.pole_neighbors();
            let den: S<L> = raw.iter().map(|(_, w)| *w).sum();
            raw.into_iter().map(|(c, w)| (c, w / den)).collect()
        } else {
            Vec::new()
        };

        let omega = params.omega.unwrap_or_else(|| {
            let (r, c) = lat.dims();
            let l = S::<L>::from_usize_lossy(r.max(c).max(2));
            S::<L>::lit(2.0) / (S::<L>::one() + (S::<L>::PI() / l).sin())
        });
        let relax = |vals: &mut Vec<S<L>>, set: &[Stencil<S<L>>]| -> S<L> {
            let mut worst = S::<L>::zero();
            for st in set {
                let mut avg = S::<L>::zero();
                for k in 0..4 {
                    avg += st.w[k] * vals[st.nbr[k] as usize];
                }
                let cur = &mut vals[st.cell as usize];
                let r = avg - *cur;
                worst = worst.max(r.abs());
                *cur += omega * r;
            }
            worst
        };
        let residual = |vals: &Vec<S<L>>| -> S<L> {
            let mut worst = S::<L>::zero();
            for st in red.iter().chain(black.iter()) {
                let mut avg = S::<L>::zero();
                for k in 0..4 {
                    avg += st.w[k] * vals[st.nbr[k] as usize];
                }
                worst = worst.max((avg - vals[st.cell as usize]).abs());
            }
            if pole_free {
                let m: S<L> = pole_nbrs.iter().map(|&(c, w)| w * vals[c]).sum();
                worst = worst.max((m - vals[pole_slot]).abs());
            }
            worst
        };

        let mut iterations = 0;
        let mut last = S::<L>::infinity();
        while iterations < params.max_iterations {
            iterations += 1;
            let mut worst = relax(&mut vals, &red);
            worst = worst.max(relax(&mut vals, &black));
            if pole_free {
                let m: S<L> = pole_nbrs.iter().map(|&(c, w)| w * vals[c]).sum();
                worst = worst.max((m - vals[pole_slot]).abs());
                vals[pole_slot] = m;
            }
            if worst <= tol {
                // Clamp round-off excursions, then confirm on the settled values.
                for v in vals.iter_mut().take(n + 1) {
                    *v = v.max(lo).min(hi);
                }
                last = residual(&vals);
                if last <= tol {
                    let pole = vals[pole_slot];
                    vals.truncate(n);
                    return Ok(ScalarField {
                        lattice: lat.clone(),
                        values: vals,
                        fixed: self.fixed.iter().map(Option::is_some).collect(),
                        pole,
                        pole_fixed: has_pole && !pole_free,
                        boundary: self.boundary.clone(),
                        iterations,
                    });
                }
            } else {
                last = worst;
            }
        }
        Err(GridError::NotConverged {
            iterations,
            residual: last.as_f64(),
        })
    }

    fn value_range(&self) -> (L::Scalar, L::Scalar) {
        let mut lo = L::Scalar::infinity();
        let mut hi = L::Scalar::neg_infinity();
        let mut see = |v: L::Scalar| {
            lo = lo.min(v);
            hi = hi.max(v);
        };
        self.fixed.iter().flatten().for_each(|&v| see(v));
        self.boundary.iter().for_each(|&v| see(v));
        if let PoleCondition::Fixed(v) = self.pole {
            if self.lattice.has_pole() {
                see(v);
            }
        }
        if lo > hi {
            (L::Scalar::zero(), L::Scalar::zero())
        } else {
            (lo, hi)
        }
    }
}

impl<T: Real> DirichletProblem<LogPolarLattice<T>> {
    /// Same solve as [`DirichletProblem::solve_from`], with a row-major kernel that uses
    /// the two constant conductances of the log-polar lattice and ghost rows for the
    /// pole and the top boundary.
    pub fn solve_polar(
        &self,
        params: SorParams<T>,
        guess: impl Fn(usize) -> T,
    ) -> Result<ScalarField<LogPolarLattice<T>>, GridError> {
        let tol = params.tolerance;
        if !(tol > T::zero()) {
            return Err(GridError::InvalidArgument(
                "tolerance must be positive".into(),
            ));
        }
        let lat = self.lattice;
        let (rows, m) = (lat.rows, lat.cols);
        // The slowest mode is angular once rows exceed a few units of log r; the
        // effective side 4K was found by scanning omega on sampled sausages.
        let omega = params.omega.unwrap_or_else(|| {
            let l = T::from_usize_lossy(rows.min(4 * lat.rows_per_unit).max(4));
            T::lit(2.0) / (T::one() + (T::PI() / l).sin())
        });
        let tw = lat.neighbors(0)[0].1;
        let den = T::lit(2.0) * tw + T::lit(2.0);
        let (a, b) = (tw / den, T::one() / den);
        let (lo, hi) = self.value_range();
        let pole_free = matches!(self.pole, PoleCondition::Harmonic);
        let mut v = vec![T::zero(); (rows + 2) * m];
        let mut fw = vec![T::zero(); (rows + 2) * m];
        for c in 0..rows * m {
            let i = c + m;
            match self.fixed[c] {
                Some(x) => v[i] = x,
                None => {
                    v[i] = guess(c);
                    fw[i] = T::one();
                }
            }
        }
        let pole0 = match self.pole {
            PoleCondition::Fixed(x) => x,
            PoleCondition::Harmonic => (lo + hi) * T::lit(0.5),
        };
        v[..m].iter_mut().for_each(|x| *x = pole0);
        let top = self.boundary[0];
        v[(rows + 1) * m..].iter_mut().for_each(|x| *x = top);

        // One half-sweep over cells with (row + col) of the given parity; returns the
        // largest free residual seen before updating.
        let half = |v: &mut [T], parity: usize, w: T| -> T {
            let mut worst = T::zero();
            for r in 0..rows {
                let base = (r + 1) * m;
                let mut c = (parity + r) % 2;
                while c < m {
                    let i = base + c;
                    let left = if c == 0 { base + m - 1 } else { i - 1 };
                    let right = if c + 1 == m { base } else { i + 1 };
                    let avg = a * (v[left] + v[right]) + b * (v[i - m] + v[i + m]);
                    let res = (avg - v[i]) * fw[i];
                    worst = worst.max(res.abs());
                    v[i] += w * res;
                    c += 2;
                }
            }
            worst
        };
        let pole_update = |v: &mut [T]| -> T {
            let mean = v[m..2 * m].iter().copied().sum::<T>() / T::from_usize_lossy(m);
            let r = (mean - v[0]).abs();
            v[..m].iter_mut().for_each(|x| *x = mean);
            r
        };

        let mut iterations = 0;
        let mut last = T::infinity();
        while iterations < params.max_iterations {
            iterations += 1;
            let mut worst = half(&mut v, 0, omega);
            worst = worst.max(half(&mut v, 1, omega));
            if pole_free {
                worst = worst.max(pole_update(&mut v));
            }
            if worst <= tol {
                for x in v[m..(rows + 1) * m].iter_mut() {
                    *x = x.max(lo).min(hi);
                }
                // Over-relaxation can leave values that are truly tiny clamped to the
                // lower bound; Gauss-Seidel sweeps are monotone and restore strict
                // interior positivity where the exact solution has it.
                let at_floor = |v: &[T]| {
                    (m..(rows + 1) * m)
                        .filter(|&i| fw[i] > T::zero() && v[i] <= lo)
                        .count()
                };
                let mut stuck = at_floor(&v);
                for _ in 0..rows + m {
                    if stuck == 0 {
                        break;
                    }
                    half(&mut v, 0, T::one());
                    half(&mut v, 1, T::one());
                    if pole_free {
                        pole_update(&mut v);
                    }
                    let now = at_floor(&v);
                    if now >= stuck {
                        break;
                    }
                    stuck = now;
                }
                let mut check = v.clone();
                last = half(&mut check, 0, T::zero()).max(half(&mut check, 1, T::zero()));
                if pole_free {
                    let mean = v[m..2 * m].iter().copied().sum::<T>() / T::from_usize_lossy(m);
                    last = last.max((mean - v[0]).abs());
                }
                if last <= tol {
                    return Ok(ScalarField {
                        lattice: lat,
                        values: v[m..(rows + 1) * m].to_vec(),
                        fixed: self.fixed.iter().map(Option::is_some).collect(),
                        pole: v[0],
                        pole_fixed: !pole_free,
                        boundary: self.boundary.clone(),
                        iterations,
                    });
                }
            } else {
                last = worst;
            }
        }
        Err(GridError::NotConverged {
            iterations,
            residual: last.as_f64(),
        })
    }
}

/// Probability that a walk from each cell reaches the circle of radius `outer_radius`
/// before the occupied cells: 0 on the mask, 1 on cells centred at or beyond the circle.
pub fn solve_dirichlet<T: Real>(
    mask: &LatticeMask<SquareLattice<T>>,
    outer_radius: T,
    tolerance: T,
) -> Result<ScalarField<SquareLattice<T>>, GridError> {
    let lat = *mask.lattice();
    if !(tolerance > T::zero() && tolerance <= T::lit(1e-3)) {
        return Err(GridError::InvalidArgument(
            "tolerance must lie in (0, 1e-3]".into(),
        ));
    }
    if !(outer_radius > T::zero()) || outer_radius > lat.covered_radius() {
        return Err(GridError::OutsideGrid);
    }
    let mut problem = DirichletProblem::new(lat, vec![T::one()], PoleCondition::Fixed(T::zero()))?;
    for c in 0..lat.cell_count() {
        if lat.center(c).norm() >= outer_radius {
            problem.fix(c, T::one());
        }
    }
    problem.fix_mask(mask, T::zero());
    let n = lat.extent;
    let params = SorParams {
        omega: None,
        tolerance,
        max_iterations: 10 * n * n + 1000,
    };
    problem.solve(params)
}

/// Largest field value over free cells meeting the circle; 0 when all are occupied.
pub fn sup_over_circle<L: Lattice>(
    field: &ScalarField<L>,
    mask: &LatticeMask<L>,
    radius: L::Scalar,
) -> L::Scalar {
    field
        .lattice()
        .circle_cells(radius)
        .into_iter()
        .filter(|&c| !mask.is_occupied(c))
        .map(|c| field.get(c))
        .fold(L::Scalar::zero(), |a, b| a.max(b))
}
