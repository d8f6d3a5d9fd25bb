//! Pairs of paths from the origin to the unit circle, the one-annulus extension
//! and the transfer operator built on it.
//!
//! A configuration lives on a log-polar lattice over `log r in [-depth, 0)` whose
//! pole stands for the small disk around the origin (always occupied, since both
//! paths start there). Extending by one unit adds `rows_per_unit` rows on top;
//! rescaling by `e^{-1}` is then an exact shift by that many rows, so occupancy
//! carries over without re-rasterizing.
//!
//! `Z` is computed exactly on the lattice as `G / H`, where `H` sums the harmonic
//! measure seen from the pole over the innermost row for the configuration and `G`
//! does the same for the extended sausage with the target moved out one unit.
//! The Monte Carlo estimator with inner walks has this ratio as its mean.

use std::sync::{Arc, OnceLock};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    flood_outside, free_components, h_walk_with, simple_walk_until, DirichletProblem,
    FreeComponents, GridError, Lattice, LatticeMask, LogPolarLattice, PoleCondition, Region,
    ScalarField, Site, SorParams,
};
use crate::paths::{
    extend_log_polyline, log_coordinates, y_class_levels, Floor, PathError, PlanarPath, Point2,
    StepLaw,
};
use crate::rng::{StreamKey, StreamRng};
use crate::scalar::wrap_angle;
use crate::stats::RunningStats;

type Lat = LogPolarLattice<f64>;
type Mask = LatticeMask<Lat>;
type W = (f64, f64);

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("not in Gamma: {0}")]
    NotInGamma(String),
    #[error("ensemble extinct at step {0} (suggest larger particles)")]
    Extinct(usize),
    #[error("denominator estimate is zero")]
    ZeroDenominator,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("malformed snapshot: {0}")]
    Malformed(String),
}

/// Lattice and walk parameters shared by every configuration of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorGrid {
    pub rows_per_unit: usize,
    /// The lattice covers `log r in [-depth, 0)`.
    pub depth: usize,
    pub log_step: f64,
    /// Walks deeper than this below the floor jump back with the exact return law.
    pub return_depth: f64,
    /// Path points are kept down to `log r = -keep_depth` (tails and downcrossings
    /// are resolved up to that scale); deeper runs are compressed.
    pub keep_depth: f64,
    pub tolerance: f64,
    pub max_steps: usize,
}

impl Default for OperatorGrid {
    fn default() -> Self {
        Self {
            rows_per_unit: 12,
            depth: 3,
            log_step: 0.05,
            return_depth: 1.0,
            keep_depth: 4.0,
            tolerance: 1e-8,
            max_steps: 50_000_000,
        }
    }
}

impl OperatorGrid {
    pub fn validate(&self) -> Result<(), OperatorError> {
        if self.rows_per_unit < 4 || self.depth < 1 {
            return Err(OperatorError::InvalidArgument(
                "need rows_per_unit >= 4 and depth >= 1".into(),
            ));
        }
        if !(self.log_step > 0.0 && self.log_step <= 0.25) || !(self.return_depth > 0.0) {
            return Err(OperatorError::InvalidArgument(
                "need log_step in (0, 0.25] and return_depth > 0".into(),
            ));
        }
        if !(self.keep_depth >= self.depth as f64) {
            return Err(OperatorError::InvalidArgument(
                "keep_depth must be at least depth".into(),
            ));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-3) {
            return Err(OperatorError::InvalidArgument(
                "tolerance must lie in (0, 1e-3]".into(),
            ));
        }
        Ok(())
    }

    pub fn floor(&self) -> f64 {
        -(self.depth as f64)
    }

    /// Lattice of a configuration.
    pub fn lattice(&self) -> Lat {
        self.extension_lattice(0)
    }

    /// Lattice of a configuration extended by `units` log-units.
    pub fn extension_lattice(&self, units: usize) -> Lat {
        LogPolarLattice::new(self.floor(), units as f64, self.rows_per_unit)
            .expect("validated grid")
    }

    fn walk_floor(&self) -> Floor<f64> {
        Floor::Return {
            level: self.floor(),
            depth: self.return_depth,
        }
    }

    fn sor(&self) -> SorParams<f64> {
        SorParams::with_tolerance(self.tolerance)
    }

    /// `log r` of the stub point that stands for the origin.
    fn stub(&self) -> f64 {
        -self.keep_depth - 1.0
    }
}

/// How to build a configuration.
#[derive(Debug, Clone)]
pub enum ConfigKind {
    /// `alpha` radial at angle `3pi/4`; `beta` follows it to radius `e^{-1}`, turns
    /// along that circle to `5pi/4` and leaves radially. Lies in `Gamma+`.
    GammaPlusRadial,
    /// Two independent Brownian paths from the origin to the unit circle.
    Sampled(StreamKey),
    /// Paths from the origin to the unit circle.
    Explicit {
        alpha: PlanarPath<f64>,
        beta: PlanarPath<f64>,
    },
}

/// `gamma = (alpha, beta)` with its occupancy mask and the domain `O(gamma)`.
///
/// Paths are stored as `(log r, unwrapped arg)` polylines whose first point is a
/// stub below `-keep_depth` standing for the origin.
#[derive(Debug, Clone)]
pub struct Config {
    grid: OperatorGrid,
    alpha: Vec<W>,
    beta: Vec<W>,
    mask: Mask,
    /// Cells of `O(gamma)`.
    domain: Vec<bool>,
    domain_components: usize,
    h_sum: OnceLock<f64>,
}

impl PartialEq for Config {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.alpha == other.alpha
            && self.beta == other.beta
            && self.mask == other.mask
    }
}

pub fn make_config(kind: ConfigKind, grid: OperatorGrid) -> Result<Config, OperatorError> {
    let c = candidate_config(kind, grid)?;
    match c.domain_components {
        1 => Ok(c),
        0 => Err(OperatorError::NotInGamma(
            "no free component joins the origin to the unit circle".into(),
        )),
        k => Err(OperatorError::NotInGamma(format!(
            "{k} components join the origin to the unit circle"
        ))),
    }
}

/// Builds the configuration without insisting on a unique domain component; errors
/// only when no free component joins the origin to the unit circle.
pub fn candidate_config(kind: ConfigKind, grid: OperatorGrid) -> Result<Config, OperatorError> {
    grid.validate()?;
    let (alpha, beta) = match kind {
        ConfigKind::GammaPlusRadial => gamma_plus_paths(&grid),
        ConfigKind::Sampled(key) => sampled_paths(&grid, key)?,
        ConfigKind::Explicit { alpha, beta } => {
            (explicit_path(&grid, &alpha)?, explicit_path(&grid, &beta)?)
        }
    };
    Config::from_log_paths(grid, alpha, beta)
}

/// Draws sampled configurations until one lies in `Gamma`.
pub fn sample_config(
    grid: OperatorGrid,
    key: StreamKey,
    max_tries: usize,
) -> Result<Config, OperatorError> {
    let mut last = None;
    for t in 0..max_tries {
        match make_config(ConfigKind::Sampled(key.child(t as u64)), grid) {
            Ok(c) => return Ok(c),
            Err(e @ OperatorError::NotInGamma(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| OperatorError::InvalidArgument("max_tries must be positive".into())))
}

fn gamma_plus_paths(grid: &OperatorGrid) -> (Vec<W>, Vec<W>) {
    use std::f64::consts::PI;
    let (a, b) = (0.75 * PI, 1.25 * PI);
    let stub = grid.stub();
    let alpha = vec![(stub, a), (0.0, a)];
    let beta = vec![(stub, a), (-1.0, a), (-1.0, b), (0.0, b)];
    (alpha, beta)
}

fn sampled_paths(grid: &OperatorGrid, key: StreamKey) -> Result<(Vec<W>, Vec<W>), OperatorError> {
    let mut out = Vec::with_capacity(2);
    for (i, name) in ["alpha", "beta"].into_iter().enumerate() {
        let mut rng = key.named(name).child(i as u64).rng();
        let stub = grid.stub();
        let theta = std::f64::consts::TAU * rng.random::<f64>();
        // A walk from deep inside the stub disk is a walk from the origin as far as
        // anything at or above `-keep_depth` can tell.
        let mut pts = vec![(stub, theta)];
        let floor = Floor::Return {
            level: stub,
            depth: grid.return_depth,
        };
        extend_log_polyline(
            &mut pts,
            0.0,
            grid.log_step,
            floor,
            grid.max_steps,
            &mut rng,
        )?;
        out.push(compress(pts, grid.keep_depth));
    }
    let beta = out.pop().expect("two paths");
    let alpha = out.pop().expect("two paths");
    Ok((alpha, beta))
}

fn explicit_path(grid: &OperatorGrid, path: &PlanarPath<f64>) -> Result<Vec<W>, OperatorError> {
    let pts = path.points();
    if pts[0].norm() > 1e-12 {
        return Err(OperatorError::InvalidArgument(
            "paths must start at the origin".into(),
        ));
    }
    let last = pts[pts.len() - 1].norm();
    if !(last >= 1.0 - 1e-12) {
        return Err(OperatorError::InvalidArgument(
            "paths must end on the unit circle".into(),
        ));
    }
    if pts[1..pts.len() - 1]
        .iter()
        .any(|p| !(p.norm() > 0.0 && p.norm() < 1.0))
    {
        return Err(OperatorError::InvalidArgument(
            "paths must stay inside the open unit disk".into(),
        ));
    }
    let w = log_coordinates(path);
    let mut out = vec![(grid.stub(), w[0].1)];
    out.extend(w);
    Ok(compress(out, grid.keep_depth))
}

/// Drops everything before the last point below `-keep` that precedes the first
/// point at or above it, and shortens later runs below `-keep` to their end points.
/// Neither the lattice occupancy (all of it is pole) nor any tail or downcrossing
/// resolved above `-keep` changes.
fn compress(points: Vec<W>, keep: f64) -> Vec<W> {
    let first = points.iter().position(|p| p.0 >= -keep);
    let Some(first) = first else {
        return vec![points[0], points[points.len() - 1]];
    };
    let start = first.saturating_sub(1);
    let mut out = Vec::with_capacity(points.len() - start);
    let n = points.len();
    for i in start..n {
        let deep = points[i].0 < -keep;
        let interior_of_run =
            deep && i > start && i + 1 < n && points[i - 1].0 < -keep && points[i + 1].0 < -keep;
        if !interior_of_run {
            out.push(points[i]);
        }
    }
    out
}

impl Config {
    /// Builds a configuration from log-plane paths (first point the origin stub),
    /// requiring at least one free component joining the origin to the unit circle.
    pub fn from_log_paths(
        grid: OperatorGrid,
        alpha: Vec<W>,
        beta: Vec<W>,
    ) -> Result<Self, OperatorError> {
        grid.validate()?;
        for p in [&alpha, &beta] {
            if p.len() < 2 || !(p[0].0 < grid.floor()) || !(p[p.len() - 1].0 >= 0.0) {
                return Err(OperatorError::InvalidArgument(
                    "log paths must start below the floor and end on the unit circle".into(),
                ));
            }
        }
        let mut mask = Mask::empty(grid.lattice());
        mask.add_log_polyline(&alpha);
        mask.add_log_polyline(&beta);
        mask.set_pole(true);
        let lat = *mask.lattice();
        // With no history beyond the lattice, the origin is reached through the
        // innermost row.
        let inner: Vec<usize> = (0..lat.cols).map(|c| lat.index(0, c)).collect();
        let domain = domain_from(&mask, &inner, lat.rows - 1);
        Self::assemble(grid, alpha, beta, mask, domain)
    }

    fn assemble(
        grid: OperatorGrid,
        alpha: Vec<W>,
        beta: Vec<W>,
        mask: Mask,
        domain: Vec<bool>,
    ) -> Result<Self, OperatorError> {
        let comps = free_components(&mask);
        let mut ids: Vec<u32> = (0..domain.len())
            .filter(|&c| domain[c])
            .map(|c| comps.labels[c])
            .collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(OperatorError::NotInGamma(
                "no free component joins the origin to the unit circle".into(),
            ));
        }
        Ok(Self {
            grid,
            alpha,
            beta,
            mask,
            domain,
            domain_components: ids.len(),
            h_sum: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &OperatorGrid {
        &self.grid
    }

    pub fn lattice(&self) -> &Lat {
        self.mask.lattice()
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// `(log r, arg)` samples of `alpha`, starting with the origin stub.
    pub fn alpha_log(&self) -> &[W] {
        &self.alpha
    }

    pub fn beta_log(&self) -> &[W] {
        &self.beta
    }

    /// `alpha` as a planar path from the origin (history deeper than `keep_depth`
    /// is abbreviated).
    pub fn alpha(&self) -> PlanarPath<f64> {
        planar(&self.alpha, self.grid.log_step)
    }

    pub fn beta(&self) -> PlanarPath<f64> {
        planar(&self.beta, self.grid.log_step)
    }

    /// Number of free components joining the origin to the unit circle (1 for `Gamma`).
    pub fn domain_component_count(&self) -> usize {
        self.domain_components
    }

    /// Whether a cell belongs to `O(gamma)`.
    pub fn in_domain(&self, cell: usize) -> bool {
        self.domain[cell]
    }

    /// Innermost cells of `O(gamma)`, through which walks from the origin enter the lattice.
    pub fn entrance(&self) -> Vec<usize> {
        let lat = self.lattice();
        (0..lat.cols)
            .map(|c| lat.index(0, c))
            .filter(|&c| self.domain[c])
            .collect()
    }

    /// Cells of the outermost row inside `O(gamma)`: the lattice trace of `O(gamma)` on the unit circle.
    pub fn boundary_trace(&self) -> Vec<usize> {
        let lat = self.lattice();
        (0..lat.cols)
            .map(|c| lat.index(lat.rows - 1, c))
            .filter(|&c| self.in_domain(c))
            .collect()
    }

    /// Circular mean angle of [`Config::boundary_trace`].
    pub fn mean_trace_angle(&self) -> f64 {
        let lat = self.lattice();
        let (mut x, mut y) = (0.0, 0.0);
        for c in self.boundary_trace() {
            let t = lat.cell_theta(lat.row_col(c).1);
            x += t.cos();
            y += t.sin();
        }
        y.atan2(x)
    }

    /// Sum over [`Config::entrance`] of the probability of reaching the unit circle
    /// before the sausage; cached.
    pub fn h_sum(&self) -> Result<f64, OperatorError> {
        if let Some(&h) = self.h_sum.get() {
            return Ok(h);
        }
        let field = self.h_field()?;
        let h: f64 = self.entrance().into_iter().map(|c| field.get(c)).sum();
        Ok(*self.h_sum.get_or_init(|| h))
    }

    /// Harmonic field: 0 on the sausage and the pole, 1 on the unit circle.
    pub fn h_field(&self) -> Result<ScalarField<Lat>, OperatorError> {
        harmonic_to_top(&self.mask, &self.grid)
    }

    /// Extends both paths by Brownian arms to `log r >= units`.
    pub fn extend(&self, units: usize, key: StreamKey) -> Result<ExtendedConfig, OperatorError> {
        let mut ra = key.named("alpha").rng();
        let mut rb = key.named("beta").rng();
        let arm_a = self.arm(&self.alpha, units, &mut ra)?;
        let arm_b = self.arm(&self.beta, units, &mut rb)?;
        Ok(self.attach(units, arm_a, arm_b))
    }

    fn arm<R: Rng + ?Sized>(
        &self,
        path: &[W],
        units: usize,
        rng: &mut R,
    ) -> Result<Vec<W>, OperatorError> {
        let mut arm = vec![path[path.len() - 1]];
        extend_log_polyline(
            &mut arm,
            units as f64,
            self.grid.log_step,
            self.grid.walk_floor(),
            self.grid.max_steps,
            rng,
        )?;
        Ok(arm)
    }

    fn attach(&self, units: usize, arm_a: Vec<W>, arm_b: Vec<W>) -> ExtendedConfig {
        let lat = self.grid.extension_lattice(units);
        let mut mask = Mask::empty(lat);
        for c in self.mask.occupied_cells() {
            mask.set(c);
        }
        mask.set_pole(true);
        // The last segments were clipped at the unit circle.
        for p in [&self.alpha, &self.beta] {
            mask.add_log_polyline(&p[p.len() - 2..]);
        }
        mask.add_log_polyline(&arm_a);
        mask.add_log_polyline(&arm_b);
        let join = |p: &[W], arm: Vec<W>| {
            let mut v = Vec::with_capacity(p.len() + arm.len());
            v.extend_from_slice(p);
            v.extend_from_slice(&arm[1..]);
            v
        };
        ExtendedConfig {
            base: self.clone(),
            units,
            alpha: join(&self.alpha, arm_a),
            beta: join(&self.beta, arm_b),
            mask,
            reach: OnceLock::new(),
        }
    }

    /// Snapshot with the grid header and both log-plane path records.
    pub fn snapshot(&self) -> ConfigSnapshot {
        ConfigSnapshot {
            grid: self.grid,
            alpha: self.alpha.iter().map(|&(u, t)| [u, t]).collect(),
            beta: self.beta.iter().map(|&(u, t)| [u, t]).collect(),
        }
    }

    pub fn from_snapshot(s: &ConfigSnapshot) -> Result<Self, OperatorError> {
        let conv = |v: &[[f64; 2]]| v.iter().map(|p| (p[0], p[1])).collect::<Vec<W>>();
        Self::from_log_paths(s.grid, conv(&s.alpha), conv(&s.beta))
    }
}

fn planar(w: &[W], log_step: f64) -> PlanarPath<f64> {
    let mut pts = vec![Point2::origin()];
    pts.extend(w[1..].iter().map(|&(u, t)| Point2::polar(u.exp(), t)));
    PlanarPath::from_parts_unchecked(pts, StepLaw::Logarithmic(log_step))
}

/// Cells of the free components that contain a seed cell and reach row `top_row`.
fn domain_from(mask: &Mask, seeds: &[usize], top_row: usize) -> Vec<bool> {
    let lat = *mask.lattice();
    let comps = free_components(mask);
    let k = comps.count as usize;
    let (mut seeded, mut outer) = (vec![false; k], vec![false; k]);
    for &c in seeds {
        let l = comps.labels[c];
        if l != FreeComponents::OCCUPIED {
            seeded[l as usize] = true;
        }
    }
    for col in 0..lat.cols {
        let l = comps.labels[lat.index(top_row, col)];
        if l != FreeComponents::OCCUPIED {
            outer[l as usize] = true;
        }
    }
    comps
        .labels
        .iter()
        .map(|&l| l != FreeComponents::OCCUPIED && seeded[l as usize] && outer[l as usize])
        .collect()
}

/// Serializable form of a [`Config`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub grid: OperatorGrid,
    /// `[log r, arg]` samples.
    pub alpha: Vec<[f64; 2]>,
    pub beta: Vec<[f64; 2]>,
}

fn harmonic_to_top(mask: &Mask, grid: &OperatorGrid) -> Result<ScalarField<Lat>, OperatorError> {
    let lat = *mask.lattice();
    let labels = flood_outside(mask);
    let mut problem = DirichletProblem::new(lat, vec![1.0], PoleCondition::Fixed(0.0))?;
    problem.fix_mask(mask, 0.0);
    for (c, r) in labels.labels().iter().enumerate() {
        if matches!(r, Region::Enclosed(_)) {
            problem.fix(c, 0.0);
        }
    }
    let rows = lat.rows as f64;
    Ok(problem.solve_polar(grid.sor(), |c| {
        (lat.row_col(c).0 as f64 + 1.0) / (rows + 1.0)
    })?)
}

/// A configuration with arms attached, before rescaling.
#[derive(Debug, Clone)]
pub struct ExtendedConfig {
    base: Config,
    units: usize,
    alpha: Vec<W>,
    beta: Vec<W>,
    mask: Mask,
    /// Extended domain: free components holding an entrance cell and reaching the outer circle.
    reach: OnceLock<Vec<bool>>,
}

impl ExtendedConfig {
    fn reach(&self) -> &[bool] {
        self.reach.get_or_init(|| {
            domain_from(
                &self.mask,
                &self.base.entrance(),
                self.mask.lattice().rows - 1,
            )
        })
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn base(&self) -> &Config {
        &self.base
    }

    /// Whether `O(gamma)` is joined to the outer circle in the extension: the
    /// extension does not disconnect the origin from the circle of radius `e^units`.
    pub fn connects(&self) -> bool {
        self.reach().iter().any(|&b| b)
    }

    /// Exact lattice `Z`: `sum g / sum h` over the entrance cells.
    pub fn z_exact(&self) -> Result<f64, OperatorError> {
        if !self.connects() {
            return Ok(0.0);
        }
        let field = harmonic_to_top(&self.mask, &self.base.grid)?;
        let g: f64 = self.base.entrance().into_iter().map(|c| field.get(c)).sum();
        let h = self.base.h_sum()?;
        if !(h > 0.0) {
            return Err(OperatorError::NotInGamma(
                "harmonic measure from the origin vanishes".into(),
            ));
        }
        Ok((g / h).clamp(0.0, 1.0))
    }

    /// Fraction of `samples` conditioned walks (h-transform from the pole to the unit
    /// circle, then free to the outer circle) that avoid the extended sausage.
    pub fn z_inner<R: Rng + ?Sized>(
        &self,
        samples: usize,
        rng: &mut R,
    ) -> Result<f64, OperatorError> {
        if samples == 0 {
            return Err(OperatorError::InvalidArgument(
                "inner_samples must be positive".into(),
            ));
        }
        if !self.connects() {
            return Ok(0.0);
        }
        let field = self.base.h_field()?;
        let budget = self.base.grid.max_steps;
        let entrance = self.base.entrance();
        let weights: Vec<f64> = entrance.iter().map(|&c| field.get(c)).collect();
        let total: f64 = weights.iter().sum();
        let mut hits = 0usize;
        for _ in 0..samples {
            // First step from the origin: an entrance cell with probability proportional to h.
            let mut x = rng.random::<f64>() * total;
            let mut first = entrance[0];
            for (&c, &w) in entrance.iter().zip(&weights) {
                if w > 0.0 {
                    first = c;
                    if x < w {
                        break;
                    }
                }
                x -= w;
            }
            let mut clean = true;
            let mut last = None;
            h_walk_with(&field, Site::Cell(first), budget, rng, |s| {
                if let Site::Cell(c) = s {
                    clean &= !self.mask.is_occupied(c);
                    last = Some(c);
                }
            })?;
            if clean && self.continue_free(last.expect("walk visits a cell"), budget, rng)? {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples as f64)
    }

    /// Reference estimator: walks from the pole are kept only if they reach the unit
    /// circle before the configuration (rejection sampling of the conditioned walk).
    pub fn z_rejection<R: Rng + ?Sized>(
        &self,
        accepted: usize,
        rng: &mut R,
    ) -> Result<f64, OperatorError> {
        let base_lat = *self.base.lattice();
        let budget = self.base.grid.max_steps;
        let (mut hits, mut got) = (0usize, 0usize);
        let entrance = self.base.entrance();
        while got < accepted {
            // Leaving the origin: every entrance cell is equally likely.
            let first = entrance[rng.random_range(0..entrance.len())];
            let mut clean = true;
            let mut last = None;
            let stop = simple_walk_until(&base_lat, Site::Cell(first), budget, rng, |s| match s {
                Site::Cell(c) => {
                    last = Some(c);
                    clean &= !self.mask.is_occupied(c);
                    self.base.mask.is_occupied(c)
                }
                Site::Pole => true,
                Site::Boundary(_) => true,
            })?;
            if !matches!(stop, Site::Boundary(_)) {
                continue;
            }
            got += 1;
            if clean && self.continue_free(last.expect("walk visits a cell"), budget, rng)? {
                hits += 1;
            }
        }
        Ok(hits as f64 / accepted as f64)
    }

    /// Free walk on the extension lattice from the cell just outside the unit circle
    /// above `top_cell`; true if it reaches the outer circle avoiding the sausage.
    fn continue_free<R: Rng + ?Sized>(
        &self,
        top_cell: usize,
        budget: usize,
        rng: &mut R,
    ) -> Result<bool, OperatorError> {
        let lat = *self.mask.lattice();
        // Cell indices agree on the common rows; the next row up is one row further.
        let start = top_cell + lat.cols;
        debug_assert_eq!(lat.row_col(start).0, self.base.lattice().rows);
        let stop = simple_walk_until(&lat, Site::Cell(start), budget, rng, |s| match s {
            Site::Cell(c) => self.mask.is_occupied(c),
            Site::Pole | Site::Boundary(_) => true,
        })?;
        Ok(matches!(stop, Site::Boundary(_)))
    }

    /// The extension scaled back by `e^{-units}`; `None` when it disconnects.
    pub fn rescale(&self) -> Result<Option<Config>, OperatorError> {
        if !self.connects() {
            return Ok(None);
        }
        let grid = self.base.grid;
        let lat = grid.lattice();
        let shift = self.units * grid.rows_per_unit * lat.cols;
        let mut mask = Mask::empty(lat);
        let n = lat.cell_count();
        for c in self.mask.occupied_cells() {
            if c >= shift && c - shift < n {
                mask.set(c - shift);
            }
        }
        mask.set_pole(true);
        let domain = self.reach()[shift..shift + n].to_vec();
        let d = self.units as f64;
        let shifted = |p: &[W]| {
            compress(
                p.iter().map(|&(u, t)| (u - d, t)).collect(),
                grid.keep_depth,
            )
        };
        Ok(Some(Config::assemble(
            grid,
            shifted(&self.alpha),
            shifted(&self.beta),
            mask,
            domain,
        )?))
    }
}

/// Result of one step of the operator.
#[derive(Debug, Clone)]
pub struct Extension {
    /// `None` when the extension disconnects (`psi = +inf`).
    pub next: Option<Config>,
    pub z: f64,
}

impl Extension {
    /// `psi = -log Z`; `None` encodes `+inf`.
    pub fn psi(&self) -> Option<f64> {
        (self.z > 0.0).then(|| -self.z.ln())
    }

    pub fn is_degenerate(&self) -> bool {
        self.next.is_none()
    }
}

/// Lattice weight `Z^lambda` with `0^0 = 0`.
pub fn weight(z: f64, lambda: f64) -> f64 {
    if z > 0.0 {
        z.powf(lambda)
    } else {
        0.0
    }
}

/// One operator step: arms to radius `e`, `Z` (exact when `inner_samples == 0`,
/// otherwise the inner-walk estimate), and the rescaled configuration.
pub fn extend_config(
    config: &Config,
    inner_samples: usize,
    key: StreamKey,
) -> Result<Extension, OperatorError> {
    let ext = config.extend(1, key)?;
    let z = if inner_samples == 0 {
        ext.z_exact()?
    } else {
        ext.z_inner(inner_samples, &mut key.named("inner").rng())?
    };
    let next = if z > 0.0 { ext.rescale()? } else { None };
    // With inner sampling an unlucky estimate can be 0 on a connected extension.
    let next = if inner_samples > 0 && z == 0.0 {
        None
    } else {
        next
    };
    Ok(Extension { next, z })
}

/// Weight and successor for the population methods; `lambda = 0` needs only connectivity.
fn weighted_step(
    config: &Config,
    lambda: f64,
    inner: usize,
    key: StreamKey,
) -> Result<(f64, Option<Config>), OperatorError> {
    if lambda == 0.0 && inner == 0 {
        let ext = config.extend(1, key)?;
        let next = ext.rescale()?;
        let w = if next.is_some() { 1.0 } else { 0.0 };
        return Ok((w, next));
    }
    let e = extend_config(config, inner, key)?;
    Ok((weight(e.z, lambda), e.next))
}

/// Population of configurations for sequential Monte Carlo over the operator.
#[derive(Debug, Clone)]
pub struct WeightedEnsemble {
    pub particles: Vec<Arc<Config>>,
    pub weights: Vec<f64>,
    /// `log` of the mean weight at each completed step.
    pub step_log_means: Vec<f64>,
    /// Effective sample size at each completed step.
    pub ess: Vec<f64>,
}

impl WeightedEnsemble {
    pub fn new(seed: Config, particles: usize) -> Self {
        let c = Arc::new(seed);
        Self {
            particles: vec![c; particles],
            weights: vec![1.0; particles],
            step_log_means: Vec::new(),
            ess: Vec::new(),
        }
    }

    /// Extends every particle, weights by `Z^lambda`, and resamples systematically.
    /// Returns the ancestor index of each new particle.
    pub fn step(
        &mut self,
        lambda: f64,
        inner: usize,
        key: StreamKey,
    ) -> Result<Vec<usize>, OperatorError> {
        let t = self.step_log_means.len();
        let out: Vec<(f64, Option<Config>)> = self
            .particles
            .par_iter()
            .enumerate()
            .map(|(i, c)| weighted_step(c, lambda, inner, key.child(t as u64).child(i as u64)))
            .collect::<Result<_, _>>()?;
        let weights: Vec<f64> = out.iter().map(|o| o.0).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(OperatorError::Extinct(t));
        }
        let n = weights.len() as f64;
        let sq: f64 = weights.iter().map(|w| w * w).sum();
        self.step_log_means.push((total / n).ln());
        self.ess.push(total * total / sq);
        let u = key.child(t as u64).named("resample").rng().random::<f64>();
        let ancestors = systematic_resample(&weights, u);
        let children: Vec<Option<Arc<Config>>> =
            out.into_iter().map(|o| o.1.map(Arc::new)).collect();
        self.particles = ancestors
            .iter()
            .map(|&a| {
                children[a]
                    .clone()
                    .expect("positive weight has a successor")
            })
            .collect();
        self.weights = vec![1.0; self.particles.len()];
        Ok(ancestors)
    }
}

/// Ancestor indices for systematic resampling with offset `u in [0, 1)`.
pub fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut j = 0;
    for i in 0..n {
        let target = (i as f64 + u) / n as f64 * total;
        while j + 1 < n && cum + weights[j] <= target {
            cum += weights[j];
            j += 1;
        }
        // Skip zero-weight slots that the round-off could land on.
        while weights[j] == 0.0 && j + 1 < n {
            cum += weights[j];
            j += 1;
        }
        out.push(j);
    }
    out
}

/// Outcome of [`power_iterate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerIteration {
    pub lambda: f64,
    pub steps: usize,
    pub particles: usize,
    pub xi_hat: f64,
    /// Standard error of `xi_hat` from the spread of the per-step log means.
    pub stderr: f64,
    pub per_step_log_means: Vec<f64>,
    pub ess: Vec<f64>,
}

pub const POWER_TRACE_HEADER: &str = "step,mean_weight,ess,xi_running";

impl PowerIteration {
    /// Trace CSV; `xi_running` is minus the mean log weight over the second half of
    /// the steps completed so far.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from(POWER_TRACE_HEADER);
        s.push('\n');
        for (t, (&lm, &ess)) in self.per_step_log_means.iter().zip(&self.ess).enumerate() {
            let from = t.div_ceil(2);
            let tail = &self.per_step_log_means[from..=t];
            let run = -tail.iter().sum::<f64>() / tail.len() as f64;
            s.push_str(&format!(
                "{},{:.12e},{:.6},{:.12e}\n",
                t + 1,
                lm.exp(),
                ess,
                run
            ));
        }
        s
    }
}

/// Leading eigenvalue of the operator by population power iteration from `seed`:
/// `xi_hat = -` mean of `log mean weight` over the last `steps / 2` steps.
pub fn power_iterate(
    seed: &Config,
    lambda: f64,
    steps: usize,
    particles: usize,
    inner_samples: usize,
    key: StreamKey,
) -> Result<PowerIteration, OperatorError> {
    if steps < 5 || particles < 100 || !(lambda >= 0.0) {
        return Err(OperatorError::InvalidArgument(
            "need steps >= 5, particles >= 100, lambda >= 0".into(),
        ));
    }
    let key = key.named("power");
    let mut ens = WeightedEnsemble::new(seed.clone(), particles);
    for _ in 0..steps {
        ens.step(lambda, inner_samples, key)?;
    }
    let tail = &ens.step_log_means[steps - steps / 2..];
    let st = RunningStats::from_slice(tail);
    Ok(PowerIteration {
        lambda,
        steps,
        particles,
        xi_hat: -st.mean,
        stderr: st.std_error(),
        per_step_log_means: ens.step_log_means,
        ess: ens.ess,
    })
}

/// `R_n` estimates for `n = 1..=n_max` with standard errors over independent replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RnSeries {
    pub lambda: f64,
    pub xi: f64,
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
}

/// `e^{n xi(2, lambda)} E[e^{-lambda psi_n}]` from a population run of `samples`
/// particles (the product of per-step mean weights is unbiased for the expectation).
pub fn estimate_rn(
    config: &Config,
    n: usize,
    lambda: f64,
    samples: usize,
    key: StreamKey,
) -> Result<f64, OperatorError> {
    Ok(rn_run(config, n, lambda, samples, key)?[n - 1])
}

fn rn_run(
    config: &Config,
    n: usize,
    lambda: f64,
    samples: usize,
    key: StreamKey,
) -> Result<Vec<f64>, OperatorError> {
    if n < 1 || samples < 1 {
        return Err(OperatorError::InvalidArgument(
            "need n >= 1 and samples >= 1".into(),
        ));
    }
    let xi = crate::exponents::xi_formula(2.0, lambda)
        .map_err(|e| OperatorError::InvalidArgument(e.to_string()))?;
    let key = key.named("rn");
    let mut ens = WeightedEnsemble::new(config.clone(), samples);
    let mut out = Vec::with_capacity(n);
    let mut log_prod = 0.0;
    for t in 0..n {
        match ens.step(lambda, 0, key) {
            Ok(_) => {
                log_prod += ens.step_log_means[t];
                out.push(((t + 1) as f64 * xi + log_prod).exp());
            }
            Err(OperatorError::Extinct(_)) => {
                out.resize(n, 0.0);
                return Ok(out);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn estimate_rn_series(
    config: &Config,
    n_max: usize,
    lambda: f64,
    particles: usize,
    replicates: usize,
    key: StreamKey,
) -> Result<RnSeries, OperatorError> {
    if replicates < 2 {
        return Err(OperatorError::InvalidArgument(
            "need at least 2 replicates".into(),
        ));
    }
    let runs: Vec<Vec<f64>> = (0..replicates)
        .map(|r| rn_run(config, n_max, lambda, particles, key.child(r as u64)))
        .collect::<Result<_, _>>()?;
    let mut means = Vec::with_capacity(n_max);
    let mut std_errors = Vec::with_capacity(n_max);
    for t in 0..n_max {
        let col: Vec<f64> = runs.iter().map(|r| r[t]).collect();
        let st = RunningStats::from_slice(&col);
        means.push(st.mean);
        std_errors.push(st.std_error());
    }
    Ok(RnSeries {
        lambda,
        xi: crate::exponents::xi_formula(2.0, lambda)
            .map_err(|e| OperatorError::InvalidArgument(e.to_string()))?,
        means,
        std_errors,
    })
}

/// `E[Z^lambda 1{next in Gamma+}] / E[Z^lambda]` over one-step extensions of one configuration.
pub fn separation_ratio_one(
    config: &Config,
    lambda: f64,
    samples: usize,
    key: StreamKey,
) -> Result<f64, OperatorError> {
    let key = key.named("separation");
    let out: Vec<(f64, bool)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let e = extend_config(config, 0, key.child(i as u64))?;
            let w = weight(e.z, lambda);
            Ok((w, e.next.as_ref().is_some_and(is_in_gamma_plus)))
        })
        .collect::<Result<_, OperatorError>>()?;
    let den: f64 = out.iter().map(|o| o.0).sum();
    if !(den > 0.0) {
        return Err(OperatorError::ZeroDenominator);
    }
    let num: f64 = out.iter().filter(|o| o.1).map(|o| o.0).sum();
    Ok(num / den)
}

/// Minimum over `configs` of [`separation_ratio_one`].
pub fn separation_ratio(
    lambda: f64,
    samples: usize,
    configs: &[Config],
    key: StreamKey,
) -> Result<f64, OperatorError> {
    if configs.is_empty() {
        return Err(OperatorError::InvalidArgument("no configurations".into()));
    }
    let mut best = f64::INFINITY;
    for (i, c) in configs.iter().enumerate() {
        best = best.min(separation_ratio_one(
            c,
            lambda,
            samples,
            key.child(i as u64),
        )?);
    }
    Ok(best)
}

/// Points of the path after its first point at or beyond `log r = -m`, starting with
/// the interpolated crossing itself.
fn tail(path: &[W], m: f64) -> Option<Vec<W>> {
    let level = -m - 1e-12;
    let i0 = path.iter().position(|p| p.0 >= level)?;
    let mut out = Vec::with_capacity(path.len() - i0 + 1);
    if i0 > 0 {
        let (p, q) = (path[i0 - 1], path[i0]);
        let s = ((-m - p.0) / (q.0 - p.0)).clamp(0.0, 1.0);
        out.push((-m, p.1 + s * (q.1 - p.1)));
    }
    out.extend_from_slice(&path[i0..]);
    Some(out)
}

/// Whether the path, after first reaching `e^{-k}`, comes within `e^{-j}` of the origin.
fn log_downcrossing(path: &[W], suffix_min: &[f64], k: f64) -> Option<f64> {
    let i0 = path.iter().position(|p| p.0 >= -k - 1e-12)?;
    Some(suffix_min[i0])
}

fn free_of_downcrossings(path: &[W], m: u32) -> bool {
    let n = path.len();
    let mut suffix = vec![f64::INFINITY; n];
    let mut acc = f64::INFINITY;
    for i in (0..n).rev() {
        acc = acc.min(path[i].0);
        suffix[i] = acc;
    }
    y_class_levels::<f64>(m).all(|(k, j)| match log_downcrossing(path, &suffix, k) {
        None => true,
        Some(lowest) => lowest > -j,
    })
}

/// Regularity class `Y_m`: no downcrossing from `e^{-k}` to `e^{-k-m/12}` for `k`
/// on the 1/12 grid of `[0, 11m/12]`, for both paths.
pub fn in_y_m(config: &Config, m: u32) -> bool {
    m >= 1 && free_of_downcrossings(&config.alpha, m) && free_of_downcrossings(&config.beta, m)
}

/// Site chain crossed by a tail on a lattice reaching down to the history depth.
fn cell_chain(grid: &OperatorGrid, tail: &[W]) -> Vec<Site> {
    let lat = LogPolarLattice::new(-(grid.keep_depth.ceil() + 1.0), 0.0, grid.rows_per_unit)
        .expect("valid lattice");
    let mut chain: Vec<Site> = Vec::new();
    let mut push = |s: Site| {
        if chain.last() != Some(&s) {
            chain.push(s);
        }
    };
    if tail.len() == 1 {
        lat.trace_log(tail[0].0, tail[0].1, tail[0].0, tail[0].1, &mut push);
    }
    for w in tail.windows(2) {
        lat.trace_log(w[0].0, w[0].1, w[1].0, w[1].1, &mut push);
    }
    chain
}

/// Tails after the first point on `e^{-m}` as cell chains, `alpha` then `beta`.
pub fn tail_chains(config: &Config, m: u32) -> (Vec<Site>, Vec<Site>) {
    let mf = f64::from(m);
    let f = |p: &[W]| {
        tail(p, mf)
            .map(|t| cell_chain(&config.grid, &t))
            .unwrap_or_default()
    };
    (f(&config.alpha), f(&config.beta))
}

/// Equal tails after `e^{-m}` (as cell chains) and equal traces of the domain on the unit circle.
pub fn same_tails_and_trace(a: &Config, b: &Config, m: u32) -> bool {
    a.grid == b.grid
        && tail_chains(a, m) == tail_chains(b, m)
        && a.boundary_trace() == b.boundary_trace()
}

/// `X_m`: both in `Y_m`, equal tails after `e^{-m}`, equal traces on the unit circle.
pub fn in_x_m(a: &Config, b: &Config, m: u32) -> bool {
    m >= 1 && in_y_m(a, m) && in_y_m(b, m) && same_tails_and_trace(a, b, m)
}

/// Whether both endpoints of a log-plane segment lie in the same window
/// `(pi/2, 3pi/2) + 2 pi k` and `log r in [-1, 0]` (the last point may overshoot).
fn tail_in_left_half(t: &[W], overshoot: f64) -> bool {
    use std::f64::consts::{FRAC_PI_2, PI, TAU};
    let window = |theta: f64| {
        let k = ((theta - FRAC_PI_2) / TAU).floor();
        let rel = theta - FRAC_PI_2 - k * TAU;
        (rel > 0.0 && rel < PI).then_some(k as i64)
    };
    let n = t.len();
    let mut prev: Option<i64> = None;
    for (i, &(u, theta)) in t.iter().enumerate() {
        let top = if i + 1 == n { overshoot } else { 0.0 };
        if !(u >= -1.0 - 1e-12 && u <= top) {
            return false;
        }
        let Some(k) = window(theta) else {
            return false;
        };
        if prev.is_some_and(|p| p != k) {
            return false;
        }
        prev = Some(k);
    }
    true
}

/// `Gamma+`: tails after `e^{-1/2}` inside the closed left half-annulus, and every
/// cell meeting the right channel `{log r in (-1/2, 0), arg in (-pi/2, pi/2)}` in `O(gamma)`.
pub fn is_in_gamma_plus(config: &Config) -> bool {
    use std::f64::consts::FRAC_PI_2;
    let over = 4.0 * config.grid.log_step + 1e-12;
    for p in [&config.alpha, &config.beta] {
        match tail(p, 0.5) {
            Some(t) if tail_in_left_half(&t, over) => {}
            _ => return false,
        }
    }
    let lat = config.lattice();
    for r in 0..lat.rows {
        let lo = lat.u_min + r as f64 * lat.du();
        if !(lo < 0.0 && lo + lat.du() > -0.5) {
            continue;
        }
        for c in 0..lat.cols {
            let t0 = c as f64 * lat.dtheta();
            let t1 = t0 + lat.dtheta();
            let meets = t0 < FRAC_PI_2 || t1 > 3.0 * FRAC_PI_2;
            if meets && !config.in_domain(lat.index(r, c)) {
                return false;
            }
        }
    }
    true
}

/// Two walks coupled by reflection across the bisector of their starting points.
#[derive(Debug, Clone)]
pub struct MirrorCoupling {
    pub path_a: PlanarPath<f64>,
    pub path_b: PlanarPath<f64>,
    pub coalesced: bool,
    /// Sample index from which the paths coincide.
    pub coalesce_index: Option<usize>,
}

/// Log-plane arms from `a` and `b` (same `log r` up to round-off), with angle
/// increments mirrored until the angles meet modulo `2 pi`, identical afterwards.
/// Deep excursions use the exact return jump, mirrored as well; a meeting inside a
/// skipped excursion is not detected, which keeps both marginals exact.
#[allow(clippy::too_many_arguments)]
/// Both arms and the index at which they were glued, if they were.
type Arms = (Vec<W>, Vec<W>, Option<usize>);

fn mirror_arms<R: Rng + ?Sized>(
    a: W,
    b: W,
    target: f64,
    log_step: f64,
    floor: Option<(f64, f64)>,
    max_steps: usize,
    rng: &mut R,
) -> Result<Arms, OperatorError> {
    let mut pa = vec![a];
    let mut pb = vec![b];
    let tau = std::f64::consts::TAU;
    let mut met = if (a.1 - b.1).rem_euclid(tau) == 0.0 && a.0 == b.0 {
        Some(0)
    } else {
        None
    };
    let (mut ua, mut ta, mut ub, mut tb) = (a.0, a.1, b.0, b.1);
    let (mut done_a, mut done_b) = (ua >= target, ub >= target);
    for _ in 0..max_steps {
        if done_a && done_b {
            return Ok((pa, pb, met));
        }
        let du =
            log_step * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng);
        let dt =
            log_step * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng);
        let before = ((ta - tb) / tau).floor();
        ua += du;
        ub += du;
        ta += dt;
        tb -= if met.is_some() { -dt } else { dt };
        let mut jumped = false;
        if let Some((level, depth)) = floor {
            // Both walks share log r up to a constant, so they jump together.
            let lowest = ua.min(ub);
            if lowest < level - depth {
                if !done_a {
                    pa.push((ua, ta));
                }
                if !done_b {
                    pb.push((ub, tb));
                }
                let d = level - lowest;
                let c = (std::f64::consts::PI * (rng.random::<f64>() - 0.5)).tan();
                let lift = level - log_step * 1e-3 - lowest;
                ua += lift;
                ub += lift;
                ta += d * c;
                tb -= if met.is_some() { -d * c } else { d * c };
                jumped = true;
            }
        }
        if met.is_none() && !jumped && ((ta - tb) / tau).floor() != before {
            // Angles crossed: b joins a here.
            ub = ua;
            tb = ta;
            met = Some(pb.len());
        }
        if !done_a {
            pa.push((ua, ta));
            done_a = ua >= target;
        }
        if !done_b {
            pb.push((ub, tb));
            done_b = ub >= target;
        }
    }
    Err(PathError::StepBudgetExceeded(max_steps).into())
}

/// Mirror coupling of two Brownian paths started on the unit circle, run until
/// radius `stop_radius` (each marginal is a Brownian path).
pub fn mirror_couple(
    start_a: Point2<f64>,
    start_b: Point2<f64>,
    stop_radius: f64,
    log_step: f64,
    key: StreamKey,
) -> Result<MirrorCoupling, OperatorError> {
    if (start_a.norm() - 1.0).abs() > 1e-9 || (start_b.norm() - 1.0).abs() > 1e-9 {
        return Err(OperatorError::InvalidArgument(
            "starts must lie on the unit circle".into(),
        ));
    }
    if !(stop_radius > 1.0) || !(log_step > 0.0 && log_step <= 0.25) {
        return Err(OperatorError::InvalidArgument(
            "need stop_radius > 1 and log_step in (0, 0.25]".into(),
        ));
    }
    let mut rng = key.named("mirror").rng();
    let ta = start_a.arg();
    let tb = ta + wrap_angle(start_b.arg() - ta);
    let (pa, pb, met) = mirror_arms(
        (0.0, ta),
        (0.0, tb),
        stop_radius.ln(),
        log_step,
        Some((-2.0, 1.0)),
        usize::MAX >> 8,
        &mut rng,
    )?;
    let to_path = |w: &[W], start: Point2<f64>| {
        let mut pts: Vec<Point2<f64>> = w.iter().map(|&(u, t)| Point2::polar(u.exp(), t)).collect();
        pts[0] = start;
        PlanarPath::from_parts_unchecked(pts, StepLaw::Logarithmic(log_step))
    };
    Ok(MirrorCoupling {
        path_a: to_path(&pa, start_a),
        path_b: to_path(&pb, start_b),
        coalesced: met.is_some(),
        coalesce_index: met,
    })
}

/// Joint extension of a pair: arms of `alpha` and `alpha'` (and of `beta`, `beta'`)
/// mirror coupled; identical configurations get identical arms.
fn coupled_extension(
    a: &Config,
    b: &Config,
    key: StreamKey,
) -> Result<(ExtendedConfig, ExtendedConfig), OperatorError> {
    let g = a.grid;
    let floor = Some((g.floor(), g.return_depth));
    let mut arms = Vec::with_capacity(2);
    for (name, pa, pb) in [("alpha", &a.alpha, &b.alpha), ("beta", &a.beta, &b.beta)] {
        let mut rng = key.named(name).rng();
        let (sa, sb) = (pa[pa.len() - 1], pb[pb.len() - 1]);
        let sb = (sb.0, sa.1 + wrap_angle(sb.1 - sa.1));
        arms.push(mirror_arms(
            sa,
            sb,
            1.0,
            g.log_step,
            floor,
            g.max_steps,
            &mut rng,
        )?);
    }
    let (ba, bb, _) = arms.pop().expect("two arms");
    let (aa, ab, _) = arms.pop().expect("two arms");
    // Restore b's own angle branch.
    let fix = |arm: Vec<W>, p: &[W]| {
        let off = p[p.len() - 1].1 - arm[0].1;
        arm.into_iter()
            .map(|(u, t)| (u, t + off))
            .collect::<Vec<W>>()
    };
    let ab = fix(ab, &b.alpha);
    let bb = fix(bb, &b.beta);
    Ok((a.attach(1, aa, ba), b.attach(1, ab, bb)))
}

/// Maximal coupling of two categorical draws; returns the pair of indices.
fn coupled_categorical(p: &[f64], q: &[f64], rng: &mut StreamRng) -> (usize, usize) {
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    let overlap: Vec<f64> = p.iter().zip(q).map(|(x, y)| (x / sp).min(y / sq)).collect();
    let mass: f64 = overlap.iter().sum();
    let draw = |w: &[f64], total: f64, rng: &mut StreamRng| -> usize {
        let mut u = rng.random::<f64>() * total;
        let mut last = 0;
        for (i, &x) in w.iter().enumerate() {
            if x > 0.0 {
                if u < x {
                    return i;
                }
                last = i;
            }
            u -= x;
        }
        last
    };
    if rng.random::<f64>() < mass {
        let i = draw(&overlap, mass, rng);
        return (i, i);
    }
    let rp: Vec<f64> = p
        .iter()
        .zip(&overlap)
        .map(|(x, o)| (x / sp - o).max(0.0))
        .collect();
    let rq: Vec<f64> = q
        .iter()
        .zip(&overlap)
        .map(|(y, o)| (y / sq - o).max(0.0))
        .collect();
    let (tp, tq) = (rp.iter().sum::<f64>(), rq.iter().sum::<f64>());
    (draw(&rp, tp, rng), draw(&rq, tq, rng))
}

/// Result of [`weighted_coupling_experiment`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingReport {
    pub n: usize,
    pub m: u32,
    pub lambda: f64,
    pub particles: usize,
    /// Fraction of coupled pairs in `X_m`, `m = ceil(n/3)`.
    pub match_fraction_xm: f64,
    pub summary_discrepancies: CouplingDiscrepancies,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingDiscrepancies {
    /// Mean `psi` of the last step's non-degenerate extensions, first minus second ensemble.
    pub mean_psi_difference: f64,
    /// Mean Jaccard overlap of the two unit-circle traces over pairs.
    pub boundary_trace_overlap: f64,
    /// Pairs with equal tails and traces, regardless of `Y_m`.
    pub tail_and_trace_match_fraction: f64,
    /// Fraction of configurations of either ensemble in `Y_m`.
    pub y_m_fraction: f64,
    /// `X_m` fraction when the final pairing is by rank of mean trace angle instead
    /// of by coupling index.
    pub rank_paired_match_fraction: f64,
}

/// Evolves populations from `a` and `b` for `n` steps with shared randomness: arms
/// of paired particles are mirror coupled, and ancestors are drawn from a maximal
/// coupling of the two resampling laws. Each population on its own is a valid
/// weighted run; the report measures how often pairs land in `X_{ceil(n/3)}`.
pub fn weighted_coupling_experiment(
    a: &Config,
    b: &Config,
    n: usize,
    lambda: f64,
    particles: usize,
    key: StreamKey,
) -> Result<CouplingReport, OperatorError> {
    if n < 3 || particles < 1 || a.grid != b.grid {
        return Err(OperatorError::InvalidArgument(
            "need n >= 3, particles >= 1 and a common grid".into(),
        ));
    }
    let key = key.named("coupling");
    let (sa, sb) = (Arc::new(a.clone()), Arc::new(b.clone()));
    let mut pa: Vec<Arc<Config>> = vec![sa; particles];
    let mut pb: Vec<Arc<Config>> = vec![sb; particles];
    let mut psi_diff = 0.0;
    for t in 0..n {
        let kt = key.child(t as u64);
        type Step = ((f64, Option<Config>), (f64, Option<Config>));
        let out: Vec<Step> = (0..particles)
            .into_par_iter()
            .map(|i| {
                let (ea, eb) = coupled_extension(&pa[i], &pb[i], kt.child(i as u64))?;
                let side = |e: ExtendedConfig| -> Result<(f64, Option<Config>), OperatorError> {
                    let z = e.z_exact()?;
                    let next = if z > 0.0 { e.rescale()? } else { None };
                    Ok((z, next))
                };
                Ok((side(ea)?, side(eb)?))
            })
            .collect::<Result<_, OperatorError>>()?;
        let wa: Vec<f64> = out.iter().map(|o| weight(o.0 .0, lambda)).collect();
        let wb: Vec<f64> = out.iter().map(|o| weight(o.1 .0, lambda)).collect();
        if !(wa.iter().sum::<f64>() > 0.0 && wb.iter().sum::<f64>() > 0.0) {
            return Err(OperatorError::Extinct(t));
        }
        if t + 1 == n {
            let mean_psi = |zs: Vec<f64>| {
                let v: Vec<f64> = zs
                    .into_iter()
                    .filter(|&z| z > 0.0)
                    .map(|z| -z.ln())
                    .collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            };
            psi_diff = mean_psi(out.iter().map(|o| o.0 .0).collect())
                - mean_psi(out.iter().map(|o| o.1 .0).collect());
        }
        let mut rng = kt.named("resample").rng();
        type Slots = Vec<Option<Arc<Config>>>;
        let (ca, cb): (Slots, Slots) = out
            .into_iter()
            .map(|o| (o.0 .1.map(Arc::new), o.1 .1.map(Arc::new)))
            .unzip();
        let mut na = Vec::with_capacity(particles);
        let mut nb = Vec::with_capacity(particles);
        for _ in 0..particles {
            let (i, j) = coupled_categorical(&wa, &wb, &mut rng);
            na.push(ca[i].clone().expect("positive weight"));
            nb.push(cb[j].clone().expect("positive weight"));
        }
        pa = na;
        pb = nb;
    }
    let m = n.div_ceil(3) as u32;
    let frac = |f: &dyn Fn(usize) -> bool| {
        (0..particles).filter(|&i| f(i)).count() as f64 / particles as f64
    };
    let xm = frac(&|i| in_x_m(&pa[i], &pb[i], m));
    let tails = frac(&|i| same_tails_and_trace(&pa[i], &pb[i], m));
    let overlap = (0..particles)
        .map(|i| {
            let (ta, tb) = (pa[i].boundary_trace(), pb[i].boundary_trace());
            let inter = ta.iter().filter(|c| tb.contains(c)).count() as f64;
            let union = (ta.len() + tb.len()) as f64 - inter;
            if union > 0.0 {
                inter / union
            } else {
                1.0
            }
        })
        .sum::<f64>()
        / particles as f64;
    let ym = (0..particles)
        .map(|i| u8::from(in_y_m(&pa[i], m)) + u8::from(in_y_m(&pb[i], m)))
        .map(f64::from)
        .sum::<f64>()
        / (2 * particles) as f64;
    let rank = |p: &[Arc<Config>]| {
        let mut idx: Vec<usize> = (0..p.len()).collect();
        let keys: Vec<f64> = p.iter().map(|c| c.mean_trace_angle()).collect();
        idx.sort_by(|&x, &y| keys[x].total_cmp(&keys[y]).then(x.cmp(&y)));
        idx
    };
    let (ra, rb) = (rank(&pa), rank(&pb));
    let ranked = ra
        .iter()
        .zip(&rb)
        .filter(|(&i, &j)| in_x_m(&pa[i], &pb[j], m))
        .count() as f64
        / particles as f64;
    Ok(CouplingReport {
        n,
        m,
        lambda,
        particles,
        match_fraction_xm: xm,
        summary_discrepancies: CouplingDiscrepancies {
            mean_psi_difference: psi_diff,
            boundary_trace_overlap: overlap,
            tail_and_trace_match_fraction: tails,
            y_m_fraction: ym,
            rank_paired_match_fraction: ranked,
        },
    })
}

/// Independent draws from the weighted law of the configuration after `k` of `n`
/// steps: each draw runs its own population of `particles` from `config` for `n`
/// steps and returns the step-`k` ancestor of a uniformly chosen survivor.
pub fn ancestral_samples(
    config: &Config,
    n: usize,
    k: usize,
    lambda: f64,
    draws: usize,
    particles: usize,
    key: StreamKey,
) -> Result<Vec<Config>, OperatorError> {
    if k > n || particles < 1 {
        return Err(OperatorError::InvalidArgument(
            "need k <= n and particles >= 1".into(),
        ));
    }
    let key = key.named("ancestral");
    (0..draws)
        .map(|d| {
            let kd = key.child(d as u64);
            let mut ens = WeightedEnsemble::new(config.clone(), particles);
            // history[t][i]: particle i after t steps.
            let mut history: Vec<Vec<Arc<Config>>> = vec![ens.particles.clone()];
            let mut parents: Vec<Vec<usize>> = Vec::with_capacity(n);
            for _ in 0..n {
                parents.push(ens.step(lambda, 0, kd)?);
                history.push(ens.particles.clone());
            }
            let mut i = kd.named("pick").rng().random_range(0..particles);
            for t in (k..n).rev() {
                i = parents[t][i];
            }
            Ok((*history[k][i]).clone())
        })
        .collect()
}
