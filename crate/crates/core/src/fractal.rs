//! Frontier and pioneer cells of sampled paths, and box-counting dimensions.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{flood_outside, GridError, Lattice, LatticeMask, Region, Site, SquareLattice};
use crate::paths::{PathError, PlanarPath, Point2};
use crate::rng::StreamKey;
use crate::scalar::Real;
use crate::stats::ols;

#[derive(Debug, Error)]
pub enum FractalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("need at least {needed} usable box sizes, got {got}")]
    TooFewScales { needed: usize, got: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Path(#[from] PathError),
}

type Square = SquareLattice<f64>;
type SquareMask = LatticeMask<Square>;

/// Cells of a square lattice, by integer coordinates `(i, j)` with `|i|, |j| <= extent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSet {
    pub cell_size: f64,
    pub extent: usize,
    /// Sorted by `(i, j)`, no duplicates.
    cells: Vec<(i64, i64)>,
}

impl CellSet {
    pub fn new(
        lattice: &Square,
        cells: impl IntoIterator<Item = (i64, i64)>,
    ) -> Result<Self, FractalError> {
        let set: BTreeSet<(i64, i64)> = cells.into_iter().collect();
        let n = lattice.extent as i64;
        if set.iter().any(|&(i, j)| i.abs() > n || j.abs() > n) {
            return Err(FractalError::InvalidArgument(
                "cell outside the lattice extent".into(),
            ));
        }
        Ok(Self {
            cell_size: lattice.cell_size,
            extent: lattice.extent,
            cells: set.into_iter().collect(),
        })
    }

    fn from_indices(lattice: &Square, idx: impl IntoIterator<Item = usize>) -> Self {
        let mut cells: Vec<(i64, i64)> = idx.into_iter().map(|c| lattice.coords(c)).collect();
        cells.sort_unstable();
        cells.dedup();
        Self {
            cell_size: lattice.cell_size,
            extent: lattice.extent,
            cells,
        }
    }

    pub fn cells(&self) -> &[(i64, i64)] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: (i64, i64)) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    pub fn is_subset(&self, other: &CellSet) -> bool {
        self.cells.iter().all(|&c| other.contains(c))
    }

    /// Header line `cell_size,extent` then one `i,j` line per member.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# cell_size={},extent={}\ni,j\n",
            self.cell_size, self.extent
        );
        for (i, j) in &self.cells {
            let _ = writeln!(s, "{i},{j}");
        }
        s
    }
}

/// Occupied cells 4-adjacent to the outside region (or to the lattice edge).
pub fn frontier_cells(mask: &SquareMask) -> CellSet {
    let labels = flood_outside(mask);
    let lat = mask.lattice();
    CellSet::from_indices(
        lat,
        mask.occupied_cells().filter(|&c| {
            lat.neighbors(c)
                .iter()
                .any(|&(s, _)| labels.site(s) == Region::Outside)
        }),
    )
}

/// Step indices closing each checkpoint window: `floor(c (len - 1) / checkpoints)`
/// for `c = 1..=checkpoints`. Windows of `k` checkpoints refine those of `j` when `j | k`.
pub fn checkpoint_indices(len: usize, checkpoints: usize) -> Vec<usize> {
    let last = len.saturating_sub(1);
    (1..=checkpoints).map(|c| c * last / checkpoints).collect()
}

struct Dsu {
    parent: Vec<u32>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb) as usize] = ra.min(rb);
        }
    }
}

/// Cells first visited during a checkpoint window that lie on the frontier of the
/// path up to the window's end. The outside region only shrinks in time, so every
/// member is a pioneer cell, and finer windows find more; one window per step gives
/// the pioneer cells at lattice resolution.
///
/// Runs backwards in time: unvisiting a window's cells merges free components, so a
/// union-find with a node for the outer boundary answers every window in one pass.
pub fn pioneer_cells(
    path: &PlanarPath<f64>,
    checkpoints: usize,
    lattice: Square,
) -> Result<CellSet, FractalError> {
    if checkpoints < 2 {
        return Err(FractalError::InvalidArgument(
            "need at least 2 checkpoints".into(),
        ));
    }
    let pts = path.points();
    let n = lattice.cell_count();
    let ends = checkpoint_indices(pts.len(), checkpoints);

    const NEVER: u32 = u32::MAX;
    let mut first = vec![NEVER; n];
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); ends.len()];
    let visit = |w: usize, first: &mut [u32], groups: &mut [Vec<usize>], a, b| {
        lattice.trace_segment(a, b, &mut |s| {
            if let Site::Cell(c) = s {
                if first[c] == NEVER {
                    first[c] = w as u32;
                    groups[w].push(c);
                }
            }
        })
    };
    visit(0, &mut first, &mut groups, pts[0], pts[0])?;
    let mut step = 0usize;
    for (w, &end) in ends.iter().enumerate() {
        while step < end {
            visit(w, &mut first, &mut groups, pts[step], pts[step + 1])?;
            step += 1;
        }
    }

    let outer = n as u32;
    let mut dsu = Dsu::new(n + 1);
    let mut free: Vec<bool> = first.iter().map(|&f| f == NEVER).collect();
    let release = |c: usize, dsu: &mut Dsu, free: &[bool]| {
        for (s, _) in lattice.neighbors(c) {
            match s {
                Site::Cell(d) if free[d] => dsu.union(c as u32, d as u32),
                Site::Boundary(_) => dsu.union(c as u32, outer),
                _ => {}
            }
        }
    };
    for c in 0..n {
        if free[c] {
            release(c, &mut dsu, &free);
        }
    }
    let mut out = Vec::new();
    for group in groups.iter().rev() {
        let root = dsu.find(outer);
        for &c in group {
            let exposed = lattice.neighbors(c).iter().any(|&(s, _)| match s {
                Site::Boundary(_) => true,
                Site::Cell(d) => free[d] && dsu.find(d as u32) == root,
                Site::Pole => false,
            });
            if exposed {
                out.push(c);
            }
        }
        for &c in group {
            free[c] = true;
        }
        for &c in group {
            release(c, &mut dsu, &free);
        }
    }
    Ok(CellSet::from_indices(&lattice, out))
}

/// Numbers of aligned boxes of each size meeting a cell set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCountTable {
    pub box_sizes: Vec<usize>,
    pub counts: Vec<usize>,
}

pub const BOX_COUNT_CSV_HEADER: &str = "box_size,count";

impl BoxCountTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{BOX_COUNT_CSV_HEADER}\n");
        for (b, c) in self.box_sizes.iter().zip(&self.counts) {
            let _ = writeln!(s, "{b},{c}");
        }
        s
    }
}

/// Dyadic box sizes `1, 2, 4, ...` up to the lattice extent.
pub fn dyadic_sizes(extent: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |&s| Some(2 * s))
        .take_while(|&s| s <= extent)
        .collect()
}

/// Boxes are aligned to the lattice corner `(-extent, -extent)`.
pub fn box_count(cells: &CellSet, sizes: &[usize]) -> Result<BoxCountTable, FractalError> {
    if sizes
        .iter()
        .any(|&s| !s.is_power_of_two() || s > cells.extent)
    {
        return Err(FractalError::InvalidArgument(format!(
            "box sizes must be powers of 2 up to {}",
            cells.extent
        )));
    }
    let n = cells.extent as i64;
    let counts = sizes
        .iter()
        .map(|&s| {
            let shift = s.trailing_zeros();
            let mut boxes: Vec<(i64, i64)> = cells
                .cells
                .iter()
                .map(|&(i, j)| ((i + n) >> shift, (j + n) >> shift))
                .collect();
            boxes.sort_unstable();
            boxes.dedup();
            boxes.len()
        })
        .collect();
    Ok(BoxCountTable {
        box_sizes: sizes.to_vec(),
        counts,
    })
}

/// Box-counting dimension: `-slope` of `log count` against `log box_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionFit {
    pub dimension: f64,
    /// Regression standard error of the slope.
    pub stderr: f64,
    /// Smallest and largest box size used.
    pub window: (usize, usize),
    pub slope: f64,
    pub intercept: f64,
}

impl DimensionFit {
    /// `{dimension, stderr, window}`.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "dimension": self.dimension,
            "stderr": self.stderr,
            "window": [self.window.0, self.window.1],
        })
    }
}

/// Fits after dropping `discard_extremes` sizes at each end; needs 4 usable sizes.
pub fn fit_dimension(
    table: &BoxCountTable,
    discard_extremes: usize,
) -> Result<DimensionFit, FractalError> {
    let n = table.box_sizes.len();
    let got = n.saturating_sub(2 * discard_extremes);
    fit_dimension_window(table, discard_extremes, got)
}

/// Fits over `len` consecutive sizes starting at index `start`.
pub fn fit_dimension_window(
    table: &BoxCountTable,
    start: usize,
    len: usize,
) -> Result<DimensionFit, FractalError> {
    if len < 4 {
        return Err(FractalError::TooFewScales {
            needed: 4,
            got: len,
        });
    }
    let range = start..start + len;
    if range.end > table.box_sizes.len() || table.counts.len() != table.box_sizes.len() {
        return Err(FractalError::InvalidArgument(
            "fit window exceeds the table".into(),
        ));
    }
    if table.counts[range.clone()].contains(&0) {
        return Err(FractalError::InvalidArgument(
            "empty box count inside the fit window".into(),
        ));
    }
    let x: Vec<f64> = table.box_sizes[range.clone()]
        .iter()
        .map(|&s| (s as f64).ln())
        .collect();
    let y: Vec<f64> = table.counts[range.clone()]
        .iter()
        .map(|&c| (c as f64).ln())
        .collect();
    let line = ols(&x, &y).ok_or_else(|| FractalError::InvalidArgument("degenerate fit".into()))?;
    Ok(DimensionFit {
        dimension: -line.slope,
        stderr: line.slope_stderr,
        window: (table.box_sizes[range.start], table.box_sizes[range.end - 1]),
        slope: line.slope,
        intercept: line.intercept,
    })
}

/// Walk and grid of a dimension experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractalParams {
    pub steps: usize,
    /// Longer side of the walk's bounding box, in cells.
    pub span: f64,
    /// Lattice half-width in cells (side `2 extent + 1`).
    pub extent: usize,
    pub checkpoints: usize,
    pub discard_extremes: usize,
}

impl Default for FractalParams {
    fn default() -> Self {
        // Diameter about a third of the 2049-cell side.
        Self {
            steps: 1_000_000,
            span: 683.0,
            extent: 1024,
            checkpoints: 128,
            discard_extremes: 2,
        }
    }
}

impl FractalParams {
    fn validate(&self) -> Result<(), FractalError> {
        if self.steps < 2
            || self.extent < 8
            || !(self.span > 0.0 && self.span <= 2.0 * self.extent as f64)
        {
            return Err(FractalError::InvalidArgument(
                "need steps >= 2, extent >= 8 and span in (0, 2 extent]".into(),
            ));
        }
        Ok(())
    }

    pub fn lattice(&self) -> Square {
        SquareLattice::new(1.0, self.extent).expect("validated extent")
    }
}

/// Gaussian walk of `steps` steps, scaled so the longer side of its bounding box
/// is `span` and translated so that box is centred on the origin. Scaling a
/// Gaussian walk is again a Gaussian walk, with step deviation `span / range`.
pub fn centred_walk(
    steps: usize,
    span: f64,
    key: StreamKey,
) -> Result<PlanarPath<f64>, FractalError> {
    if steps < 1 || !(span > 0.0) {
        return Err(FractalError::InvalidArgument(
            "need steps >= 1 and span > 0".into(),
        ));
    }
    let mut rng = key.named("walk").rng();
    let mut pts = Vec::with_capacity(steps + 1);
    let mut p = Point2::new(0.0, 0.0);
    pts.push(p);
    for _ in 0..steps {
        p = Point2::new(
            p.x + f64::standard_normal(&mut rng),
            p.y + f64::standard_normal(&mut rng),
        );
        pts.push(p);
    }
    let (mut lo, mut hi) = (p, p);
    for q in &pts {
        lo = Point2::new(lo.x.min(q.x), lo.y.min(q.y));
        hi = Point2::new(hi.x.max(q.x), hi.y.max(q.y));
    }
    let scale = span / (hi.x - lo.x).max(hi.y - lo.y);
    let c = (lo + hi) * 0.5;
    Ok(PlanarPath::new(
        pts.into_iter().map(|q| (q - c) * scale).collect(),
        scale,
    )?)
}

/// Which set to measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FractalSet {
    Frontier,
    Pioneer,
}

/// One walk, its cell set, box counts and fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionRun {
    pub set: FractalSet,
    pub cells: CellSet,
    pub table: BoxCountTable,
    pub fit: DimensionFit,
    /// Checkpoints per occupied cell of the whole path (pioneer runs).
    pub checkpoint_density: Option<f64>,
}

pub fn dimension_run(
    set: FractalSet,
    params: &FractalParams,
    key: StreamKey,
) -> Result<DimensionRun, FractalError> {
    params.validate()?;
    let lat = params.lattice();
    let path = centred_walk(params.steps, params.span, key)?;
    let mut mask = SquareMask::empty(lat);
    mask.add_path(&path)?;
    let (cells, density) = match set {
        FractalSet::Frontier => (frontier_cells(&mask), None),
        FractalSet::Pioneer => (
            pioneer_cells(&path, params.checkpoints, lat)?,
            Some(params.checkpoints as f64 / mask.count() as f64),
        ),
    };
    let table = box_count(&cells, &dyadic_sizes(params.extent))?;
    let fit = fit_dimension(&table, params.discard_extremes)?;
    Ok(DimensionRun {
        set,
        cells,
        table,
        fit,
        checkpoint_density: density,
    })
}

/// Independent walks in parallel; returns each run (the caller averages).
pub fn dimension_runs(
    set: FractalSet,
    params: &FractalParams,
    walks: usize,
    key: StreamKey,
) -> Result<Vec<DimensionRun>, FractalError> {
    (0..walks)
        .into_par_iter()
        .map(|w| dimension_run(set, params, key.child(w as u64)))
        .collect()
}

/// Uniform random cell set of a given size, for tests and benchmarks.
pub fn random_cells<R: Rng + ?Sized>(lattice: &Square, count: usize, rng: &mut R) -> CellSet {
    let n = lattice.extent as i64;
    CellSet::new(
        lattice,
        (0..count).map(|_| (rng.random_range(-n..=n), rng.random_range(-n..=n))),
    )
    .expect("inside extent")
}
