//! Lattice geometries with a shared 4-neighbour structure.
//!
//! Three geometries implement [`Lattice`]:
//! * [`SquareLattice`]: cells of side `cell_size` centred on `(i h, j h)`, `|i|, |j| <= N`.
//! * [`LogPolarLattice`]: cells uniform in `w = log z`, so harmonic functions and
//!   random walks are those of the plane, and rescaling by `e^{-1}` is a shift by
//!   `rows_per_unit` rows. Everything below the floor `u_min` collapses into one
//!   pole node.
//! * [`StripLattice`]: nodes of the half-strip `(0, pi) x (0, height)`.

use crate::paths::Point2;
use crate::scalar::{wrap_angle, Real};
#[allow(unused_imports)]
use num_traits::{Float, FloatConst, One, ToPrimitive, Zero};

use super::GridError;

/// A lattice site: an interior cell, the pole node, or a labelled boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Site {
    Cell(usize),
    Pole,
    Boundary(u8),
}

pub trait Lattice: Clone + Send + Sync {
    type Scalar: Real;

    fn cell_count(&self) -> usize;

    /// The four neighbours of a cell with their (symmetric) conductances.
    fn neighbors(&self, cell: usize) -> [(Site, Self::Scalar); 4];

    fn has_pole(&self) -> bool {
        false
    }

    /// Cells adjacent to the pole with their conductances.
    fn pole_neighbors(&self) -> Vec<(usize, Self::Scalar)> {
        Vec::new()
    }

    /// Number of distinct boundary labels.
    fn boundary_labels(&self) -> usize;

    /// Red/black colour for ordered relaxation; neighbours always differ.
    fn color(&self, cell: usize) -> bool;

    fn center(&self, cell: usize) -> Point2<Self::Scalar>;

    fn site_of(&self, p: Point2<Self::Scalar>) -> Site;

    /// Visits every site crossed by the segment `[a, b]` as a 4-connected chain.
    fn trace_segment(
        &self,
        a: Point2<Self::Scalar>,
        b: Point2<Self::Scalar>,
        visit: &mut dyn FnMut(Site),
    ) -> Result<(), GridError>;

    /// Cells meeting the circle of the given radius about the origin.
    fn circle_cells(&self, radius: Self::Scalar) -> Vec<usize>;

    /// `(rows, cols)` of the row-major layout.
    fn dims(&self) -> (usize, usize);
}

/// Traversal of unit cells crossed by a segment in continuous cell coordinates
/// (cell `(i, j)` covers `[i, i+1) x [j, j+1)`), stepping one axis at a time.
pub(crate) fn traverse_cells<T: Real>(x0: T, y0: T, x1: T, y1: T, mut visit: impl FnMut(i64, i64)) {
    let mut ix = x0.floor().to_i64().unwrap_or(i64::MIN / 4);
    let mut iy = y0.floor().to_i64().unwrap_or(i64::MIN / 4);
    let ex = x1.floor().to_i64().unwrap_or(i64::MIN / 4);
    let ey = y1.floor().to_i64().unwrap_or(i64::MIN / 4);
    visit(ix, iy);
    let dx = x1 - x0;
    let dy = y1 - y0;
    let step_x: i64 = if dx > T::zero() { 1 } else { -1 };
    let step_y: i64 = if dy > T::zero() { 1 } else { -1 };
    let inf = T::infinity();
    let t_delta_x = if dx != T::zero() {
        (T::one() / dx).abs()
    } else {
        inf
    };
    let t_delta_y = if dy != T::zero() {
        (T::one() / dy).abs()
    } else {
        inf
    };
    let frac = |v: T| v - v.floor();
    let mut t_max_x = if dx > T::zero() {
        (T::one() - frac(x0)) * t_delta_x
    } else if dx < T::zero() {
        frac(x0) * t_delta_x
    } else {
        inf
    };
    let mut t_max_y = if dy > T::zero() {
        (T::one() - frac(y0)) * t_delta_y
    } else if dy < T::zero() {
        frac(y0) * t_delta_y
    } else {
        inf
    };
    let budget = (ex - ix).abs() + (ey - iy).abs();
    for _ in 0..budget {
        if t_max_x < t_max_y {
            ix += step_x;
            t_max_x += t_delta_x;
        } else {
            iy += step_y;
            t_max_y += t_delta_y;
        }
        visit(ix, iy);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareLattice<T> {
    pub cell_size: T,
    /// Half-width `N`: cell indices run over `-N..=N` on each axis.
    pub extent: usize,
}

impl<T: Real> SquareLattice<T> {
    pub fn new(cell_size: T, extent: usize) -> Result<Self, GridError> {
        if !(cell_size > T::zero()) || extent == 0 {
            return Err(GridError::InvalidArgument(
                "square lattice needs cell_size > 0 and extent >= 1".into(),
            ));
        }
        Ok(Self { cell_size, extent })
    }

    #[inline]
    pub fn side(&self) -> usize {
        2 * self.extent + 1
    }

    /// Index of cell `(i, j)` with `|i|, |j| <= N`.
    #[inline]
    pub fn index(&self, i: i64, j: i64) -> Option<usize> {
        let n = self.extent as i64;
        if i.abs() > n || j.abs() > n {
            return None;
        }
        Some(((j + n) as usize) * self.side() + (i + n) as usize)
    }

    #[inline]
    pub fn coords(&self, cell: usize) -> (i64, i64) {
        let s = self.side();
        let n = self.extent as i64;
        ((cell % s) as i64 - n, (cell / s) as i64 - n)
    }

    /// Radius of the largest disk fully covered by the grid.
    pub fn covered_radius(&self) -> T {
        (T::from_usize_lossy(self.extent) + T::lit(0.5)) * self.cell_size
    }
}

impl<T: Real> Lattice for SquareLattice<T> {
    type Scalar = T;

    fn cell_count(&self) -> usize {
        self.side() * self.side()
    }

    #[inline]
    fn neighbors(&self, cell: usize) -> [(Site, T); 4] {
        let s = self.side();
        let (c, r) = (cell % s, cell / s);
        let one = T::one();
        let site = |ok: bool, idx: usize| {
            if ok {
                Site::Cell(idx)
            } else {
                Site::Boundary(0)
            }
        };
        [
            (site(c + 1 < s, cell + 1), one),
            (site(c > 0, cell.wrapping_sub(1)), one),
            (site(r + 1 < s, cell + s), one),
            (site(r > 0, cell.wrapping_sub(s)), one),
        ]
    }

    fn boundary_labels(&self) -> usize {
        1
    }

    fn color(&self, cell: usize) -> bool {
        let s = self.side();
        ((cell % s) + (cell / s)).is_multiple_of(2)
    }

    fn center(&self, cell: usize) -> Point2<T> {
        let (i, j) = self.coords(cell);
        Point2::new(
            T::from_i64(i).expect("fits") * self.cell_size,
            T::from_i64(j).expect("fits") * self.cell_size,
        )
    }

    fn site_of(&self, p: Point2<T>) -> Site {
        let i = (p.x / self.cell_size).round().to_i64();
        let j = (p.y / self.cell_size).round().to_i64();
        match (i, j) {
            (Some(i), Some(j)) => self.index(i, j).map_or(Site::Boundary(0), Site::Cell),
            _ => Site::Boundary(0),
        }
    }

    fn trace_segment(
        &self,
        a: Point2<T>,
        b: Point2<T>,
        visit: &mut dyn FnMut(Site),
    ) -> Result<(), GridError> {
        let h = self.cell_size;
        let half = T::lit(0.5);
        let mut outside = false;
        traverse_cells(
            a.x / h + half,
            a.y / h + half,
            b.x / h + half,
            b.y / h + half,
            |i, j| match self.index(i, j) {
                Some(c) => visit(Site::Cell(c)),
                None => outside = true,
            },
        );
        if outside {
            Err(GridError::OutsideGrid)
        } else {
            Ok(())
        }
    }

    fn circle_cells(&self, radius: T) -> Vec<usize> {
        let h = self.cell_size;
        let half = h * T::lit(0.5);
        let n = self.extent as i64;
        let reach = ((radius / h).ceil().to_i64().unwrap_or(n) + 1).min(n);
        let mut out = Vec::new();
        for j in -reach..=reach {
            for i in -reach..=reach {
                let cx = T::from_i64(i).expect("fits") * h;
                let cy = T::from_i64(j).expect("fits") * h;
                // Nearest and farthest points of the closed cell square from the origin.
                let nx = (cx.abs() - half).max(T::zero());
                let ny = (cy.abs() - half).max(T::zero());
                let fx = cx.abs() + half;
                let fy = cy.abs() + half;
                let near = nx.hypot(ny);
                let far = fx.hypot(fy);
                if near <= radius && radius <= far {
                    if let Some(c) = self.index(i, j) {
                        out.push(c);
                    }
                }
            }
        }
        out
    }

    fn dims(&self) -> (usize, usize) {
        (self.side(), self.side())
    }
}

/// Lattice uniform in `(u, theta) = (log r, arg z)` over `u in [u_min, u_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPolarLattice<T> {
    pub u_min: T,
    pub rows: usize,
    pub cols: usize,
    pub rows_per_unit: usize,
    du: T,
    dtheta: T,
    theta_weight: T,
}

impl<T: Real> LogPolarLattice<T> {
    /// Rows of height `1 / rows_per_unit` from `u_min` to `u_max`; the column count is
    /// the even integer nearest `2 pi rows_per_unit`, so cells are close to square.
    pub fn new(u_min: T, u_max: T, rows_per_unit: usize) -> Result<Self, GridError> {
        if rows_per_unit < 2 || !(u_max > u_min) {
            return Err(GridError::InvalidArgument(
                "log-polar lattice needs u_max > u_min and at least 2 rows per unit".into(),
            ));
        }
        let k = T::from_usize_lossy(rows_per_unit);
        let rows = ((u_max - u_min) * k).round().to_usize().unwrap_or(0).max(1);
        let cols = 2 * (T::PI() * k).round().to_usize().unwrap_or(3).max(3);
        let du = T::one() / k;
        let dtheta = T::TAU() / T::from_usize_lossy(cols);
        Ok(Self {
            u_min,
            rows,
            cols,
            rows_per_unit,
            du,
            dtheta,
            theta_weight: (du / dtheta) * (du / dtheta),
        })
    }

    #[inline]
    pub fn du(&self) -> T {
        self.du
    }

    #[inline]
    pub fn dtheta(&self) -> T {
        self.dtheta
    }

    pub fn u_max(&self) -> T {
        self.u_min + T::from_usize_lossy(self.rows) * self.du
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    #[inline]
    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        (cell / self.cols, cell % self.cols)
    }

    /// Row containing `u` (clamped to the lattice; `None` below the floor or at/above the top).
    pub fn row_of(&self, u: T) -> Option<usize> {
        let r = ((u - self.u_min) / self.du).floor();
        if r < T::zero() {
            return None;
        }
        let r = r.to_usize()?;
        (r < self.rows).then_some(r)
    }

    /// Row whose lower edge is the circle `e^u` (exact multiples of `du` from `u_min`).
    pub fn row_starting_at(&self, u: T) -> Option<usize> {
        let r = ((u - self.u_min) / self.du).round().to_usize()?;
        (r < self.rows).then_some(r)
    }

    pub fn col_of(&self, theta: T) -> usize {
        let tau = T::TAU();
        let t = theta - (theta / tau).floor() * tau;
        let c = (t / self.dtheta).floor().to_usize().unwrap_or(0);
        c.min(self.cols - 1)
    }

    pub fn cell_u(&self, row: usize) -> T {
        self.u_min + (T::from_usize_lossy(row) + T::lit(0.5)) * self.du
    }

    pub fn cell_theta(&self, col: usize) -> T {
        (T::from_usize_lossy(col) + T::lit(0.5)) * self.dtheta
    }

    /// Same geometry with the floor and the top moved by whole rows.
    pub fn with_rows(&self, u_min: T, u_max: T) -> Result<Self, GridError> {
        Self::new(u_min, u_max, self.rows_per_unit)
    }

    /// Sites crossed by the straight segment from `(ua, ta)` to `(ub, tb)` in
    /// `(log r, arg)` coordinates (angles unwrapped).
    pub fn trace_log(&self, ua: T, ta: T, ub: T, tb: T, visit: &mut dyn FnMut(Site)) {
        let x0 = (ua - self.u_min) / self.du;
        let x1 = (ub - self.u_min) / self.du;
        let y0 = ta / self.dtheta;
        let y1 = tb / self.dtheta;
        let rows = self.rows as i64;
        let cols = self.cols as i64;
        traverse_cells(x0, y0, x1, y1, |r, c| {
            if r < 0 {
                visit(Site::Pole);
            } else if r >= rows {
                visit(Site::Boundary(0));
            } else {
                let c = c.rem_euclid(cols) as usize;
                visit(Site::Cell(self.index(r as usize, c)));
            }
        });
    }
}

impl<T: Real> Lattice for LogPolarLattice<T> {
    type Scalar = T;

    fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    fn neighbors(&self, cell: usize) -> [(Site, T); 4] {
        let (r, c) = self.row_col(cell);
        let m = self.cols;
        let one = T::one();
        let tw = self.theta_weight;
        let right = if c + 1 == m { cell + 1 - m } else { cell + 1 };
        let left = if c == 0 { cell + m - 1 } else { cell - 1 };
        let up = if r + 1 == self.rows {
            Site::Boundary(0)
        } else {
            Site::Cell(cell + m)
        };
        let down = if r == 0 {
            Site::Pole
        } else {
            Site::Cell(cell - m)
        };
        [
            (Site::Cell(right), tw),
            (Site::Cell(left), tw),
            (up, one),
            (down, one),
        ]
    }

    fn has_pole(&self) -> bool {
        true
    }

    fn pole_neighbors(&self) -> Vec<(usize, T)> {
        (0..self.cols).map(|c| (c, T::one())).collect()
    }

    fn boundary_labels(&self) -> usize {
        1
    }

    fn color(&self, cell: usize) -> bool {
        let (r, c) = self.row_col(cell);
        (r + c) % 2 == 0
    }

    fn center(&self, cell: usize) -> Point2<T> {
        let (r, c) = self.row_col(cell);
        Point2::polar(self.cell_u(r).exp(), self.cell_theta(c))
    }

    fn site_of(&self, p: Point2<T>) -> Site {
        let rad = p.norm();
        if rad <= T::zero() {
            return Site::Pole;
        }
        let u = rad.ln();
        if u < self.u_min {
            return Site::Pole;
        }
        match self.row_of(u) {
            Some(r) => Site::Cell(self.index(r, self.col_of(p.arg()))),
            None => Site::Boundary(0),
        }
    }

    fn trace_segment(
        &self,
        a: Point2<T>,
        b: Point2<T>,
        visit: &mut dyn FnMut(Site),
    ) -> Result<(), GridError> {
        let (ra, rb) = (a.norm(), b.norm());
        match (ra > T::zero(), rb > T::zero()) {
            (false, false) => visit(Site::Pole),
            (false, true) | (true, false) => {
                // Radial connector from the origin.
                let (p, rp) = if ra > T::zero() { (a, ra) } else { (b, rb) };
                let t = p.arg();
                let floor = self.u_min - self.du;
                visit(Site::Pole);
                self.trace_log(floor, t, rp.ln(), t, visit);
            }
            (true, true) => {
                let ta = a.arg();
                let tb = ta + wrap_angle(b.arg() - ta);
                self.trace_log(ra.ln(), ta, rb.ln(), tb, visit);
            }
        }
        Ok(())
    }

    fn circle_cells(&self, radius: T) -> Vec<usize> {
        if !(radius > T::zero()) {
            return Vec::new();
        }
        let u = radius.ln();
        let x = (u - self.u_min) / self.du;
        let nearest = x.round();
        let mut rows = Vec::new();
        if (x - nearest).abs() < T::lit(1e-9) {
            // On a row edge: both adjacent rows meet the circle.
            if let Some(r) = nearest.to_i64() {
                for rr in [r - 1, r] {
                    if rr >= 0 && (rr as usize) < self.rows {
                        rows.push(rr as usize);
                    }
                }
            }
        } else if let Some(r) = self.row_of(u) {
            rows.push(r);
        }
        rows.into_iter()
            .flat_map(|r| (0..self.cols).map(move |c| r * self.cols + c))
            .collect()
    }

    fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Node lattice of the half-strip `(0, pi) x (0, height)`: interior nodes
/// `(i h, j h)` with `h = pi / width`, `1 <= i < width`, `1 <= j < height_nodes`.
/// Boundary 0 is the bottom edge; boundary 1 is the two sides and the truncated top.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripLattice<T> {
    pub width: usize,
    pub height_nodes: usize,
    pub spacing: T,
}

impl<T: Real> StripLattice<T> {
    pub fn new(width: usize, height: T) -> Result<Self, GridError> {
        if width < 2 || !(height > T::zero()) {
            return Err(GridError::InvalidArgument(
                "strip lattice needs width >= 2, height > 0".into(),
            ));
        }
        let spacing = T::PI() / T::from_usize_lossy(width);
        let height_nodes = (height / spacing).ceil().to_usize().unwrap_or(2).max(2);
        Ok(Self {
            width,
            height_nodes,
            spacing,
        })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        (j - 1) * (self.width - 1) + (i - 1)
    }

    #[inline]
    pub fn node(&self, cell: usize) -> (usize, usize) {
        (cell % (self.width - 1) + 1, cell / (self.width - 1) + 1)
    }

    /// Nearest interior node to `z`.
    pub fn nearest(&self, z: Point2<T>) -> Option<usize> {
        let i = (z.x / self.spacing).round().to_usize()?;
        let j = (z.y / self.spacing).round().to_usize()?;
        (i >= 1 && i < self.width && j >= 1 && j < self.height_nodes).then(|| self.index(i, j))
    }
}

impl<T: Real> Lattice for StripLattice<T> {
    type Scalar = T;

    fn cell_count(&self) -> usize {
        (self.width - 1) * (self.height_nodes - 1)
    }

    #[inline]
    fn neighbors(&self, cell: usize) -> [(Site, T); 4] {
        let (i, j) = self.node(cell);
        let one = T::one();
        let w = self.width - 1;
        let right = if i + 1 < self.width {
            Site::Cell(cell + 1)
        } else {
            Site::Boundary(1)
        };
        let left = if i > 1 {
            Site::Cell(cell - 1)
        } else {
            Site::Boundary(1)
        };
        let up = if j + 1 < self.height_nodes {
            Site::Cell(cell + w)
        } else {
            Site::Boundary(1)
        };
        let down = if j > 1 {
            Site::Cell(cell - w)
        } else {
            Site::Boundary(0)
        };
        [(right, one), (left, one), (up, one), (down, one)]
    }

    fn boundary_labels(&self) -> usize {
        2
    }

    fn color(&self, cell: usize) -> bool {
        let (i, j) = self.node(cell);
        (i + j) % 2 == 0
    }

    fn center(&self, cell: usize) -> Point2<T> {
        let (i, j) = self.node(cell);
        Point2::new(
            T::from_usize_lossy(i) * self.spacing,
            T::from_usize_lossy(j) * self.spacing,
        )
    }

    fn site_of(&self, p: Point2<T>) -> Site {
        if p.y <= T::lit(0.5) * self.spacing && p.x > T::zero() && p.x < T::PI() {
            return Site::Boundary(0);
        }
        self.nearest(p).map_or(Site::Boundary(1), Site::Cell)
    }

    fn trace_segment(
        &self,
        a: Point2<T>,
        b: Point2<T>,
        visit: &mut dyn FnMut(Site),
    ) -> Result<(), GridError> {
        let h = self.spacing;
        let half = T::lit(0.5);
        traverse_cells(
            a.x / h + half,
            a.y / h + half,
            b.x / h + half,
            b.y / h + half,
            |i, j| {
                if i >= 1 && (i as usize) < self.width && j >= 1 && (j as usize) < self.height_nodes
                {
                    visit(Site::Cell(self.index(i as usize, j as usize)));
                } else if j < 1 {
                    visit(Site::Boundary(0));
                } else {
                    visit(Site::Boundary(1));
                }
            },
        );
        Ok(())
    }

    fn circle_cells(&self, _radius: T) -> Vec<usize> {
        Vec::new()
    }

    fn dims(&self) -> (usize, usize) {
        (self.height_nodes - 1, self.width - 1)
    }
}
