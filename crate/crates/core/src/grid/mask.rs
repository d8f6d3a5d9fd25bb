//! Occupancy masks, rasterization and flood fill.

#[allow(unused_imports)]
use num_traits::{Float, FloatConst, One, ToPrimitive, Zero};
use std::collections::VecDeque;

use crate::paths::{PlanarPath, Point2};

use super::lattice::{Lattice, Site, SquareLattice};
use super::GridError;

/// Occupied cells of a lattice (the "sausage" of one or more paths).
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeMask<L> {
    lattice: L,
    bits: Vec<u64>,
    pole: bool,
}

impl<L: Lattice> LatticeMask<L> {
    pub fn empty(lattice: L) -> Self {
        let words = lattice.cell_count().div_ceil(64);
        Self {
            lattice,
            bits: vec![0; words],
            pole: false,
        }
    }

    pub fn lattice(&self) -> &L {
        &self.lattice
    }

    #[inline]
    pub fn is_occupied(&self, cell: usize) -> bool {
        self.bits[cell >> 6] >> (cell & 63) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, cell: usize) {
        self.bits[cell >> 6] |= 1 << (cell & 63);
    }

    #[inline]
    pub fn clear(&mut self, cell: usize) {
        self.bits[cell >> 6] &= !(1 << (cell & 63));
    }

    /// Whether the pole node (everything below the lattice floor) is occupied.
    pub fn pole_occupied(&self) -> bool {
        self.pole
    }

    pub fn set_pole(&mut self, occupied: bool) {
        self.pole = occupied && self.lattice.has_pole();
    }

    /// Occupancy of a site; boundaries are never occupied.
    #[inline]
    pub fn site_occupied(&self, site: Site) -> bool {
        match site {
            Site::Cell(c) => self.is_occupied(c),
            Site::Pole => self.pole,
            Site::Boundary(_) => false,
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn occupied_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(wi, &w)| {
            let mut word = w;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let b = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(wi * 64 + b)
            })
        })
    }

    pub fn union_with(&mut self, other: &Self) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
        self.pole |= other.pole;
    }

    /// Marks every site crossed by the polyline. Boundary crossings are reported
    /// by the lattice (square grids reject geometry beyond the extent).
    pub fn add_path(&mut self, path: &PlanarPath<L::Scalar>) -> Result<(), GridError> {
        self.add_points(path.points())
    }

    pub fn add_points(&mut self, points: &[Point2<L::Scalar>]) -> Result<(), GridError> {
        let lattice = self.lattice.clone();
        if points.len() == 1 {
            let s = lattice.site_of(points[0]);
            self.mark(s);
            return Ok(());
        }
        for w in points.windows(2) {
            lattice.trace_segment(w[0], w[1], &mut |s| self.mark(s))?;
        }
        Ok(())
    }

    #[inline]
    fn mark(&mut self, s: Site) {
        match s {
            Site::Cell(c) => self.set(c),
            Site::Pole => self.pole = true,
            Site::Boundary(_) => {}
        }
    }
}

impl<T: crate::scalar::Real> LatticeMask<super::lattice::LogPolarLattice<T>> {
    /// Marks the sites crossed by `points[range]` given in `(log r, arg)` coordinates.
    pub fn add_log_polyline(&mut self, points: &[(T, T)]) {
        let lattice = self.lattice;
        if points.len() == 1 {
            let (u, t) = points[0];
            lattice.trace_log(u, t, u, t, &mut |s| self.mark(s));
        }
        for w in points.windows(2) {
            lattice.trace_log(w[0].0, w[0].1, w[1].0, w[1].1, &mut |s| self.mark(s));
        }
    }
}

/// Rasterizes a list of paths onto a lattice.
pub fn rasterize<L: Lattice>(
    paths: &[&PlanarPath<L::Scalar>],
    lattice: L,
) -> Result<LatticeMask<L>, GridError> {
    let mut mask = LatticeMask::empty(lattice);
    for p in paths {
        mask.add_path(p)?;
    }
    Ok(mask)
}

/// Square-grid rasterization with grid `[-N, N]^2` of the given cell size.
pub fn rasterize_square<T: crate::scalar::Real>(
    paths: &[&PlanarPath<T>],
    cell_size: T,
    extent: usize,
) -> Result<LatticeMask<SquareLattice<T>>, GridError> {
    rasterize(paths, SquareLattice::new(cell_size, extent)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Outside,
    Obstacle,
    Enclosed(u32),
}

/// Component labels of the free cells of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionLabels {
    labels: Vec<Region>,
    pole: Option<Region>,
    enclosed: u32,
}

impl RegionLabels {
    #[inline]
    pub fn get(&self, cell: usize) -> Region {
        self.labels[cell]
    }

    pub fn pole(&self) -> Option<Region> {
        self.pole
    }

    pub fn site(&self, site: Site) -> Region {
        match site {
            Site::Cell(c) => self.labels[c],
            Site::Pole => self.pole.unwrap_or(Region::Outside),
            Site::Boundary(_) => Region::Outside,
        }
    }

    pub fn enclosed_components(&self) -> u32 {
        self.enclosed
    }

    pub fn labels(&self) -> &[Region] {
        &self.labels
    }
}

/// Breadth-first labelling: free sites reachable from any boundary are outside,
/// the rest are numbered by 4-connected component. The pole, when present,
/// is one node adjacent to every innermost cell.
pub fn flood_outside<L: Lattice>(mask: &LatticeMask<L>) -> RegionLabels {
    let lat = mask.lattice();
    let n = lat.cell_count();
    let has_pole = lat.has_pole();
    let pole_id = n;
    let mut labels: Vec<Option<Region>> = vec![None; n + usize::from(has_pole)];
    for c in mask.occupied_cells() {
        labels[c] = Some(Region::Obstacle);
    }
    if has_pole && mask.pole_occupied() {
        labels[pole_id] = Some(Region::Obstacle);
    }
    let pole_nbrs: Vec<usize> = if has_pole {
        lat.pole_neighbors().into_iter().map(|(c, _)| c).collect()
    } else {
        Vec::new()
    };

    let mut queue = VecDeque::new();
    let fill = |seed: usize,
                region: Region,
                labels: &mut Vec<Option<Region>>,
                queue: &mut VecDeque<usize>| {
        labels[seed] = Some(region);
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            let mut push = |w: usize, labels: &mut Vec<Option<Region>>| {
                if labels[w].is_none() {
                    labels[w] = Some(region);
                    queue.push_back(w);
                }
            };
            if has_pole && v == pole_id {
                for &w in &pole_nbrs {
                    push(w, labels);
                }
                continue;
            }
            for (s, _) in lat.neighbors(v) {
                match s {
                    Site::Cell(w) => push(w, labels),
                    Site::Pole => push(pole_id, labels),
                    Site::Boundary(_) => {}
                }
            }
        }
    };

    for c in 0..n {
        if labels[c].is_none()
            && lat
                .neighbors(c)
                .iter()
                .any(|(s, _)| matches!(s, Site::Boundary(_)))
        {
            fill(c, Region::Outside, &mut labels, &mut queue);
        }
    }
    let mut enclosed = 0u32;
    for v in 0..labels.len() {
        if labels[v].is_none() {
            fill(v, Region::Enclosed(enclosed), &mut labels, &mut queue);
            enclosed += 1;
        }
    }
    let pole = has_pole.then(|| labels[pole_id].expect("labelled"));
    labels.truncate(n);
    RegionLabels {
        labels: labels
            .into_iter()
            .map(|l| l.expect("every site labelled"))
            .collect(),
        pole,
        enclosed,
    }
}

/// 4-connected components of free cells, linked only through cells (never through
/// the pole or a boundary). Occupied cells get [`FreeComponents::OCCUPIED`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreeComponents {
    pub labels: Vec<u32>,
    pub count: u32,
}

impl FreeComponents {
    pub const OCCUPIED: u32 = u32::MAX;
}

pub fn free_components<L: Lattice>(mask: &LatticeMask<L>) -> FreeComponents {
    let lat = mask.lattice();
    let n = lat.cell_count();
    const UNSEEN: u32 = u32::MAX - 1;
    let mut labels = vec![UNSEEN; n];
    for c in mask.occupied_cells() {
        labels[c] = FreeComponents::OCCUPIED;
    }
    let mut count = 0u32;
    let mut stack = Vec::new();
    for seed in 0..n {
        if labels[seed] != UNSEEN {
            continue;
        }
        labels[seed] = count;
        stack.push(seed);
        while let Some(v) = stack.pop() {
            for (s, _) in lat.neighbors(v) {
                if let Site::Cell(w) = s {
                    if labels[w] == UNSEEN {
                        labels[w] = count;
                        stack.push(w);
                    }
                }
            }
        }
        count += 1;
    }
    FreeComponents { labels, count }
}

/// Whether the mask separates `point` from the lattice boundary.
pub fn disconnects<L: Lattice>(
    mask: &LatticeMask<L>,
    point: Point2<L::Scalar>,
) -> Result<bool, GridError> {
    let labels = flood_outside(mask);
    disconnects_with(mask, &labels, point)
}

/// As [`disconnects`], reusing precomputed labels.
pub fn disconnects_with<L: Lattice>(
    mask: &LatticeMask<L>,
    labels: &RegionLabels,
    point: Point2<L::Scalar>,
) -> Result<bool, GridError> {
    let site = mask.lattice().site_of(point);
    if mask.site_occupied(site) {
        return Err(GridError::Swallowed);
    }
    Ok(labels.site(site) != Region::Outside)
}

/// Whether a free site is connected to the boundary, by a BFS that stops early.
pub fn reaches_boundary<L: Lattice>(mask: &LatticeMask<L>, start: Site) -> bool {
    let lat = mask.lattice();
    if mask.site_occupied(start) {
        return false;
    }
    let n = lat.cell_count();
    let pole_id = n;
    let mut seen = vec![false; n + 1];
    let mut queue = VecDeque::new();
    match start {
        Site::Boundary(_) => return true,
        Site::Cell(c) => {
            seen[c] = true;
            queue.push_back(c);
        }
        Site::Pole => {
            seen[pole_id] = true;
            queue.push_back(pole_id);
        }
    }
    let pole_nbrs: Vec<usize> = lat.pole_neighbors().into_iter().map(|(c, _)| c).collect();
    while let Some(v) = queue.pop_front() {
        if v == pole_id {
            for &w in &pole_nbrs {
                if !seen[w] && !mask.is_occupied(w) {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
            continue;
        }
        for (s, _) in lat.neighbors(v) {
            match s {
                Site::Boundary(_) => return true,
                Site::Cell(w) => {
                    if !seen[w] && !mask.is_occupied(w) {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
                Site::Pole => {
                    if !seen[pole_id] && !mask.pole_occupied() {
                        seen[pole_id] = true;
                        queue.push_back(pole_id);
                    }
                }
            }
        }
    }
    false
}
