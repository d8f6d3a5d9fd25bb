//! Planar Brownian paths: sampling, circle stopping, tail arcs, downcrossings,
//! rescaling, and a discrete Fréchet surrogate for the path metric.

use std::io::{self, BufRead, Read, Write};
use std::ops::{Add, Mul, Sub};
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{wrap_angle, Real};

#[derive(Debug, Error)]
pub enum PathError {
    #[error("a path needs at least two points, got {0}")]
    Degenerate(usize),
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("increment {index} has length {length}, above the 8-sigma bound {bound}")]
    StepTooLarge {
        index: usize,
        length: f64,
        bound: f64,
    },
    #[error("step budget of {0} exhausted before reaching the stopping circle")]
    StepBudgetExceeded(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed path record: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn origin() -> Self {
        Self::new(T::zero(), T::zero())
    }

    #[inline]
    pub fn polar(radius: T, angle: T) -> Self {
        Self::new(radius * angle.cos(), radius * angle.sin())
    }

    #[inline]
    pub fn norm_sqr(self) -> T {
        self.x * self.x + self.y * self.y
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn arg(self) -> T {
        self.y.atan2(self.x)
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn dist(self, o: Self) -> T {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl<T: Real> Add for Point2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Real> Sub for Point2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Real> Mul<T> for Point2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

/// Distance from the origin to the closed segment `[a, b]`.
pub fn segment_distance_to_origin<T: Real>(a: Point2<T>, b: Point2<T>) -> T {
    let d = b - a;
    let len2 = d.norm_sqr();
    if len2 <= T::zero() {
        return a.norm();
    }
    let t = (-a.dot(d) / len2).max(T::zero()).min(T::one());
    (a + d * t).norm()
}

/// How increments were generated. The 8-sigma increment bound is checked against it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepLaw<T> {
    /// Independent Gaussian coordinate increments with this standard deviation.
    Planar(T),
    /// Gaussian increments of this standard deviation in `log z`; the planar step
    /// scales with the distance to the origin. Segments leaving the origin are radial
    /// connectors and exempt from the bound.
    Logarithmic(T),
}

impl<T: Real> StepLaw<T> {
    pub fn scale(self) -> T {
        match self {
            StepLaw::Planar(s) | StepLaw::Logarithmic(s) => s,
        }
    }
}

/// A polyline approximation of a Brownian trajectory. Immutable once built.
#[derive(Debug, Serialize, Deserialize)]
pub struct PlanarPath<T> {
    points: Vec<Point2<T>>,
    law: StepLaw<T>,
    #[serde(skip)]
    prefix_max: OnceLock<Vec<T>>,
    #[serde(skip)]
    prefix_min: OnceLock<Vec<T>>,
}

impl<T: Real> Clone for PlanarPath<T> {
    fn clone(&self) -> Self {
        Self {
            points: self.points.clone(),
            law: self.law,
            prefix_max: OnceLock::new(),
            prefix_min: OnceLock::new(),
        }
    }
}

impl<T: Real> PartialEq for PlanarPath<T> {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points && self.law == other.law
    }
}

impl<T: Real> PlanarPath<T> {
    /// Builds a path with uniform planar step size, validating all invariants.
    pub fn new(points: Vec<Point2<T>>, step_size: T) -> Result<Self, PathError> {
        Self::with_law(points, StepLaw::Planar(step_size))
    }

    pub fn with_law(points: Vec<Point2<T>>, law: StepLaw<T>) -> Result<Self, PathError> {
        if points.len() < 2 {
            return Err(PathError::Degenerate(points.len()));
        }
        if !(law.scale() > T::zero()) {
            return Err(PathError::InvalidArgument(
                "step size must be positive".into(),
            ));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(PathError::NonFinite(i));
        }
        let eight = T::lit(8.0);
        for (i, w) in points.windows(2).enumerate() {
            let len = w[0].dist(w[1]);
            let bound = match law {
                StepLaw::Planar(s) => eight * s,
                StepLaw::Logarithmic(c) => {
                    let r0 = w[0].norm();
                    if r0 <= T::zero() {
                        continue;
                    }
                    // |z1 - z0| <= |z0| (e^{|dw|} - 1) with |dw| <= 8c.
                    r0 * ((eight * c).exp() - T::one()) * T::lit(1.000_001)
                }
            };
            if len > bound {
                return Err(PathError::StepTooLarge {
                    index: i,
                    length: len.as_f64(),
                    bound: bound.as_f64(),
                });
            }
        }
        Ok(Self::from_parts_unchecked(points, law))
    }

    pub(crate) fn from_parts_unchecked(points: Vec<Point2<T>>, law: StepLaw<T>) -> Self {
        Self {
            points,
            law,
            prefix_max: OnceLock::new(),
            prefix_min: OnceLock::new(),
        }
    }

    #[inline]
    pub fn points(&self) -> &[Point2<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point2<T> {
        self.points[0]
    }

    pub fn last(&self) -> Point2<T> {
        self.points[self.points.len() - 1]
    }

    pub fn law(&self) -> StepLaw<T> {
        self.law
    }

    /// Nominal step scale (planar standard deviation, or log-plane standard deviation).
    pub fn step_size(&self) -> T {
        self.law.scale()
    }

    pub fn into_points(self) -> Vec<Point2<T>> {
        self.points
    }

    fn prefix_max(&self) -> &[T] {
        self.prefix_max.get_or_init(|| {
            let mut acc = T::neg_infinity();
            self.points
                .iter()
                .map(|p| {
                    acc = acc.max(p.norm());
                    acc
                })
                .collect()
        })
    }

    fn prefix_min(&self) -> &[T] {
        self.prefix_min.get_or_init(|| {
            let mut acc = T::infinity();
            self.points
                .iter()
                .map(|p| {
                    acc = acc.min(p.norm());
                    acc
                })
                .collect()
        })
    }

    /// First index whose point has norm `>= radius` (cached running maximum).
    pub fn first_index_at_or_beyond(&self, radius: T) -> Option<usize> {
        let pm = self.prefix_max();
        let i = pm.partition_point(|&m| m < radius);
        (i < pm.len()).then_some(i)
    }

    /// First index whose point has norm `<= radius` (cached running minimum).
    pub fn first_index_within(&self, radius: T) -> Option<usize> {
        let pm = self.prefix_min();
        let i = pm.partition_point(|&m| m > radius);
        (i < pm.len()).then_some(i)
    }

    /// Every point multiplied by `factor`; planar step sizes scale along.
    pub fn rescale(&self, factor: T) -> Result<Self, PathError> {
        if !(factor > T::zero()) {
            return Err(PathError::InvalidArgument(
                "rescale factor must be positive".into(),
            ));
        }
        let law = match self.law {
            StepLaw::Planar(s) => StepLaw::Planar(s * factor),
            l @ StepLaw::Logarithmic(_) => l,
        };
        Ok(Self::from_parts_unchecked(
            self.points.iter().map(|&p| p * factor).collect(),
            law,
        ))
    }

    /// Flat little-endian record: `u64` count followed by `count` pairs of `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.points.len() as u64).to_le_bytes())?;
        for p in &self.points {
            w.write_all(&p.x.as_f64().to_le_bytes())?;
            w.write_all(&p.y.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a record written by [`PlanarPath::write_binary`]. The step law is not
    /// stored in the record and must be supplied.
    pub fn read_binary<R: Read>(mut r: R, law: StepLaw<T>) -> Result<Self, PathError> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let n = u64::from_le_bytes(buf);
        let n = usize::try_from(n).map_err(|_| PathError::Malformed("count overflow".into()))?;
        let mut points = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            let x = f64::from_le_bytes(buf);
            r.read_exact(&mut buf)?;
            let y = f64::from_le_bytes(buf);
            points.push(Point2::new(T::lit(x), T::lit(y)));
        }
        Self::with_law(points, law)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,y")?;
        for p in &self.points {
            writeln!(w, "{},{}", p.x.as_f64(), p.y.as_f64())?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, law: StepLaw<T>) -> Result<Self, PathError> {
        let mut points = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with('x')) {
                continue;
            }
            let mut it = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64, PathError> {
                s.ok_or_else(|| PathError::Malformed(format!("line {}", lineno + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| PathError::Malformed(format!("line {}: {e}", lineno + 1)))
            };
            let x = parse(it.next())?;
            let y = parse(it.next())?;
            points.push(Point2::new(T::lit(x), T::lit(y)));
        }
        Self::with_law(points, law)
    }
}

/// Gaussian walk from `start` stopped at the first sample with norm `>= radius`.
pub fn run_to_radius<T: Real, R: Rng + ?Sized>(
    start: Point2<T>,
    radius: T,
    step_size: T,
    max_steps: usize,
    rng: &mut R,
) -> Result<PlanarPath<T>, PathError> {
    if !(radius > start.norm()) {
        return Err(PathError::InvalidArgument(
            "radius must exceed |start|".into(),
        ));
    }
    if !(step_size > T::zero() && step_size <= radius / T::lit(20.0)) {
        return Err(PathError::InvalidArgument(
            "step size must lie in (0, radius/20]".into(),
        ));
    }
    let r2 = radius * radius;
    let mut points = vec![start];
    let mut p = start;
    for _ in 0..max_steps {
        p = Point2::new(
            p.x + step_size * T::standard_normal(rng),
            p.y + step_size * T::standard_normal(rng),
        );
        points.push(p);
        if p.norm_sqr() >= r2 {
            return Ok(PlanarPath::from_parts_unchecked(
                points,
                StepLaw::Planar(step_size),
            ));
        }
    }
    Err(PathError::StepBudgetExceeded(max_steps))
}

/// Outcome of a walk simulated in the logarithmic plane.
#[derive(Debug, Clone)]
pub struct LogWalk<T: Real> {
    pub path: PlanarPath<T>,
    /// Number of times the walk went below the floor.
    pub floor_hits: usize,
}

/// What a log-plane walk does when `log r` drops below a floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Floor<T> {
    /// No floor; the walk may wander arbitrarily deep.
    Open,
    /// Mirror `log r` at the floor level.
    Reflect(T),
    /// End the walk at the first sample below the floor.
    Stop(T),
    /// Once `log r < level - depth`, jump straight back to just below `level` with
    /// the exact hitting law: in the half plane `{log r < level}` Brownian motion
    /// started at depth `d` hits the boundary at an angle offset that is Cauchy
    /// with scale `d`. The excursion is replaced by a segment that stays below the
    /// floor, so everything it would have marked lies inside the disk `e^{level}`.
    Return { level: T, depth: T },
}

impl<T: Real> Floor<T> {
    fn level(self) -> Option<T> {
        match self {
            Floor::Open => None,
            Floor::Reflect(f) | Floor::Stop(f) => Some(f),
            Floor::Return { level, .. } => Some(level),
        }
    }
}

/// A walk kept in `w = log z` coordinates: `(log r, unwrapped arg)` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPolyline<T> {
    pub points: Vec<(T, T)>,
    pub floor_hits: usize,
    /// Whether the walk ended by entering the floor rather than at the target.
    pub stopped_at_floor: bool,
}

impl<T: Real> LogPolyline<T> {
    /// First index with `log r >= u`.
    pub fn first_index_at_or_beyond(&self, u: T) -> Option<usize> {
        self.points.iter().position(|p| p.0 >= u)
    }

    pub fn to_planar(&self, log_step: T) -> PlanarPath<T> {
        let pts = self
            .points
            .iter()
            .map(|&(u, t)| Point2::polar(u.exp(), t))
            .collect();
        PlanarPath::from_parts_unchecked(pts, StepLaw::Logarithmic(log_step))
    }
}

/// Planar Brownian motion simulated through `w = log z`: Gaussian steps of standard
/// deviation `log_step` in `(log r, arg)`, stopped at the first sample with
/// `log r >= target_log_radius`.
pub fn run_log_walk<T: Real, R: Rng + ?Sized>(
    start: Point2<T>,
    target_log_radius: T,
    log_step: T,
    floor: Floor<T>,
    max_steps: usize,
    rng: &mut R,
) -> Result<LogWalk<T>, PathError> {
    let r0 = start.norm();
    if !(r0 > T::zero()) {
        return Err(PathError::InvalidArgument(
            "log-plane walk cannot start at the origin".into(),
        ));
    }
    let w = run_log_polyline(
        (r0.ln(), start.arg()),
        target_log_radius,
        log_step,
        floor,
        max_steps,
        rng,
    )?;
    let mut path = w.to_planar(log_step);
    // Keep the exact start point rather than its polar round trip.
    path.points[0] = start;
    Ok(LogWalk {
        path,
        floor_hits: w.floor_hits,
    })
}

/// As [`run_log_walk`], returning the walk in `(log r, arg)` coordinates.
pub fn run_log_polyline<T: Real, R: Rng + ?Sized>(
    start: (T, T),
    target_log_radius: T,
    log_step: T,
    floor: Floor<T>,
    max_steps: usize,
    rng: &mut R,
) -> Result<LogPolyline<T>, PathError> {
    let mut points = vec![start];
    let (floor_hits, stopped_at_floor) = extend_log_polyline(
        &mut points,
        target_log_radius,
        log_step,
        floor,
        max_steps,
        rng,
    )?;
    Ok(LogPolyline {
        points,
        floor_hits,
        stopped_at_floor,
    })
}

/// Continues the walk from the last point of `points` until `log r >= target`.
/// Returns the number of floor events and whether the walk stopped at the floor.
pub fn extend_log_polyline<T: Real, R: Rng + ?Sized>(
    points: &mut Vec<(T, T)>,
    target_log_radius: T,
    log_step: T,
    floor: Floor<T>,
    max_steps: usize,
    rng: &mut R,
) -> Result<(usize, bool), PathError> {
    let &(mut u, mut theta) = points
        .last()
        .ok_or_else(|| PathError::InvalidArgument("walk needs a start point".into()))?;
    if !(target_log_radius > u) {
        return Err(PathError::InvalidArgument(
            "target radius must exceed |start|".into(),
        ));
    }
    if !(log_step > T::zero() && log_step <= T::lit(0.25)) {
        return Err(PathError::InvalidArgument(
            "log step must lie in (0, 0.25]".into(),
        ));
    }
    if let Floor::Return { depth, .. } = floor {
        if !(depth > T::zero()) {
            return Err(PathError::InvalidArgument(
                "return depth must be positive".into(),
            ));
        }
    }
    let level = floor.level();
    let mut below = level.is_some_and(|f| u < f);
    let mut floor_hits = 0usize;
    for _ in 0..max_steps {
        u += log_step * T::standard_normal(rng);
        theta += log_step * T::standard_normal(rng);
        match floor {
            Floor::Open => {}
            Floor::Reflect(f) => {
                if u < f {
                    floor_hits += 1;
                    u = f + f - u;
                }
            }
            Floor::Stop(f) => {
                if u < f {
                    floor_hits += 1;
                    points.push((u, theta));
                    return Ok((floor_hits, true));
                }
            }
            Floor::Return { level: f, depth } => {
                if u < f && !below {
                    floor_hits += 1;
                }
                below = u < f;
                if u < f - depth {
                    points.push((u, theta));
                    let d = f - u;
                    let c = (T::PI() * (T::standard_uniform(rng) - T::lit(0.5))).tan();
                    theta += d * c;
                    // Land a hair below the floor so the connecting segment stays inside.
                    u = f - log_step * T::lit(1e-3);
                }
            }
        }
        points.push((u, theta));
        if u >= target_log_radius {
            return Ok((floor_hits, false));
        }
    }
    Err(PathError::StepBudgetExceeded(max_steps))
}

/// Outcome of a search for a circle crossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossing<A> {
    Found(A),
    NoCrossing,
}

impl<A> Crossing<A> {
    pub fn found(self) -> Option<A> {
        match self {
            Crossing::Found(a) => Some(a),
            Crossing::NoCrossing => None,
        }
    }
}

/// The arc of `parent` from `start_index` on, where `start_index` is the first
/// index with norm `<= e^{-m}`.
#[derive(Debug, Clone, Copy)]
pub struct TailArc<'a, T> {
    pub parent: &'a PlanarPath<T>,
    pub start_index: usize,
    pub m: T,
}

impl<'a, T: Real> TailArc<'a, T> {
    pub fn points(&self) -> &'a [Point2<T>] {
        &self.parent.points[self.start_index..]
    }
}

/// Tail of `path` after its first point inside the closed disk of radius `e^{-m}`.
/// A path started at the origin has visited every inner circle at index 0.
pub fn tail_after_radius<T: Real>(
    path: &PlanarPath<T>,
    m: T,
) -> Result<Crossing<TailArc<'_, T>>, PathError> {
    if !(m >= T::zero()) {
        return Err(PathError::InvalidArgument("m must be non-negative".into()));
    }
    let r = (-m).exp() * (T::one() + T::epsilon() * T::lit(8.0));
    Ok(match path.first_index_within(r) {
        Some(start_index) => Crossing::Found(TailArc {
            parent: path,
            start_index,
            m,
        }),
        None => Crossing::NoCrossing,
    })
}

/// Index of the first point of an outward path on or beyond the circle `e^{-m}`;
/// the arc from there on is the tail used by the regularity classes.
pub fn first_reach_index<T: Real>(path: &PlanarPath<T>, m: T) -> Option<usize> {
    path.first_index_at_or_beyond((-m).exp() * (T::one() - T::epsilon() * T::lit(8.0)))
}

/// Whether `path`, after first reaching the circle of radius `e^{-k}`, touches the
/// closed disk of radius `e^{-j}` (a downcrossing from `e^{-k}` to `e^{-j}`).
pub fn has_downcrossing<T: Real>(path: &PlanarPath<T>, k: T, j: T) -> Result<bool, PathError> {
    if !(k < j) {
        return Err(PathError::InvalidArgument(
            "downcrossing needs k < j".into(),
        ));
    }
    let Some(i0) = first_reach_index(path, k) else {
        return Ok(false);
    };
    let inner = (-j).exp();
    let pts = path.points();
    if pts[i0].norm() <= inner {
        return Ok(true);
    }
    Ok(pts[i0..]
        .windows(2)
        .any(|w| segment_distance_to_origin(w[0], w[1]) <= inner))
}

/// Suffix minima of the segment distance to the origin; entry `i` covers the
/// polyline from point `i` to the end.
fn suffix_min_distance<T: Real>(path: &PlanarPath<T>) -> Vec<T> {
    let pts = path.points();
    let n = pts.len();
    let mut out = vec![T::infinity(); n];
    out[n - 1] = pts[n - 1].norm();
    for i in (0..n - 1).rev() {
        out[i] = out[i + 1].min(segment_distance_to_origin(pts[i], pts[i + 1]));
    }
    out
}

/// Grid of scales on which the regularity class `Y_m` is checked: `k = i/12` for
/// `i = 0..=11m`, each with a downcrossing depth of `m/12`.
pub fn y_class_levels<T: Real>(m: u32) -> impl Iterator<Item = (T, T)> {
    let twelfth = T::one() / T::lit(12.0);
    let depth = T::from_u32(m).expect("m fits") * twelfth;
    (0..=11 * m).map(move |i| {
        let k = T::from_u32(i).expect("i fits") * twelfth;
        (k, k + depth)
    })
}

/// True iff `path` has no downcrossing from `e^{-k}` to `e^{-k-m/12}` for every `k`
/// on the 1/12 grid of `[0, 11m/12]`.
pub fn free_of_downcrossings<T: Real>(path: &PlanarPath<T>, m: u32) -> bool {
    let suffix = suffix_min_distance(path);
    y_class_levels::<T>(m).all(|(k, j)| match first_reach_index(path, k) {
        None => true,
        Some(i0) => suffix[i0] > (-j).exp(),
    })
}

/// Regularity class `Y_m` for a pair of paths from the origin to the unit circle.
pub fn pair_in_y_class<T: Real>(alpha: &PlanarPath<T>, beta: &PlanarPath<T>, m: u32) -> bool {
    m >= 1 && free_of_downcrossings(alpha, m) && free_of_downcrossings(beta, m)
}

/// Discrete Fréchet distance between the two point sequences.
pub fn path_distance<T: Real>(a: &PlanarPath<T>, b: &PlanarPath<T>) -> T {
    let (pa, pb) = (a.points(), b.points());
    let m = pb.len();
    let mut prev = vec![T::zero(); m];
    let mut cur = vec![T::zero(); m];
    for (i, &p) in pa.iter().enumerate() {
        for j in 0..m {
            let d = p.dist(pb[j]);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

/// Unwrapped `(log r, arg)` coordinates of a path that avoids the origin except
/// possibly at its first point (which is then dropped).
pub fn log_coordinates<T: Real>(path: &PlanarPath<T>) -> Vec<(T, T)> {
    let mut out: Vec<(T, T)> = Vec::with_capacity(path.len());
    let mut last_theta: Option<T> = None;
    for p in path.points() {
        let r = p.norm();
        if r <= T::zero() {
            continue;
        }
        let a = p.arg();
        let theta = match last_theta {
            None => a,
            Some(t) => t + wrap_angle(a - t),
        };
        last_theta = Some(theta);
        out.push((r.ln(), theta));
    }
    out
}
