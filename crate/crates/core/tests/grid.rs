use std::collections::{HashMap, VecDeque};

use brownlab::grid::*;
use brownlab::paths::{run_to_radius, PlanarPath, Point2};
use brownlab::stats::total_variation;
use brownlab::StreamKey;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Sq = SquareLattice<f64>;

fn sq(extent: usize) -> Sq {
    SquareLattice::new(1.0, extent).unwrap()
}

fn random_mask(l: Sq, density: f64, seed: u64) -> LatticeMask<Sq> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = LatticeMask::empty(l);
    for c in 0..l.cell_count() {
        if rng.random::<f64>() < density {
            m.set(c);
        }
    }
    m
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let p = self.0[x];
        if p == x {
            return x;
        }
        let r = self.find(p);
        self.0[x] = r;
        r
    }

    fn join(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        self.0[a] = b;
    }
}

/// Free cells joined by 4-adjacency; one extra node stands for the lattice edge.
fn union_find_partition(mask: &LatticeMask<Sq>) -> (UnionFind, usize) {
    let l = *mask.lattice();
    let n = l.extent as i64;
    let edge = l.cell_count();
    let mut uf = UnionFind((0..=edge).collect());
    for i in -n..=n {
        for j in -n..=n {
            let c = l.index(i, j).unwrap();
            if mask.is_occupied(c) {
                continue;
            }
            if i.abs() == n || j.abs() == n {
                uf.join(c, edge);
            }
            for (a, b) in [(i + 1, j), (i, j + 1)] {
                if let Some(d) = l.index(a, b) {
                    if !mask.is_occupied(d) {
                        uf.join(c, d);
                    }
                }
            }
        }
    }
    (uf, edge)
}

#[test]
fn empty_path_list_gives_empty_mask() {
    let m = rasterize::<Sq>(&[], sq(8)).unwrap();
    assert_eq!(m.count(), 0);
    let labels = flood_outside(&m);
    assert_eq!(labels.enclosed_components(), 0);
    assert!(labels.labels().iter().all(|&r| r == Region::Outside));
    assert!(!disconnects(&m, Point2::new(0.3, -2.0)).unwrap());
}

#[test]
fn rasterized_paths_are_four_connected() {
    for seed in 0..20 {
        let mut rng = StreamKey::new(seed).rng();
        let p = run_to_radius(Point2::new(0.0, 0.0), 12.0, 0.3, 1_000_000, &mut rng).unwrap();
        let m = rasterize_square(&[&p], 0.5, 32).unwrap();
        let l = *m.lattice();
        let cells: Vec<usize> = m.occupied_cells().collect();
        let mut seen = vec![false; l.cell_count()];
        let mut queue = VecDeque::from([cells[0]]);
        seen[cells[0]] = true;
        let mut reached = 1;
        while let Some(c) = queue.pop_front() {
            for (s, _) in l.neighbors(c) {
                if let Site::Cell(d) = s {
                    if m.is_occupied(d) && !seen[d] {
                        seen[d] = true;
                        reached += 1;
                        queue.push_back(d);
                    }
                }
            }
        }
        assert_eq!(reached, cells.len(), "seed {seed}");
    }
}

#[test]
fn rasterized_circle_has_one_enclosed_component() {
    let pts: Vec<Point2<f64>> = (0..=400)
        .map(|k| {
            let t = k as f64 / 400.0 * std::f64::consts::TAU;
            Point2::new(9.3 * t.cos(), 9.3 * t.sin())
        })
        .collect();
    let p = PlanarPath::new(pts, 0.15).unwrap();
    let m = rasterize_square(&[&p], 1.0, 16).unwrap();
    let labels = flood_outside(&m);
    assert_eq!(labels.enclosed_components(), 1);
    assert!(disconnects(&m, Point2::new(0.0, 0.0)).unwrap());
    assert!(!disconnects(&m, Point2::new(13.0, 2.0)).unwrap());
}

#[test]
fn flood_fill_matches_union_find() {
    for (seed, density) in [(1, 0.2), (2, 0.4), (3, 0.5), (4, 0.55), (5, 0.6), (6, 0.7)] {
        let m = random_mask(sq(24), density, seed);
        let labels = flood_outside(&m);
        let (mut uf, edge) = union_find_partition(&m);
        let outside_root = uf.find(edge);
        let mut region_of_root: HashMap<usize, Region> = HashMap::new();
        let mut root_of_region: HashMap<Region, usize> = HashMap::new();
        for c in 0..m.lattice().cell_count() {
            let r = labels.get(c);
            if m.is_occupied(c) {
                assert_eq!(r, Region::Obstacle);
                continue;
            }
            let root = uf.find(c);
            assert_eq!(
                r == Region::Outside,
                root == outside_root,
                "seed {seed} cell {c}"
            );
            assert_eq!(*region_of_root.entry(root).or_insert(r), r);
            assert_eq!(*root_of_region.entry(r).or_insert(root), root);
        }
        let enclosed = root_of_region
            .keys()
            .filter(|r| matches!(r, Region::Enclosed(_)))
            .count();
        assert_eq!(enclosed as u32, labels.enclosed_components());
    }
}

#[test]
fn disconnects_agrees_with_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..10 {
        let m = random_mask(sq(16), 0.5, 100 + seed);
        let labels = flood_outside(&m);
        for _ in 0..50 {
            let p = Point2::new(rng.random_range(-16.4..16.4), rng.random_range(-16.4..16.4));
            let site = m.lattice().site_of(p);
            match disconnects(&m, p) {
                Err(GridError::Swallowed) => assert!(m.site_occupied(site)),
                Ok(d) => assert_eq!(d, labels.site(site) != Region::Outside),
                Err(e) => panic!("{e}"),
            }
        }
    }
}

#[test]
fn point_source_potential_is_logarithmic() {
    let l = sq(110);
    let mut m = LatticeMask::empty(l);
    m.set(l.index(0, 0).unwrap());
    let big_r = 100.0;
    let u = solve_dirichlet(&m, big_r, 1e-9).unwrap();
    let r0 = (-0.577_215_664_901_532_9f64).exp() / (2.0 * 2f64.sqrt());
    for (i, j) in [
        (10, 0),
        (0, -20),
        (30, 0),
        (-50, 0),
        (7, 7),
        (-21, 21),
        (0, 45),
        (30, -30),
    ] {
        let r = ((i * i + j * j) as f64).sqrt();
        let v = u.get(l.index(i, j).unwrap());
        let want = (r / r0).ln() / (big_r / r0).ln();
        assert!((v / want - 1.0).abs() < 0.05, "({i},{j}): {v} vs {want}");
    }
}

#[test]
fn slit_potential_matches_hit_probabilities() {
    let l = sq(32);
    let big_r = 30.0;
    let mut m = LatticeMask::empty(l);
    for i in 0..=20 {
        m.set(l.index(i, 0).unwrap());
    }
    let u = solve_dirichlet(&m, big_r, 1e-10).unwrap();
    let probes: Vec<(i64, i64)> = [4.0, 9.0, 15.0, 22.0]
        .iter()
        .flat_map(|&r: &f64| {
            [0.6f64, 1.5, 2.6, 3.3, 5.4]
                .map(|t| ((r * t.cos()).round() as i64, (r * t.sin()).round() as i64))
        })
        .collect();
    assert_eq!(probes.len(), 20);
    let walks = 5000;
    let key = StreamKey::new(5).named("slit");
    probes.par_iter().enumerate().for_each(|(k, &(i, j))| {
        let start = l.index(i, j).unwrap();
        let mut rng = key.child(k as u64).rng();
        let mut hits = 0usize;
        for _ in 0..walks {
            let end = simple_walk_until(&l, Site::Cell(start), 10_000_000, &mut rng, |s| match s {
                Site::Cell(c) => m.is_occupied(c) || l.center(c).norm() >= big_r,
                _ => true,
            })
            .unwrap();
            if let Site::Cell(c) = end {
                if !m.is_occupied(c) {
                    hits += 1;
                }
            }
        }
        let p = u.get(start);
        let est = hits as f64 / walks as f64;
        let se = (p * (1.0 - p) / walks as f64).sqrt().max(1e-3);
        assert!(
            (est - p).abs() <= 3.0 * se,
            "probe ({i},{j}): mc {est} vs solve {p}"
        );
    });
}

#[test]
fn sup_over_circle_matches_scan() {
    let l = sq(20);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_mask(l, 0.3, 8);
    let values: Vec<f64> = (0..l.cell_count()).map(|_| rng.random()).collect();
    let f = ScalarField::from_values(l, values);
    for radius in [0.2, 1.0, 3.7, 8.0, 12.5, 19.9] {
        let mut best = 0.0f64;
        for c in 0..l.cell_count() {
            let (i, j) = l.coords(c);
            let (x, y) = (i as f64, j as f64);
            let near = (x.abs() - 0.5).max(0.0).hypot((y.abs() - 0.5).max(0.0));
            let far = (x.abs() + 0.5).hypot(y.abs() + 0.5);
            if near <= radius && radius <= far && !m.is_occupied(c) {
                best = best.max(f.get(c));
            }
        }
        assert_eq!(sup_over_circle(&f, &m, radius), best, "radius {radius}");
    }
    assert_eq!(
        sup_over_circle(&ScalarField::constant(l, 0.75), &LatticeMask::empty(l), 6.0),
        0.75
    );
    let mut full = LatticeMask::empty(l);
    for c in l.circle_cells(6.0) {
        full.set(c);
    }
    assert_eq!(sup_over_circle(&f, &full, 6.0), 0.0);
}

/// Index of the perimeter bin through which a walk left the square.
fn perimeter_bin(cell: (i64, i64), bins: usize) -> usize {
    let a = (cell.1 as f64).atan2(cell.0 as f64) + std::f64::consts::PI;
    ((a / std::f64::consts::TAU * bins as f64) as usize).min(bins - 1)
}

#[test]
fn h_walk_exit_law_matches_rejection_sampling() {
    let l = sq(20);
    let mut m = LatticeMask::empty(l);
    for i in -12..=8 {
        m.set(l.index(i, 4).unwrap());
    }
    for j in -10..=4 {
        m.set(l.index(8, j).unwrap());
    }
    for i in -3..=8 {
        m.set(l.index(i, -10).unwrap());
    }
    let mut problem = DirichletProblem::new(l, vec![1.0], PoleCondition::Fixed(0.0)).unwrap();
    problem.fix_mask(&m, 0.0);
    let h = problem.solve(SorParams::with_tolerance(1e-12)).unwrap();
    let start = l.index(2, -2).unwrap();
    let bins = 32;
    let samples = 100_000;
    let key = StreamKey::new(17);

    let conditioned: Vec<usize> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = key.named("h").child(s as u64).rng();
            let walk = h_transform_walk(&h, Site::Cell(start), 10_000_000, &mut rng).unwrap();
            assert_eq!(walk.exit, Site::Boundary(0));
            let Some(Site::Cell(c)) = walk.last_free() else {
                panic!("no free site")
            };
            perimeter_bin(l.coords(c), bins)
        })
        .collect();

    let rejected: Vec<usize> =
        (0..samples)
            .into_par_iter()
            .map(|s| {
                let mut rng = key.named("reject").child(s as u64).rng();
                loop {
                    let mut last = start;
                    let end =
                        simple_walk_until(&l, Site::Cell(start), 10_000_000, &mut rng, |site| {
                            match site {
                                Site::Cell(c) if m.is_occupied(c) => true,
                                Site::Cell(c) => {
                                    last = c;
                                    false
                                }
                                _ => true,
                            }
                        })
                        .unwrap();
                    if matches!(end, Site::Boundary(_)) {
                        return perimeter_bin(l.coords(last), bins);
                    }
                }
            })
            .collect();

    let hist = |v: &[usize]| {
        let mut p = vec![0.0; bins];
        for &b in v {
            p[b] += 1.0 / v.len() as f64;
        }
        p
    };
    let tv = total_variation(&hist(&conditioned), &hist(&rejected));
    assert!(tv <= 0.02, "total variation {tv}");
}

#[test]
fn constant_field_walk_is_unconditioned() {
    let l = sq(10);
    let h = ScalarField::constant(l, 1.0);
    let start = l.index(0, 0).unwrap();
    let mut rng = StreamKey::new(2).rng();
    let mut moves = [0usize; 4];
    let mut total = 0;
    for _ in 0..4000 {
        let mut prev: Option<Site> = None;
        let mut count = |s: Site| {
            if let (Some(Site::Cell(a)), Site::Cell(b)) = (prev, s) {
                let ((ai, aj), (bi, bj)) = (l.coords(a), l.coords(b));
                let k = match (bi - ai, bj - aj) {
                    (1, 0) => 0,
                    (-1, 0) => 1,
                    (0, 1) => 2,
                    _ => 3,
                };
                moves[k] += 1;
                total += 1;
            }
            prev = Some(s);
        };
        let _ = h_walk_with(&h, Site::Cell(start), 1_000_000, &mut rng, &mut count);
    }
    for k in moves {
        let f = k as f64 / total as f64;
        assert!((f - 0.25).abs() < 0.01, "{moves:?}");
    }
}

#[test]
fn strip_bottom_exit_matches_series() {
    for (x, y) in [(1.0, 1.0), (2.2, 0.5)] {
        let (p_hat, p, se) =
            strip::strip_bottom_exit_check(Point2::new(x, y), 41, 20_000, StreamKey::new(4))
                .unwrap();
        assert!(
            (p_hat - p).abs() <= 3.0 * se + 0.01,
            "({x},{y}): {p_hat} vs {p} ± {se}"
        );
    }
}

fn assert_maximum_principle<L: Lattice<Scalar = f64>>(f: &ScalarField<L>, lo: f64, hi: f64) {
    let l = f.lattice();
    for c in 0..l.cell_count() {
        let v = f.get(c);
        assert!((lo - 1e-12..=hi + 1e-12).contains(&v), "cell {c}: {v}");
        if f.is_fixed(Site::Cell(c)) {
            continue;
        }
        let nb = l.neighbors(c).map(|(s, _)| f.site(s));
        let (mn, mx) = nb
            .iter()
            .fold((f64::MAX, f64::MIN), |a, &x| (a.0.min(x), a.1.max(x)));
        assert!(
            v >= mn - 1e-6 && v <= mx + 1e-6,
            "cell {c}: {v} outside [{mn}, {mx}]"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn square_solves_obey_maximum_principle(seed in any::<u64>(), density in 0.0f64..0.5, radius in 4.0f64..11.0) {
        let m = random_mask(sq(12), density, seed);
        let f = solve_dirichlet(&m, radius, 1e-9).unwrap();
        assert_maximum_principle(&f, 0.0, 1.0);
        for c in m.occupied_cells() {
            prop_assert_eq!(f.get(c), 0.0);
        }
    }

    #[test]
    fn log_polar_solves_obey_maximum_principle(seed in any::<u64>(), density in 0.0f64..0.35, pole_free in any::<bool>()) {
        let l = LogPolarLattice::new(-2.0, 0.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = LatticeMask::empty(l);
        for c in 0..l.cell_count() {
            if rng.random::<f64>() < density {
                m.set(c);
            }
        }
        let pole = if pole_free { PoleCondition::Harmonic } else { PoleCondition::Fixed(0.0) };
        let mut problem = DirichletProblem::new(l, vec![1.0], pole).unwrap();
        problem.fix_mask(&m, 0.0);
        let f = problem.solve_polar(SorParams::with_tolerance(1e-10), |_| 0.5).unwrap();
        assert_maximum_principle(&f, 0.0, 1.0);
        let g = problem.solve(SorParams::with_tolerance(1e-10)).unwrap();
        assert_maximum_principle(&g, 0.0, 1.0);
    }

    #[test]
    fn rasterized_segment_occupies_one_row(x0 in -10.0f64..0.0, len in 0.5f64..9.0, y in -5.4f64..5.4) {
        let p = PlanarPath::new(vec![Point2::new(x0, y), Point2::new(x0 + len, y)], len / 7.0).unwrap();
        let m = rasterize_square(&[&p], 1.0, 12).unwrap();
        let l = *m.lattice();
        let rows: std::collections::HashSet<i64> = m.occupied_cells().map(|c| l.coords(c).1).collect();
        prop_assert_eq!(rows.len(), 1);
        let n = m.count() as f64;
        prop_assert!((n - len.ceil()).abs() <= 1.0);
    }
}
