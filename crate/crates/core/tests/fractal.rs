use std::collections::{HashSet, VecDeque};

use brownlab::fractal::*;
use brownlab::grid::{flood_outside, Lattice, LatticeMask, Region, Site, SquareLattice};
use brownlab::paths::{PlanarPath, Point2};
use brownlab::{SquareMask, StreamKey};
use proptest::prelude::*;
use rand::SeedableRng;

fn lat(extent: usize) -> SquareLattice<f64> {
    SquareLattice::new(1.0, extent).unwrap()
}

fn mask_of(path: &PlanarPath<f64>, l: SquareLattice<f64>) -> SquareMask {
    let mut m = LatticeMask::empty(l);
    m.add_path(path).unwrap();
    m
}

/// Free cells joined to the edge, by breadth-first search over (i, j) coordinates.
fn outside_scan(mask: &SquareMask) -> HashSet<(i64, i64)> {
    let l = *mask.lattice();
    let n = l.extent as i64;
    let free = |i: i64, j: i64| !mask.is_occupied(l.index(i, j).unwrap());
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    for k in -n..=n {
        for c in [(k, -n), (k, n), (-n, k), (n, k)] {
            if free(c.0, c.1) && seen.insert(c) {
                queue.push_back(c);
            }
        }
    }
    while let Some((i, j)) = queue.pop_front() {
        for (a, b) in [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)] {
            if a.abs() <= n && b.abs() <= n && free(a, b) && seen.insert((a, b)) {
                queue.push_back((a, b));
            }
        }
    }
    seen
}

fn frontier_scan(mask: &SquareMask) -> Vec<(i64, i64)> {
    let l = *mask.lattice();
    let n = l.extent as i64;
    let out = outside_scan(mask);
    let mut v: Vec<_> = mask
        .occupied_cells()
        .map(|c| l.coords(c))
        .filter(|&(i, j)| {
            [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)]
                .iter()
                .any(|&(a, b)| a.abs() > n || b.abs() > n || out.contains(&(a, b)))
        })
        .collect();
    v.sort_unstable();
    v
}

/// Flood fill at every checkpoint, keeping the window's new cells that touch the outside.
fn pioneer_by_flood(
    path: &PlanarPath<f64>,
    checkpoints: usize,
    l: SquareLattice<f64>,
) -> Vec<(i64, i64)> {
    let pts = path.points();
    let mut mask = LatticeMask::empty(l);
    let mut window = Vec::new();
    let add = |mask: &mut SquareMask, window: &mut Vec<usize>, a, b| {
        l.trace_segment(a, b, &mut |s| {
            if let Site::Cell(c) = s {
                if !mask.is_occupied(c) {
                    mask.set(c);
                    window.push(c);
                }
            }
        })
        .unwrap()
    };
    add(&mut mask, &mut window, pts[0], pts[0]);
    let mut out = Vec::new();
    let mut step = 0;
    for end in checkpoint_indices(pts.len(), checkpoints) {
        while step < end {
            add(&mut mask, &mut window, pts[step], pts[step + 1]);
            step += 1;
        }
        let labels = flood_outside(&mask);
        for c in window.drain(..) {
            if l.neighbors(c)
                .iter()
                .any(|&(s, _)| labels.site(s) == Region::Outside)
            {
                out.push(l.coords(c));
            }
        }
    }
    out.sort_unstable();
    out
}

fn segment(from: (f64, f64), to: (f64, f64), steps: usize) -> PlanarPath<f64> {
    let pts = (0..=steps)
        .map(|k| {
            let t = k as f64 / steps as f64;
            Point2::new(from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1))
        })
        .collect();
    let len = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
    PlanarPath::new(pts, len / steps as f64).unwrap()
}

#[test]
fn straight_segment_is_all_frontier_and_all_pioneer() {
    let l = lat(32);
    let p = segment((-20.0, 0.3), (20.0, 7.2), 200);
    let m = mask_of(&p, l);
    let f = frontier_cells(&m);
    assert_eq!(f.len(), m.count());
    let pio = pioneer_cells(&p, 16, l).unwrap();
    assert_eq!(pio, f);
    let pts = p.points();
    for end in checkpoint_indices(pts.len(), 16) {
        let (i, j) = (pts[end].x.round() as i64, pts[end].y.round() as i64);
        assert!(pio.contains((i, j)));
    }
}

#[test]
fn solid_block_frontier_is_its_ring() {
    let l = lat(20);
    let mut m = LatticeMask::empty(l);
    for i in -6..=6 {
        for j in -4..=9 {
            m.set(l.index(i, j).unwrap());
        }
    }
    let f = frontier_cells(&m);
    let ring: Vec<(i64, i64)> = f.cells().to_vec();
    assert_eq!(ring.len(), 2 * 13 + 2 * 14 - 4);
    assert!(ring.iter().all(|&(i, j)| i.abs() == 6 || j == -4 || j == 9));
}

#[test]
fn ring_interior_is_not_frontier() {
    let l = lat(20);
    let mut m = LatticeMask::empty(l);
    for k in -5..=5 {
        for c in [(k, -5), (k, 5), (-5, k), (5, k)] {
            m.set(l.index(c.0, c.1).unwrap());
        }
    }
    m.set(l.index(0, 0).unwrap());
    let f = frontier_cells(&m);
    assert_eq!(f.len(), 40);
    assert!(!f.contains((0, 0)));
}

#[test]
fn frontier_matches_definition_scan() {
    for seed in 0..6 {
        let l = lat(96);
        let p = centred_walk(20_000, 120.0, StreamKey::new(seed)).unwrap();
        let m = mask_of(&p, l);
        assert_eq!(
            frontier_cells(&m).cells(),
            frontier_scan(&m).as_slice(),
            "seed {seed}"
        );
    }
}

#[test]
fn pioneer_matches_flood_fill_per_checkpoint() {
    let l = lat(96);
    for (seed, cp) in [(1, 2), (2, 17), (3, 64), (4, 500)] {
        let p = centred_walk(20_000, 120.0, StreamKey::new(seed)).unwrap();
        let got = pioneer_cells(&p, cp, l).unwrap();
        assert_eq!(
            got.cells(),
            pioneer_by_flood(&p, cp, l).as_slice(),
            "seed {seed}, {cp} checkpoints"
        );
    }
}

#[test]
fn pioneer_sets_nest_and_stay_on_the_path() {
    let l = lat(128);
    let p = centred_walk(50_000, 160.0, StreamKey::new(9)).unwrap();
    let coarse = pioneer_cells(&p, 64, l).unwrap();
    let fine = pioneer_cells(&p, 256, l).unwrap();
    assert!(coarse.is_subset(&fine));
    assert!(coarse.len() < fine.len());
    let m = mask_of(&p, l);
    assert!(fine
        .cells()
        .iter()
        .all(|&(i, j)| m.is_occupied(l.index(i, j).unwrap())));
    // The final window ends at the last step, so the final frontier is included.
    assert!(frontier_cells(&m).is_subset(&fine));
    assert!(matches!(
        pioneer_cells(&p, 1, l),
        Err(FractalError::InvalidArgument(_))
    ));
}

#[test]
fn checkpoint_cells_on_the_frontier_are_pioneer() {
    let l = lat(96);
    let p = centred_walk(20_000, 120.0, StreamKey::new(5)).unwrap();
    let pio = pioneer_cells(&p, 40, l).unwrap();
    let pts = p.points();
    for end in checkpoint_indices(pts.len(), 40) {
        let prefix = PlanarPath::new(pts[..=end.max(1)].to_vec(), 1.0).unwrap();
        let front = frontier_cells(&mask_of(&prefix, l));
        let tip = (pts[end].x.round() as i64, pts[end].y.round() as i64);
        if front.contains(tip) {
            assert!(pio.contains(tip));
        }
    }
}

#[test]
fn box_counts_of_simple_sets() {
    let l = lat(64);
    let one = CellSet::new(&l, [(-64, 64)]).unwrap();
    let t = box_count(&one, &dyadic_sizes(64)).unwrap();
    assert_eq!(t.counts, vec![1; 7]);

    let block = CellSet::new(&l, (-64..0).flat_map(|i| (-64..0).map(move |j| (i, j)))).unwrap();
    let t = box_count(&block, &dyadic_sizes(64)).unwrap();
    for (s, c) in t.box_sizes.iter().zip(&t.counts) {
        assert_eq!(*c, (64 / s) * (64 / s));
    }
    assert!(box_count(&block, &[3]).is_err());
    assert!(box_count(&block, &[128]).is_err());
    assert!(CellSet::new(&l, [(65, 0)]).is_err());
}

#[test]
fn line_and_block_dimensions() {
    let l = lat(1024);
    let line = CellSet::new(&l, (-1024..=1024).map(|i| (i, 3))).unwrap();
    let fit = fit_dimension(&box_count(&line, &dyadic_sizes(1024)).unwrap(), 2).unwrap();
    assert!((fit.dimension - 1.0).abs() < 0.05, "{fit:?}");
    assert_eq!(fit.window, (4, 256));

    let block = CellSet::new(
        &l,
        (-512..512).flat_map(|i| (-512..512).map(move |j| (i, j))),
    )
    .unwrap();
    let fit = fit_dimension(&box_count(&block, &dyadic_sizes(1024)).unwrap(), 2).unwrap();
    assert!((fit.dimension - 2.0).abs() < 0.02, "{fit:?}");
}

#[test]
fn fit_needs_four_scales() {
    let t = BoxCountTable {
        box_sizes: vec![1, 2, 4, 8, 16, 32, 64],
        counts: vec![4096, 1024, 256, 64, 16, 4, 1],
    };
    assert!((fit_dimension(&t, 1).unwrap().dimension - 2.0).abs() < 1e-12);
    assert!(matches!(
        fit_dimension(&t, 2),
        Err(FractalError::TooFewScales { needed: 4, got: 3 })
    ));
    assert!(fit_dimension_window(&t, 4, 4).is_err());
}

#[test]
fn exports() {
    let l = lat(8);
    let c = CellSet::new(&l, [(2, 1), (-3, 0), (2, 2)]).unwrap();
    assert_eq!(c.to_csv(), "# cell_size=1,extent=8\ni,j\n-3,0\n2,1\n2,2\n");
    let t = box_count(&c, &[1, 4]).unwrap();
    assert_eq!(t.to_csv(), "box_size,count\n1,3\n4,2\n");
    let t = BoxCountTable {
        box_sizes: vec![1, 2, 4, 8],
        counts: vec![64, 16, 4, 1],
    };
    let j = fit_dimension(&t, 0).unwrap().summary_json();
    assert_eq!(j["window"], serde_json::json!([1, 8]));
    assert!((j["dimension"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(j.as_object().unwrap().len(), 3);
}

#[test]
fn walk_is_centred_and_scaled() {
    let p = centred_walk(10_000, 300.0, StreamKey::new(3)).unwrap();
    let pts = p.points();
    let (lo_x, hi_x) = pts
        .iter()
        .fold((f64::MAX, f64::MIN), |a, q| (a.0.min(q.x), a.1.max(q.x)));
    let (lo_y, hi_y) = pts
        .iter()
        .fold((f64::MAX, f64::MIN), |a, q| (a.0.min(q.y), a.1.max(q.y)));
    let span = (hi_x - lo_x).max(hi_y - lo_y);
    assert!((span - 300.0).abs() < 1e-9);
    assert!((lo_x + hi_x).abs() < 1e-9 && (lo_y + hi_y).abs() < 1e-9);
    assert_eq!(p, centred_walk(10_000, 300.0, StreamKey::new(3)).unwrap());
}

#[test]
fn brownian_frontier_dimension_and_window_stability() {
    let params = FractalParams::default();
    let run = dimension_run(FractalSet::Frontier, &params, StreamKey::new(2)).unwrap();
    assert!(
        (run.fit.dimension - 4.0 / 3.0).abs() < 0.15,
        "{:?}",
        run.fit
    );
    let n = run.table.box_sizes.len();
    let len = n - 4;
    let base = fit_dimension_window(&run.table, 2, len).unwrap().dimension;
    for start in [1, 3] {
        let shifted = fit_dimension_window(&run.table, start, len)
            .unwrap()
            .dimension;
        assert!(
            (shifted - base).abs() < 0.1,
            "start {start}: {shifted} vs {base}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn box_count_matches_hash_oracle(seed in any::<u64>(), count in 1usize..400) {
        let l = lat(40);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cells = random_cells(&l, count, &mut rng);
        let sizes = dyadic_sizes(40);
        let t = box_count(&cells, &sizes).unwrap();
        for (s, c) in sizes.iter().zip(&t.counts) {
            let s = *s as i64;
            let boxes: HashSet<(i64, i64)> =
                cells.cells().iter().map(|&(i, j)| ((i + 40).div_euclid(s), (j + 40).div_euclid(s))).collect();
            prop_assert_eq!(*c, boxes.len());
        }
        for w in t.counts.windows(2) {
            prop_assert!(w[1] <= w[0] && w[0] <= 4 * w[1] && w[1] >= 1);
        }
    }

    #[test]
    fn frontier_cells_touch_the_outside(seed in any::<u64>(), steps in 50usize..3000) {
        let l = lat(48);
        let p = centred_walk(steps, 60.0, StreamKey::new(seed)).unwrap();
        let m = mask_of(&p, l);
        let labels = flood_outside(&m);
        let f = frontier_cells(&m);
        prop_assert!(!f.is_empty());
        for &(i, j) in f.cells() {
            let c = l.index(i, j).unwrap();
            prop_assert!(m.is_occupied(c));
            prop_assert!(l.neighbors(c).iter().any(|&(s, _)| labels.site(s) == Region::Outside));
        }
    }
}
