use std::f64::consts::PI;

use brownlab::paths::{
    free_of_downcrossings, has_downcrossing, pair_in_y_class, path_distance, run_to_radius,
    tail_after_radius, y_class_levels, Crossing, PlanarPath, Point2,
};
use brownlab::stats::chi_square_gof;
use brownlab::StreamKey;
use proptest::prelude::*;
use rayon::prelude::*;

fn walk(seed: u64, start: Point2<f64>, radius: f64, step: f64) -> PlanarPath<f64> {
    let mut rng = StreamKey::new(seed).rng();
    run_to_radius(start, radius, step, 10_000_000, &mut rng).unwrap()
}

// Closest approach to the origin through the perpendicular foot, written
// independently of the library's projection.
fn segment_min_norm(a: Point2<f64>, b: Point2<f64>) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len = dx.hypot(dy);
    let mut best = a.norm().min(b.norm());
    if len > 0.0 {
        let t = -(a.x * dx + a.y * dy) / (len * len);
        if (0.0..=1.0).contains(&t) {
            best = best.min((a.x * dy - a.y * dx).abs() / len);
        }
    }
    best
}

fn downcrossing_oracle(p: &PlanarPath<f64>, k: f64, j: f64) -> bool {
    let pts = p.points();
    let Some(i0) = pts.iter().position(|q| q.norm() >= (-k).exp()) else {
        return false;
    };
    let inner = (-j).exp();
    (i0..pts.len()).any(|i| {
        pts[i].norm() <= inner
            || (i + 1 < pts.len() && segment_min_norm(pts[i], pts[i + 1]) <= inner)
    })
}

#[test]
fn exit_angle_is_uniform() {
    let bins = 36;
    let n = 100_000u64;
    let counts = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = walk(
                StreamKey::new(11).child(i).raw(),
                Point2::origin(),
                1.0,
                0.05,
            );
            let a = p.last().arg().rem_euclid(2.0 * PI);
            let mut c = vec![0u64; bins];
            c[((a / (2.0 * PI) * bins as f64) as usize).min(bins - 1)] += 1;
            c
        })
        .reduce(
            || vec![0; bins],
            |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect(),
        );
    let (stat, p) = chi_square_gof(&counts, &vec![1.0 / bins as f64; bins]);
    assert!(p > 0.01, "chi2 {stat} p {p}");
}

#[test]
fn y_class_levels_cover_the_twelfth_grid() {
    let v: Vec<(f64, f64)> = y_class_levels(2).collect();
    assert_eq!(v.len(), 23);
    assert_eq!(v[0], (0.0, 2.0 / 12.0));
    assert!((v[22].0 - 22.0 / 12.0).abs() < 1e-15);
    assert!(v.iter().all(|(k, j)| (j - k - 2.0 / 12.0).abs() < 1e-15));
}

#[test]
fn straight_rays_lie_in_every_y_class() {
    let ray = |a: f64| {
        let pts = (0..=200)
            .map(|i| Point2::polar(i as f64 / 200.0, a))
            .collect();
        PlanarPath::new(pts, 0.005).unwrap()
    };
    let (a, b) = (ray(0.3), ray(2.0));
    assert!((1..=6).all(|m| pair_in_y_class(&a, &b, m)));
    // Doubling back from radius 0.5 to 0.2 is a downcrossing at k = 9/12.
    let mut pts: Vec<Point2<f64>> = (0..=50)
        .map(|i| Point2::new(i as f64 / 100.0, 0.0))
        .collect();
    pts.extend((1..=30).map(|i| Point2::new(0.5 - i as f64 / 100.0, 0.0)));
    pts.extend((1..=80).map(|i| Point2::new(0.2 + i as f64 / 100.0, 0.0)));
    let back = PlanarPath::new(pts, 0.005).unwrap();
    assert!(!pair_in_y_class(&a, &back, 1));
    assert!(pair_in_y_class(&a, &a, 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tail_starts_at_first_entry(seed in 0u64..10_000, m in 0.0f64..1.5) {
        let p = walk(seed, Point2::new(0.9, 0.0), 3.0, 0.02);
        let scan = p.points().iter().position(|q| q.norm() <= (-m).exp());
        match tail_after_radius(&p, m).unwrap() {
            Crossing::Found(t) => {
                prop_assert_eq!(Some(t.start_index), scan);
                prop_assert_eq!(t.points().len(), p.len() - t.start_index);
            }
            Crossing::NoCrossing => prop_assert_eq!(scan, None),
        }
    }

    #[test]
    fn downcrossing_matches_segment_scan(seed in 0u64..10_000, k in 0.0f64..1.0, depth in 0.01f64..1.0) {
        let p = walk(seed, Point2::origin(), 1.0, 0.01);
        prop_assert_eq!(has_downcrossing(&p, k, k + depth).unwrap(), downcrossing_oracle(&p, k, k + depth));
    }

    #[test]
    fn y_class_is_the_conjunction_of_levels(seed in 0u64..10_000, m in 1u32..4) {
        let a = walk(seed, Point2::origin(), 1.0, 0.01);
        let b = walk(seed + 50_000, Point2::origin(), 1.0, 0.01);
        let free = |p: &PlanarPath<f64>| y_class_levels::<f64>(m).all(|(k, j)| !has_downcrossing(p, k, j).unwrap());
        prop_assert_eq!(free_of_downcrossings(&a, m), free(&a));
        prop_assert_eq!(pair_in_y_class(&a, &b, m), free(&a) && free(&b));
        prop_assert!(!pair_in_y_class(&a, &b, 0));
    }

    #[test]
    fn y_classes_shrink_with_m(seed in 0u64..10_000) {
        // The checked scales widen with m but the depth grows, so only the
        // levels common to both can be compared; check monotonicity in depth.
        let p = walk(seed, Point2::origin(), 1.0, 0.01);
        for k in [0.0, 0.25, 0.5] {
            let shallow = has_downcrossing(&p, k, k + 0.1).unwrap();
            let deep = has_downcrossing(&p, k, k + 0.4).unwrap();
            prop_assert!(!deep || shallow);
        }
    }

    #[test]
    fn rescale_round_trips_and_scales_distances(seed in 0u64..10_000, c in 0.1f64..10.0) {
        let a = walk(seed, Point2::origin(), 1.0, 0.05);
        let b = walk(seed + 1, Point2::origin(), 1.0, 0.05);
        let back = a.rescale(c).unwrap().rescale(1.0 / c).unwrap();
        for (p, q) in a.points().iter().zip(back.points()) {
            prop_assert!(p.dist(*q) <= 1e-12 * (1.0 + p.norm()));
        }
        prop_assert!((back.step_size() - a.step_size()).abs() < 1e-15);
        let d = path_distance(&a, &b);
        let dc = path_distance(&a.rescale(c).unwrap(), &b.rescale(c).unwrap());
        prop_assert!((dc - c * d).abs() <= 1e-12 * (1.0 + c * d));
        prop_assert!(a.rescale(-c).is_err());
    }

    #[test]
    fn frechet_is_a_metric_on_walks(seed in 0u64..10_000, vx in -1.0f64..1.0, vy in -1.0f64..1.0) {
        let a = walk(seed, Point2::origin(), 1.0, 0.05);
        let b = walk(seed + 1, Point2::origin(), 1.0, 0.05);
        let c = walk(seed + 2, Point2::origin(), 1.0, 0.05);
        prop_assert_eq!(path_distance(&a, &a), 0.0);
        prop_assert_eq!(path_distance(&a, &b), path_distance(&b, &a));
        prop_assert!(path_distance(&a, &c) <= path_distance(&a, &b) + path_distance(&b, &c) + 1e-12);
        let v = Point2::new(vx, vy);
        let shifted = PlanarPath::new(a.points().iter().map(|&p| p + v).collect(), 0.05).unwrap();
        prop_assert!(path_distance(&a, &shifted) <= v.norm() + 1e-12);
    }

    #[test]
    fn frechet_matches_memoized_recursion(
        xs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..7),
        ys in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..7),
    ) {
        let pa: Vec<Point2<f64>> = xs.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        let pb: Vec<Point2<f64>> = ys.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        fn rec(a: &[Point2<f64>], b: &[Point2<f64>], i: usize, j: usize, memo: &mut Vec<Vec<Option<f64>>>) -> f64 {
            if let Some(v) = memo[i][j] {
                return v;
            }
            let d = a[i].dist(b[j]);
            let v = match (i, j) {
                (0, 0) => d,
                (0, _) => rec(a, b, 0, j - 1, memo).max(d),
                (_, 0) => rec(a, b, i - 1, 0, memo).max(d),
                _ => rec(a, b, i - 1, j, memo)
                    .min(rec(a, b, i - 1, j - 1, memo))
                    .min(rec(a, b, i, j - 1, memo))
                    .max(d),
            };
            memo[i][j] = Some(v);
            v
        }
        let mut memo = vec![vec![None; pb.len()]; pa.len()];
        let want = rec(&pa, &pb, pa.len() - 1, pb.len() - 1, &mut memo);
        let got = path_distance(&PlanarPath::new(pa, 1.0).unwrap(), &PlanarPath::new(pb, 1.0).unwrap());
        prop_assert_eq!(got, want);
    }
}
