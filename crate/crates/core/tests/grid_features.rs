mod oracles;

use proptest::prelude::*;
use riskgrid_core::geometry::{Point, Polygon, Ring};
use riskgrid_core::grid::{aggregate_points, build_fishnet, euclidean_nearest_distance, nn_average_distance};
use riskgrid_core::rng::stream;
use riskgrid_core::{Boundary, PointLayer};

/// L-shaped study area: a 5 km square with the upper-right 2.3 km quadrant removed.
fn l_shape(dx: f64, dy: f64) -> Boundary {
    let pts = [(0.0, 0.0), (5000.0, 0.0), (5000.0, 2700.0), (2700.0, 2700.0), (2700.0, 5000.0), (0.0, 5000.0), (0.0, 0.0)];
    let ring = Ring::new(pts.iter().map(|&(x, y)| Point::new(x + dx, y + dy)).collect()).unwrap();
    Boundary::new(vec![Polygon::new(ring, vec![])]).unwrap()
}

fn layer(seed: u64, n: usize, lo: f64, hi: f64) -> PointLayer {
    use rand::Rng;
    let mut r = stream(seed, 3);
    let pts = (0..n).map(|_| Point::new(r.random_range(lo..hi), r.random_range(lo..hi))).collect();
    PointLayer::new("shops", pts).unwrap()
}

#[test]
fn coverage_matches_monte_carlo() {
    let b = l_shape(0.0, 0.0);
    let net = build_fishnet(&b, 700.0).unwrap();
    let mut r = stream(11, 0);
    for cell in &net.cells {
        let mc = oracles::mc_coverage(&b, &net.cell_rect(cell), 20_000, &mut r);
        assert!((mc - cell.coverage).abs() < 0.02, "cell {}: {} vs mc {mc}", cell.id, cell.coverage);
    }
    let total: f64 = net.cells.iter().map(|c| c.coverage).sum::<f64>() * 700.0 * 700.0;
    assert!((total - b.area()).abs() < 1e-6 * b.area());
}

#[test]
fn counts_and_distances_match_brute_force() {
    let b = l_shape(0.0, 0.0);
    let net = build_fishnet(&b, 500.0).unwrap();
    let shops = layer(5, 300, -200.0, 5200.0);
    let rects: Vec<_> = net.cells.iter().map(|c| net.cell_rect(c)).collect();
    assert_eq!(aggregate_points(&net, &shops).counts, oracles::brute_force_counts(&rects, &shops.points));
    for k in [1, 3, 7] {
        let nn = nn_average_distance(&net, &shops, k).unwrap();
        for (cell, d) in net.cells.iter().zip(&nn) {
            let want = oracles::brute_force_knn_mean(cell.centroid, &shops.points, k);
            assert!((d - want).abs() <= 1e-9 * want.max(1.0));
        }
    }
    let ed = euclidean_nearest_distance(&net, &shops).unwrap();
    for (cell, d) in net.cells.iter().zip(&ed) {
        assert_eq!(*d, oracles::brute_force_knn_mean(cell.centroid, &shops.points, 1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn counts_plus_dropped_is_layer_size(seed in 0u64..10_000, n in 1usize..400, size in 300.0f64..1500.0) {
        let net = build_fishnet(&l_shape(0.0, 0.0), size).unwrap();
        let shops = layer(seed, n, -1000.0, 6000.0);
        let c = aggregate_points(&net, &shops);
        prop_assert_eq!(c.counts.iter().sum::<u64>() as usize + c.dropped, n);
    }

    #[test]
    fn nearest_is_at_most_knn_mean(seed in 0u64..10_000, n in 8usize..120, k in 1usize..8) {
        let net = build_fishnet(&l_shape(0.0, 0.0), 800.0).unwrap();
        let shops = layer(seed, n, 0.0, 5000.0);
        let ed = euclidean_nearest_distance(&net, &shops).unwrap();
        let nn = nn_average_distance(&net, &shops, k).unwrap();
        for (e, m) in ed.iter().zip(&nn) {
            prop_assert!(e <= m);
        }
    }

    #[test]
    fn cell_count_invariant_under_translation(dx in -1e6f64..1e6, dy in -1e6f64..1e6, size in 250.0f64..2000.0) {
        let a = build_fishnet(&l_shape(0.0, 0.0), size).unwrap();
        let b = build_fishnet(&l_shape(dx.round(), dy.round()), size).unwrap();
        prop_assert_eq!(a.len(), b.len());
        prop_assert_eq!((a.n_cols, a.n_rows), (b.n_cols, b.n_rows));
    }
}
