mod oracles;

use proptest::prelude::*;
use rand::Rng;
use riskgrid_core::autocorr::{global_moran, local_moran, local_moran_permutation, moran_permutation_test, Alternative};
use riskgrid_core::rng::stream;
use riskgrid_core::weights::{knn_neighbors, row_standardize, spatial_lag, spectrum};
use riskgrid_core::{Point, SpatialWeights};

fn scattered(seed: u64, n: usize) -> Vec<Point> {
    let mut r = stream(seed, 1);
    (0..n).map(|_| Point::new(r.random_range(0.0..10_000.0), r.random_range(0.0..10_000.0))).collect()
}

fn knn_w(points: &[Point], k: usize) -> SpatialWeights {
    row_standardize(&knn_neighbors(points, k).unwrap())
}

fn values(seed: u64, n: usize) -> Vec<f64> {
    oracles::normals(&mut stream(seed, 2), n)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn lag_matches_dense_product() {
    let pts = scattered(1, 150);
    let w = knn_w(&pts, 6);
    let x = values(4, 150);
    let dense = oracles::dense_lag(&w.to_dense(), &x);
    for (a, b) in w.lag(&x).unwrap().iter().zip(&dense) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn spectrum_log_det_matches_lu() {
    for (seed, n, k) in [(3u64, 120usize, 4usize), (9, 225, 8), (17, 60, 3)] {
        let w = knn_w(&scattered(seed, n), k);
        let spec = spectrum(&w).unwrap();
        let (lo, hi) = spec.admissible_interval();
        let dense = w.to_dense();
        for step in 1..25 {
            let rho = lo + (hi - lo) * step as f64 / 25.0;
            let a = spec.log_det(rho);
            let b = oracles::lu_log_det(&dense, rho);
            assert!(a.is_finite());
            assert!((a - b).abs() < 1e-8, "n {n} rho {rho}: {a} vs {b}");
        }
    }
}

#[test]
fn full_lattice_interior_neighborhoods_are_mutual_queen() {
    let side = 9;
    let g = knn_neighbors(&oracles::lattice(side), 8).unwrap();
    let interior = |i: usize| (1..side - 1).contains(&(i % side)) && (1..side - 1).contains(&(i / side));
    for i in (0..side * side).filter(|&i| interior(i)) {
        let (c, r) = ((i % side) as i64, (i / side) as i64);
        let mut queen: Vec<usize> = (-1..=1)
            .flat_map(|dr| (-1..=1).map(move |dc| (dc, dr)))
            .filter(|&d| d != (0, 0))
            .map(|(dc, dr)| ((r + dr) * side as i64 + c + dc) as usize)
            .collect();
        queen.sort();
        let mut got = g.neighbors(i).to_vec();
        got.sort();
        assert_eq!(got, queen);
        for &j in got.iter().filter(|&&j| interior(j)) {
            assert!(g.neighbors(j).contains(&i));
        }
    }
}

#[test]
fn permutation_p_is_deterministic_across_thread_counts() {
    let pts = scattered(21, 200);
    let w = knn_w(&pts, 5);
    let y = values(22, 200);
    let one = in_pool(1, || moran_permutation_test(&y, &w, 499, 77, Alternative::Greater).unwrap());
    let four = in_pool(4, || moran_permutation_test(&y, &w, 499, 77, Alternative::Greater).unwrap());
    assert_eq!(one.pseudo_p, four.pseudo_p);
    assert_eq!(one.simulated, four.simulated);
    let l1 = in_pool(1, || local_moran_permutation(&y, &w, 199, 5).unwrap());
    let l4 = in_pool(4, || local_moran_permutation(&y, &w, 199, 5).unwrap());
    assert_eq!(l1.p_value, l4.p_value);
}

#[test]
fn permutation_null_is_calibrated() {
    let pts = scattered(31, 100);
    let w = knn_w(&pts, 6);
    let reps = 500;
    let p: Vec<f64> = (0..reps)
        .map(|r| {
            let y = values(1000 + r, 100);
            moran_permutation_test(&y, &w, 199, r, Alternative::Greater).unwrap().pseudo_p
        })
        .collect();
    for q in [0.05, 0.10] {
        let frac = p.iter().filter(|&&v| v <= q).count() as f64 / reps as f64;
        assert!(frac <= q + 0.03, "P(p <= {q}) = {frac}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn row_standardized_rows_sum_to_one(seed in 0u64..10_000, n in 10usize..120, k in 1usize..9) {
        let w = knn_w(&scattered(seed, n), k.min(n - 1));
        for i in 0..n {
            prop_assert!((w.row_sum(i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lag_is_linear(seed in 0u64..10_000, a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let w = knn_w(&scattered(seed, 80), 5);
        let x = values(seed, 80);
        let z = values(seed + 1, 80);
        let combo: Vec<f64> = x.iter().zip(&z).map(|(u, v)| a * u + b * v).collect();
        let lhs = spatial_lag(&w, &combo).unwrap();
        let (lx, lz) = (spatial_lag(&w, &x).unwrap(), spatial_lag(&w, &z).unwrap());
        for i in 0..80 {
            prop_assert!((lhs[i] - (a * lx[i] + b * lz[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn local_moran_sums_to_n_times_global(seed in 0u64..10_000, n in 8usize..150, k in 1usize..7) {
        let w = knn_w(&scattered(seed, n), k.min(n - 1));
        let y = values(seed, n);
        let total: f64 = local_moran(&y, &w).unwrap().local_i.iter().sum();
        let g = global_moran(&y, &w).unwrap();
        prop_assert!((total - n as f64 * g).abs() < 1e-10 * (n as f64).max(total.abs()));
    }

    #[test]
    fn global_moran_is_location_scale_invariant(seed in 0u64..10_000, a in prop_oneof![-20.0f64..-0.05, 0.05f64..20.0], b in -100.0f64..100.0) {
        let w = knn_w(&scattered(seed, 60), 4);
        let y = values(seed, 60);
        let t: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        prop_assert!((global_moran(&y, &w).unwrap() - global_moran(&t, &w).unwrap()).abs() < 1e-12);
    }
}
