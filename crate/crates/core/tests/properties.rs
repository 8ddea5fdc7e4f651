mod common;

use causalsig::graph_export::{export_edges, Timescale};
use causalsig::modal::{aligned_distance, FeatureSource, ModalFeatures, C64};
use causalsig::reachability::{reachability_landscape, reachability_landscape_with, NormMode, ReachOptions};
use causalsig::simgen::{simulate, SimConfig};
use causalsig::{ContinuousModel, ModelParams, Recording, RegionPartition};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn zero_diagonal(mut m: DMatrix<f64>) -> DMatrix<f64> {
    m.fill_diagonal(0.0);
    m
}

fn features_from(seed: u64, count: usize, dim: usize) -> ModalFeatures {
    common::random_features(count, dim, &mut common::rng(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn discretize_inverts_exactly(
        (f_s, f_f, g_s, g_f) in (1usize..5, 1usize..4).prop_flat_map(|(m, n)| (matrix(m, m), matrix(m, m), matrix(m, n), matrix(m, n))),
        tau in 1e-3f64..0.5,
        slow in 0.01f64..2.0,
    ) {
        let dt = tau + slow;
        let cm = ContinuousModel::new(f_s, zero_diagonal(f_f), g_s, g_f, tau, dt).unwrap();
        let back = ContinuousModel::from_params(&cm.discretize().unwrap(), tau).unwrap();
        let scale = |m: &DMatrix<f64>| m.amax().max(1.0);
        prop_assert!((&back.f_f - &cm.f_f).amax() <= 1e-13 * scale(&cm.f_f));
        prop_assert!((&back.g_f - &cm.g_f).amax() <= 1e-13 * scale(&cm.g_f));
        prop_assert!((&back.g_s - &cm.g_s).amax() <= 1e-13 * scale(&cm.g_s));
        // A = I + (dt - tau) F_s loses bits of F_s below |1| / (dt - tau).
        prop_assert!((&back.f_s - &cm.f_s).amax() <= 1e-13 * scale(&cm.f_s) / slow);
    }

    #[test]
    fn discretize_is_affine(
        (f1, f2) in (1usize..4).prop_flat_map(|m| (matrix(m, m), matrix(m, m))),
        alpha in -2.0f64..2.0,
    ) {
        let m = f1.nrows();
        let z = DMatrix::zeros(m, 1);
        let build = |f: &DMatrix<f64>| {
            ContinuousModel::new(f.clone(), zero_diagonal(f.clone()), z.clone(), z.clone(), 0.1, 0.72)
                .unwrap()
                .discretize()
                .unwrap()
        };
        let (p1, p2) = (build(&f1), build(&f2));
        let mixed = build(&(&f1 * alpha + &f2 * (1.0 - alpha)));
        let expect_q = p1.q() * alpha + p2.q() * (1.0 - alpha);
        let expect_a = p1.a() * alpha + p2.a() * (1.0 - alpha);
        prop_assert!((mixed.q() - expect_q).amax() < 1e-12);
        prop_assert!((mixed.a() - expect_a).amax() < 1e-12);
    }

    #[test]
    fn downsample_composes(a in 1usize..5, b in 1usize..5, reps in 2usize..6, rows in 2usize..4) {
        let t = a * b * reps;
        let data = DMatrix::from_fn(rows, t, |i, j| (i * 1000 + j) as f64);
        let rec = Recording::new(data, 0.72, "s", "t", "c").unwrap();
        let once = rec.downsample(a * b).unwrap();
        let twice = rec.downsample(a).unwrap().downsample(b).unwrap();
        prop_assert_eq!(once.data(), twice.data());
        prop_assert!((once.dt() - twice.dt()).abs() <= 1e-15 * once.dt());
    }

    #[test]
    fn split_partitions_rows(p in 2usize..30, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let mut order: Vec<usize> = (0..p).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let n = 1 + (seed as usize % (p - 1));
        let inputs = order[..n].to_vec();
        let part = RegionPartition::from_inputs(p, inputs.clone()).unwrap();
        let data = DMatrix::from_fn(p, 7, |i, j| (i * 10 + j) as f64);
        let rec = Recording::new(data.clone(), 1.0, "s", "t", "c").unwrap();
        let (x, u) = part.split(&rec).unwrap();
        prop_assert_eq!(x.nrows() + u.nrows(), p);
        let mut seen = vec![0usize; p];
        for row in x.row_iter().chain(u.row_iter()) {
            let region = (row[0] / 10.0) as usize;
            seen[region] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        for (k, &i) in inputs.iter().enumerate() {
            prop_assert_eq!(u.row(k), data.row(i));
        }
        prop_assert_eq!(part.merge(&x, &u).unwrap(), data);
    }

    #[test]
    fn distance_is_symmetric_and_bounded(seed in any::<u64>(), count in 1usize..8, dim in 1usize..6) {
        let f1 = features_from(seed, count, dim);
        let f2 = features_from(seed ^ 0x9e37, count, dim);
        let d12 = aligned_distance(&f1, &f2).unwrap();
        let d21 = aligned_distance(&f2, &f1).unwrap();
        prop_assert!((d12 - d21).abs() <= 1e-12);
        prop_assert!(d12 >= 0.0 && d12 <= count as f64);
        prop_assert!(aligned_distance(&f1, &f1).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn distance_ignores_gauge_and_order(
        seed in any::<u64>(),
        count in 1usize..7,
        dim in 1usize..6,
        mags in prop::collection::vec(1e-3f64..1e3, 7),
        phases in prop::collection::vec(0.0f64..std::f64::consts::TAU, 7),
    ) {
        let f1 = features_from(seed, count, dim);
        let f2 = features_from(seed.wrapping_add(1), count, dim);
        let mut vectors: Vec<_> = f2
            .vectors()
            .iter()
            .enumerate()
            .map(|(k, v)| v * C64::from_polar(mags[k], phases[k]))
            .collect();
        vectors.reverse();
        let mut values = f2.eigenvalues().to_vec();
        values.reverse();
        let regauged = ModalFeatures::new(vectors, values, FeatureSource::SlowOnly).unwrap();
        let d = aligned_distance(&f1, &f2).unwrap();
        prop_assert!((aligned_distance(&f1, &regauged).unwrap() - d).abs() <= 1e-9);
    }

    #[test]
    fn landscape_scales_with_inputs(seed in 0u64..1000, c in 0.01f64..50.0, horizon in 1usize..12) {
        let params = common::random_system(4, 2, 0.8, seed);
        let scaled = params.with_scaled_inputs(c).unwrap();
        for mode in [NormMode::Energy2, NormMode::BoxInf] {
            let base = reachability_landscape(&params, horizon, mode).unwrap();
            let big = reachability_landscape(&scaled, horizon, mode).unwrap();
            for (v, w) in base.values.iter().zip(&big.values) {
                prop_assert!((w - c * v).abs() <= 1e-10 * (c * v).abs().max(1.0));
            }
        }
    }

    #[test]
    fn box_dominates_energy(seed in 0u64..1000, horizon in 1usize..10, bounded in any::<bool>()) {
        let params = common::random_system(5, 2, 0.9, seed);
        let mut opts = ReachOptions::new(horizon, NormMode::Energy2);
        if bounded {
            opts.terminal_input = causalsig::reachability::TerminalInput::Bounded;
        }
        let energy = reachability_landscape_with(&params, &opts).unwrap();
        opts.mode = NormMode::BoxInf;
        let boxed = reachability_landscape_with(&params, &opts).unwrap();
        for (e, b) in energy.values.iter().zip(&boxed.values) {
            prop_assert!(*b >= *e - 1e-12);
        }
    }

    #[test]
    fn energy_grows_with_horizon_for_identity_dynamics(
        (b1, b2) in (1usize..5, 1usize..3).prop_flat_map(|(m, n)| (matrix(m, n), matrix(m, n))),
        horizon in 1usize..15,
    ) {
        let m = b1.nrows();
        let params = ModelParams::new(DMatrix::zeros(m, m), DMatrix::identity(m, m), b1, b2, 0.0, 1.0).unwrap();
        let short = reachability_landscape(&params, horizon, NormMode::Energy2).unwrap();
        let long = reachability_landscape(&params, horizon + 1, NormMode::Energy2).unwrap();
        for (s, l) in short.values.iter().zip(&long.values) {
            prop_assert!(*l >= *s - 1e-12);
        }
    }

    #[test]
    fn edges_keep_sign_and_order(a in matrix(4, 4), q in matrix(4, 4)) {
        let params = ModelParams::new(zero_diagonal(q), a, DMatrix::zeros(4, 1), DMatrix::zeros(4, 1), 0.0, 1.0).unwrap();
        let list = export_edges(&params, 0.0, None);
        for e in &list.edges {
            let raw = match e.timescale {
                Timescale::Fast => params.q()[(e.target, e.source)],
                Timescale::Slow => params.a()[(e.target, e.source)],
            };
            prop_assert_eq!(raw.signum(), e.weight.signum());
            prop_assert!(e.weight.abs() <= 1.0);
        }
        for ts in [Timescale::Fast, Timescale::Slow] {
            let w: Vec<f64> = list.edges.iter().filter(|e| e.timescale == ts).map(|e| e.weight.abs()).collect();
            prop_assert!(w.windows(2).all(|p| p[0] >= p[1]));
        }
    }

    #[test]
    fn simulation_is_reproducible(seed in any::<u64>()) {
        let params = common::random_system(3, 2, 0.9, seed);
        let mut cfg = SimConfig::new(3, 2, 50, seed);
        cfg.noise_sigma = 0.1;
        let a = simulate(&params, &cfg).unwrap();
        let b = simulate(&params, &cfg).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }
}
