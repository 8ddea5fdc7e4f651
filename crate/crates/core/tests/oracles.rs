mod common;

use causalsig::assignment;
use causalsig::fingerprint::{evaluate_fitted, fit_recordings, identify, FitConfig, RecordingKey, ReferenceDB};
use causalsig::modal::{aligned_distance, cost_matrix, eigenmodes, modal_features, FeatureSource, C64};
use causalsig::reachability::{reachability_landscape, to_evolution_form, NormMode};
use causalsig::simgen::{simulate, simulate_inputs, SimConfig};
use causalsig::sysid::{fit, fit_with, residual_fro, FitOptions};
use causalsig::{ModelParams, Recording, RegionPartition};
use nalgebra::{DMatrix, DVector};

#[test]
fn residual_matches_loop_oracle() {
    let mut rng = common::rng(11);
    let (m, n, t) = (3, 2, 20);
    let data = common::normal_matrix(m + n, t, &mut rng);
    let (x, u) = (data.rows(0, m).into_owned(), data.rows(m, n).into_owned());
    let mut q = common::normal_matrix(m, m, &mut rng) * 0.3;
    q.fill_diagonal(0.0);
    let params = ModelParams::new(
        q,
        common::normal_matrix(m, m, &mut rng),
        common::normal_matrix(m, n, &mut rng),
        common::normal_matrix(m, n, &mut rng),
        0.0,
        1.0,
    )
    .unwrap();

    let mut total = 0.0;
    for k in 1..t {
        for i in 0..m {
            let mut pred = 0.0;
            for j in 0..m {
                pred += params.q()[(i, j)] * x[(j, k)] + params.a()[(i, j)] * x[(j, k - 1)];
            }
            for j in 0..n {
                pred += params.b1()[(i, j)] * u[(j, k)] + params.b2()[(i, j)] * u[(j, k - 1)];
            }
            total += (x[(i, k)] - pred).powi(2);
        }
    }
    let expected = total.sqrt();
    let got = residual_fro(&params, &x, &u).unwrap();
    assert!((got - expected).abs() <= 1e-12 * expected, "{got} vs {expected}");
}

/// Each row solved alone through the normal equations of its own design.
#[test]
fn rows_match_independent_normal_equations() {
    let mut rng = common::rng(12);
    let (m, n, t) = (4, 2, 60);
    let x = common::normal_matrix(m, t, &mut rng);
    let u = common::normal_matrix(n, t, &mut rng);
    let lambda = 0.7;
    let params = fit(&x, &u, lambda).unwrap().params;
    for i in 0..m {
        let mut cols: Vec<DVector<f64>> = Vec::new();
        let mut owners = Vec::new();
        for j in 0..m {
            if j != i {
                cols.push(x.row(j).columns(1, t - 1).transpose());
                owners.push(("q", j));
            }
        }
        for j in 0..m {
            cols.push(x.row(j).columns(0, t - 1).transpose());
            owners.push(("a", j));
        }
        for j in 0..n {
            cols.push(u.row(j).columns(1, t - 1).transpose());
            owners.push(("b1", j));
        }
        for j in 0..n {
            cols.push(u.row(j).columns(0, t - 1).transpose());
            owners.push(("b2", j));
        }
        let design = DMatrix::from_columns(&cols);
        let y = x.row(i).columns(1, t - 1).transpose();
        let gram = design.transpose() * &design + DMatrix::identity(cols.len(), cols.len()) * lambda;
        let beta = gram.cholesky().unwrap().solve(&(design.transpose() * y));
        for (k, (block, j)) in owners.iter().enumerate() {
            let got = match *block {
                "q" => params.q()[(i, *j)],
                "a" => params.a()[(i, *j)],
                "b1" => params.b1()[(i, *j)],
                _ => params.b2()[(i, *j)],
            };
            assert!((got - beta[k]).abs() < 1e-10, "row {i} {block}{j}: {got} vs {}", beta[k]);
        }
        assert_eq!(params.q()[(i, i)], 0.0);
    }
}

/// Lag-only systems have a full-rank design, so noiseless data pin them down.
#[test]
fn noiseless_fit_recovers_lag_only_parameters() {
    let (m, n) = (4, 2);
    let mut rng = common::rng(3);
    let a = common::normal_matrix(m, m, &mut rng);
    let a = &a * (0.9 / causalsig::reachability::spectral_radius(&a));
    let truth = ModelParams::with_structure(
        DMatrix::zeros(m, m),
        a,
        DMatrix::zeros(m, n),
        common::normal_matrix(m, n, &mut rng),
        0.0,
        0.72,
        causalsig::ModelStructure::SingleTimescale,
    )
    .unwrap();
    let cfg = SimConfig::new(m, n, 50 * (2 * m + 2 * n), 3);
    let rec = simulate(&truth, &cfg).unwrap();
    let (x, u) = cfg.partition().unwrap().split(&rec).unwrap();
    let opts = FitOptions::ridge(0.0).with_structure(causalsig::ModelStructure::SingleTimescale);
    let got = fit_with(&x, &u, &opts).unwrap();
    assert!(got.condition_warnings.is_empty());
    assert!(common::max_abs_diff(&got.params.signature(), &truth.signature()) < 1e-9);
}

/// With a nonzero `Q`, noiseless `x(k)` is a linear function of
/// `x(k-1), u(k), u(k-1)`: every row loses `m - 1` ranks and any
/// minimizer reproduces the data exactly.
#[test]
fn noiseless_two_timescale_fit_is_flagged_and_exact_in_sample() {
    let (m, n) = (4, 2);
    let truth = common::random_system(m, n, 0.9, 3);
    let cfg = SimConfig::new(m, n, 50 * (2 * m + 2 * n), 3);
    let rec = simulate(&truth, &cfg).unwrap();
    let (x, u) = cfg.partition().unwrap().split(&rec).unwrap();
    let report = fit(&x, &u, 0.0).unwrap();
    assert_eq!(report.condition_warnings, (0..m).collect::<Vec<_>>());
    assert!(report.residual_fro < 1e-8 * x.norm());
    let d = common::normal_matrix(n, 40, &mut common::rng(4));
    let replay = simulate_inputs(&report.params, &d).unwrap();
    let expected = simulate_inputs(&truth, &d).unwrap();
    assert!(common::max_abs_diff(&replay, &expected) < 1e-6 * expected.amax());
}

#[test]
fn regularization_cannot_reduce_residual() {
    for seed in 0..10 {
        let mut rng = common::rng(100 + seed);
        let x = common::normal_matrix(5, 40, &mut rng);
        let u = common::normal_matrix(2, 40, &mut rng);
        let free = fit(&x, &u, 0.0).unwrap().residual_fro;
        let shrunk = fit(&x, &u, 10.0).unwrap().residual_fro;
        assert!(free <= shrunk + 1e-12);
    }
}

#[test]
fn assignment_matches_all_permutations_for_five() {
    let mut rng = common::rng(13);
    for _ in 0..50 {
        let f1 = common::random_features(5, 4, &mut rng);
        let f2 = common::random_features(5, 4, &mut rng);
        let mut cost = DMatrix::zeros(5, 5);
        for i in 0..5 {
            for j in 0..5 {
                cost[(i, j)] = 1.0 - common::loop_similarity(&f1.vectors()[i], &f2.vectors()[j]);
            }
        }
        assert!((cost_matrix(&f1, &f2).unwrap() - &cost).amax() < 1e-14);
        let exhaustive = common::brute_force_assignment(&cost);
        assert!((aligned_distance(&f1, &f2).unwrap() - exhaustive).abs() <= 1e-12);
        assert!((assignment::solve(&cost).unwrap().cost - exhaustive).abs() <= 1e-12);
    }
}

#[test]
fn implicit_and_evolution_forms_agree() {
    let mut rng = common::rng(14);
    for seed in 0..10 {
        let params = common::random_system(5, 2, 0.9, seed);
        let inputs = common::normal_matrix(2, 21, &mut rng);
        let implicit = simulate_inputs(&params, &inputs).unwrap();
        let fixed_point = common::fixed_point_trajectory(&params, &inputs);
        let explicit = to_evolution_form(&params).unwrap().simulate(&inputs);
        assert!(common::max_abs_diff(&implicit, &explicit) < 1e-9);
        assert!(common::max_abs_diff(&fixed_point, &explicit) < 1e-9);
    }
}

#[test]
fn evolution_form_of_hand_example() {
    let q = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.0, 0.0]);
    let p = ModelParams::new(q, DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DMatrix::zeros(2, 1), 0.0, 1.0).unwrap();
    let ev = to_evolution_form(&p).unwrap();
    assert_eq!(ev.a_hat, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]));
}

#[test]
fn eigen_reconstruction() {
    let mut rng = common::rng(15);
    for _ in 0..20 {
        let m = common::normal_matrix(6, 6, &mut rng);
        let modes = eigenmodes(&m).unwrap();
        if modes.condition > 1e8 {
            continue;
        }
        let v = DMatrix::from_columns(&modes.vectors);
        let d = DMatrix::from_diagonal(&DVector::from_vec(modes.values.clone()));
        let rebuilt = &v * d * v.clone().try_inverse().unwrap();
        let mc = m.map(|x| C64::new(x, 0.0));
        assert!((rebuilt - mc).iter().map(|c| c.norm()).fold(0.0, f64::max) < 1e-8);
    }
}

/// Landscape values against projected gradient ascent on the unit ball, with
/// the objective evaluated by simulating the implicit model.
#[test]
fn energy_landscape_matches_ascent() {
    let horizon = 6;
    for seed in 0..5 {
        let params = common::random_system(5, 2, 0.9, 200 + seed);
        let values = reachability_landscape(&params, horizon, NormMode::Energy2).unwrap().values;
        for (region, value) in values.iter().enumerate() {
            let ascent = common::ascent_maximum(&params, region, horizon);
            assert!((ascent - value).abs() < 1e-6, "region {region}: {ascent} vs {value}");
        }
    }
}

#[test]
fn random_features_identify_at_chance() {
    let mut rng = common::rng(16);
    let subjects = 10;
    let trials = 3000;
    let mut hits = 0;
    for trial in 0..trials {
        let mut db = ReferenceDB::new();
        for s in 0..subjects {
            let f = common::random_features(3, 4, &mut rng);
            let p = ModelParams::new(DMatrix::zeros(4, 4), DMatrix::zeros(4, 4), DMatrix::zeros(4, 1), DMatrix::zeros(4, 1), 0.0, 1.0).unwrap();
            db.insert(RecordingKey::new(format!("s{s:02}"), "rest", format!("{trial}")), p, f).unwrap();
        }
        let query = common::random_features(3, 4, &mut rng);
        if identify(&query, &db, "rest").unwrap().subject_id == "s00" {
            hits += 1;
        }
    }
    let rate = hits as f64 / trials as f64;
    let sd = (0.1f64 * 0.9 / trials as f64).sqrt();
    assert!((rate - 0.1).abs() < 4.0 * sd, "rate {rate}");
}

fn noiseless_recordings(subjects: usize, conditions: &[&str], scale: f64) -> (Vec<Recording>, RegionPartition) {
    let (m, n) = (4, 2);
    let mut recs = Vec::new();
    let mut part = None;
    for s in 0..subjects {
        let truth = common::random_system(m, n, 0.9, 300 + s as u64);
        for (c, cond) in conditions.iter().enumerate() {
            let cfg = SimConfig::new(m, n, 200, 1000 * s as u64 + c as u64);
            let rec = simulate(&truth, &cfg).unwrap();
            let data = rec.data() * scale;
            recs.push(Recording::new(data, rec.dt(), format!("sub-{s}"), "rest", *cond).unwrap());
            part = Some(cfg.partition().unwrap());
        }
    }
    (recs, part.unwrap())
}

#[test]
fn uniform_query_scaling_keeps_identity() {
    let (recs, part) = noiseless_recordings(5, &["a", "b"], 1.0);
    let (scaled, _) = noiseless_recordings(5, &["a", "b"], 37.5);
    let cfg = FitConfig {
        lambda: Some(0.0),
        zscore: false,
        with_single: false,
    };
    let fitted = fit_recordings(&recs, &part, &cfg).unwrap();
    let fitted_scaled = fit_recordings(&scaled, &part, &cfg).unwrap();
    let mut db = ReferenceDB::new();
    for f in fitted.iter().filter(|f| f.key.scan_id == "a") {
        db.insert(f.key.clone(), f.params.clone(), f.features(FeatureSource::SlowOnly).unwrap()).unwrap();
    }
    for (plain, big) in fitted.iter().zip(&fitted_scaled).filter(|(f, _)| f.key.scan_id == "b") {
        let a = identify(&plain.features(FeatureSource::SlowOnly).unwrap(), &db, "rest").unwrap();
        let b = identify(&big.features(FeatureSource::SlowOnly).unwrap(), &db, "rest").unwrap();
        assert_eq!(a.subject_id, plain.key.subject_id);
        assert_eq!(a.subject_id, b.subject_id);
        let fa = modal_features(&plain.params, FeatureSource::SlowOnly).unwrap();
        let fb = modal_features(&big.params, FeatureSource::SlowOnly).unwrap();
        assert!(aligned_distance(&fa, &fb).unwrap() < 1e-9);
    }
}

#[test]
fn four_conditions_give_four_folds_of_three_queries() {
    let conditions = ["rest1_lr", "rest1_rl", "rest2_lr", "rest2_rl"];
    let (recs, part) = noiseless_recordings(3, &conditions, 1.0);
    let cfg = FitConfig {
        lambda: Some(0.0),
        zscore: false,
        with_single: false,
    };
    let fitted = fit_recordings(&recs, &part, &cfg).unwrap();
    let table = evaluate_fitted(&fitted, FeatureSource::SlowOnly, None).unwrap();
    assert_eq!(table.folds.len(), 4);
    for fold in &table.folds {
        assert_eq!(fold.per_query_condition.len(), 3);
        assert!(fold.per_query_condition.iter().all(|q| q.condition != fold.reference_condition));
        assert_eq!(fold.n_queries, 9);
        assert_eq!(fold.accuracy, 1.0);
    }
    assert_eq!(table.to_csv().lines().count(), 5);
}

#[test]
fn fit_is_linear_in_amplitude_without_penalty() {
    let (recs, part) = noiseless_recordings(1, &["a"], 1.0);
    let (x, u) = part.split(&recs[0]).unwrap();
    let base = fit_with(&x, &u, &FitOptions::ridge(0.0)).unwrap().params;
    let big = fit_with(&(&x * 5.0), &(&u * 5.0), &FitOptions::ridge(0.0)).unwrap().params;
    assert!(common::max_abs_diff(&base.signature(), &big.signature()) < 1e-8);
}
