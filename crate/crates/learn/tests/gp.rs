use std::f64::consts::PI;
use std::sync::Arc;

use nailforce_learn::gp::{
    exact_log_likelihood, fit_exact, fit_fitc, fitc_log_likelihood, se_kernel, sq_distances, sq_distances_self, GpConfig,
    GpHyperparams, GpMode, GpModel, Inputs, KernelDistance, MultiGp, MultiGpConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Log likelihood from an explicit inverse and LU determinant of the covariance.
fn dense_log_likelihood(rows: &[Vec<f64>], y: &[f64], hp: &GpHyperparams, distance: KernelDistance) -> f64 {
    let n = rows.len();
    let mut k = DMatrix::from_fn(n, n, |i, j| se_kernel(&rows[i], &rows[j], hp, distance).unwrap());
    for i in 0..n {
        k[(i, i)] += hp.sigma_n2;
    }
    let det = k.clone().lu().determinant();
    let inv = k.try_inverse().unwrap();
    let yv = DVector::from_column_slice(y);
    -0.5 * (yv.transpose() * inv * &yv)[0] - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * PI).ln()
}

fn random_hp(rng: &mut ChaCha8Rng) -> GpHyperparams {
    GpHyperparams::new(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(0.05..0.5))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn exact_likelihood_matches_dense_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..20 {
        let n = rng.random_range(2..=30);
        let d = rng.random_range(1..=10);
        let rows = random_rows(&mut rng, n, d);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let hp = random_hp(&mut rng);
        let distance = if case % 2 == 0 { KernelDistance::Norm } else { KernelDistance::SquaredNorm };
        let d2 = sq_distances_self(&Inputs::from_rows(&rows).unwrap());
        let (value, _) = exact_log_likelihood(&d2, &y, &hp, distance).unwrap();
        let want = dense_log_likelihood(&rows, &y, &hp, distance);
        assert!((value - want).abs() < 1e-10, "case {case}: {value} vs {want}");
    }
}

fn check_gradient(f: impl Fn(&GpHyperparams) -> (f64, [f64; 3]), hp: &GpHyperparams) {
    let (_, g) = f(hp);
    let p = hp.to_log();
    for i in 0..3 {
        let h = 1e-5;
        let mut a = p;
        let mut b = p;
        a[i] += h;
        b[i] -= h;
        let fd = (f(&GpHyperparams::from_log(&a)).0 - f(&GpHyperparams::from_log(&b)).0) / (2.0 * h);
        assert!(rel_err(g[i], fd) < 1e-4, "param {i}: analytic {} vs fd {fd}", g[i]);
    }
}

#[test]
fn likelihood_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..20 {
        let n = rng.random_range(3..=30);
        let d = rng.random_range(1..=10);
        let rows = random_rows(&mut rng, n, d);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let hp = random_hp(&mut rng);
        let distance = if case % 2 == 0 { KernelDistance::Norm } else { KernelDistance::SquaredNorm };
        let x = Inputs::from_rows(&rows).unwrap();
        let d2 = sq_distances_self(&x);
        check_gradient(|hp| exact_log_likelihood(&d2, &y, hp, distance).unwrap(), &hp);

        let m = rng.random_range(1..=n);
        let u = x.select(&(0..m).collect::<Vec<_>>());
        let duu = sq_distances_self(&u);
        let duf = sq_distances(&u, &x).unwrap();
        check_gradient(|hp| fitc_log_likelihood(&duu, &duf, &y, hp, distance).unwrap(), &hp);
    }
}

#[test]
fn duplicate_consistent_data_drives_noise_to_its_floor() {
    let rows = vec![vec![0.3, -0.2], vec![0.3, -0.2]];
    let y = vec![1.0, 1.0];
    // the dense likelihood rises monotonically as σn² falls, at every σf², l on a grid
    for &sf in &[0.3, 1.0, 3.0] {
        for &l in &[0.5, 1.0, 2.0] {
            let mut prev = f64::NEG_INFINITY;
            for &sn in &[1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
                let v = dense_log_likelihood(&rows, &y, &GpHyperparams::new(sf, l, sn), KernelDistance::Norm);
                assert!(v > prev);
                prev = v;
            }
        }
    }
    let model = fit_exact(Arc::new(Inputs::from_rows(&rows).unwrap()), y, None, &GpConfig::default()).unwrap();
    // lower bound is 1e-8 times the target second moment (here 1)
    assert!(model.hyperparams().sigma_n2 < 1e-6, "{:?}", model.hyperparams());
}

#[test]
fn tiny_noise_interpolates_training_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = random_rows(&mut rng, 12, 4);
    let y: Vec<f64> = rows.iter().map(|r| r[0].sin() + r[1]).collect();
    let m = GpModel::exact(
        Arc::new(Inputs::from_rows(&rows).unwrap()),
        y.clone(),
        GpHyperparams::new(1.0, 1.0, 1e-10),
        KernelDistance::Norm,
    )
    .unwrap();
    for (r, t) in rows.iter().zip(&y) {
        let (mean, var) = m.predict(r).unwrap();
        assert!((mean - t).abs() < 1e-4);
        assert!((0.0..=1.0).contains(&var));
    }
}

#[test]
fn fitc_with_all_points_inducing_equals_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..10 {
        let n = rng.random_range(5..=50);
        let d = rng.random_range(1..=10);
        let rows = random_rows(&mut rng, n, d);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let hp = random_hp(&mut rng);
        let distance = if case % 2 == 0 { KernelDistance::Norm } else { KernelDistance::SquaredNorm };
        let x = Arc::new(Inputs::from_rows(&rows).unwrap());
        let exact = GpModel::exact(x.clone(), y.clone(), hp, distance).unwrap();
        let fitc = GpModel::fitc(x, y, hp, distance, (0..n).collect()).unwrap();
        let queries = random_rows(&mut rng, 20, d);
        for (a, b) in exact.predict_many(&queries).unwrap().iter().zip(fitc.predict_many(&queries).unwrap()) {
            assert!((a.0 - b.0).abs() < 1e-8 && (a.1 - b.1).abs() < 1e-8, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn single_inducing_point_matches_rank_one_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows = random_rows(&mut rng, 15, 3);
    let y: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
    let hp = GpHyperparams::new(1.3, 0.8, 0.2);
    let dist = KernelDistance::Norm;
    let x = Arc::new(Inputs::from_rows(&rows).unwrap());
    let model = GpModel::fitc(x, y.clone(), hp, dist, vec![6]).unwrap();
    let u = &rows[6];
    let kuu = hp.sigma_f2;
    let ku: Vec<f64> = rows.iter().map(|r| se_kernel(r, u, &hp, dist).unwrap()).collect();
    let lam: Vec<f64> = ku.iter().map(|k| hp.sigma_f2 - k * k / kuu + hp.sigma_n2).collect();
    let denom = kuu + ku.iter().zip(&lam).map(|(k, l)| k * k / l).sum::<f64>();
    let num: f64 = ku.iter().zip(&lam).zip(&y).map(|((k, l), y)| k * y / l).sum();
    for q in random_rows(&mut rng, 10, 3) {
        let ks = se_kernel(&q, u, &hp, dist).unwrap();
        let (mean, var) = model.predict(&q).unwrap();
        let want_var = hp.sigma_f2 - ks * ks / kuu + ks * ks / denom;
        assert!((mean - ks * num / denom).abs() < 1e-12);
        assert!((var - want_var).abs() < 1e-12);
    }
}

fn smooth_target(x: &[f64]) -> f64 {
    (2.0 * x[0]).sin() + 0.5 * x[1] * x[1] - 0.3 * x[0] * x[1]
}

#[test]
fn fitc_with_a_sixth_of_the_points_stays_close_to_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noise = 0.05;
    let train = random_rows(&mut rng, 200, 2);
    let y: Vec<f64> = train.iter().map(|r| smooth_target(r) + noise * rng.random_range(-1.0..1.0)).collect();
    let test = random_rows(&mut rng, 300, 2);
    let truth: Vec<f64> = test.iter().map(|r| smooth_target(r)).collect();
    let x = Arc::new(Inputs::from_rows(&train).unwrap());
    // the unsquared-norm kernel has rough sample paths that 34 inducing
    // points cannot summarise (about 3x the exact error); the property is
    // stated for the smooth kernel
    let cfg = GpConfig {
        distance: KernelDistance::SquaredNorm,
        ..Default::default()
    };
    let exact = fit_exact(x.clone(), y.clone(), None, &cfg).unwrap();
    let fitc = fit_fitc(x, y, 34, None, &cfg, &mut rng).unwrap();
    let rmse = |m: &GpModel| {
        let p = m.predict_many(&test).unwrap();
        (p.iter().zip(&truth).map(|(a, t)| (a.0 - t).powi(2)).sum::<f64>() / truth.len() as f64).sqrt()
    };
    let (re, rf) = (rmse(&exact), rmse(&fitc));
    eprintln!("exact {re:.4} fitc {rf:.4}");
    assert!(rf <= 1.25 * re, "FITC {rf} vs exact {re}");
}

#[test]
fn predictions_are_bounded_batched_and_order_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows = random_rows(&mut rng, 40, 5);
    let y: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>()).collect();
    let hp = GpHyperparams::new(1.5, 0.9, 0.1);
    let x = Arc::new(Inputs::from_rows(&rows).unwrap());
    let fitc = GpModel::fitc(x.clone(), y.clone(), hp, KernelDistance::Norm, (0..40).step_by(4).collect()).unwrap();
    let exact = GpModel::exact(x, y.clone(), hp, KernelDistance::Norm).unwrap();
    let queries: Vec<Vec<f64>> = (0..1000).map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    for m in [&fitc, &exact] {
        let batch = m.predict_many(&queries).unwrap();
        for (q, b) in queries.iter().zip(&batch).take(50) {
            let single = m.predict(q).unwrap();
            assert!((single.0 - b.0).abs() < 1e-12 && (single.1 - b.1).abs() < 1e-12);
        }
        assert!(batch.iter().all(|p| p.1 >= 0.0 && p.1 <= hp.sigma_f2));
    }
    // reversing the training order leaves predictions unchanged
    let rev_rows: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
    let rev_y: Vec<f64> = y.iter().rev().copied().collect();
    let rev = GpModel::exact(Arc::new(Inputs::from_rows(&rev_rows).unwrap()), rev_y, hp, KernelDistance::Norm).unwrap();
    for (a, b) in exact.predict_many(&queries[..50]).unwrap().iter().zip(rev.predict_many(&queries[..50]).unwrap()) {
        assert!((a.0 - b.0).abs() < 1e-10 && (a.1 - b.1).abs() < 1e-10);
    }
}

#[test]
fn multi_output_model_round_trips_through_json() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows = random_rows(&mut rng, 30, 4);
    let targets: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] + 5.0, r[1] * r[2], -r[3]]).collect();
    let queries = random_rows(&mut rng, 10, 4);
    for mode in [GpMode::Exact, GpMode::Fitc { inducing_frac: 0.3 }] {
        let cfg = MultiGpConfig {
            mode,
            gp: GpConfig { max_iter: 30, ..Default::default() },
            hyper_subset: Some(20),
        };
        let model = MultiGp::fit(&rows, &targets, &cfg).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: MultiGp = serde_json::from_str(&text).unwrap();
        assert_eq!(back.hyperparams(), model.hyperparams());
        assert_eq!(back.predict_batch(&queries).unwrap(), model.predict_batch(&queries).unwrap());
        // centered targets: the constant offset of the first output is restored
        let p = model.predict_one(&rows[0]).unwrap();
        assert!((p.mean[0] - targets[0][0]).abs() < 0.5);
    }
}

#[test]
fn block_prediction_matches_per_query_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..5 {
        let n = rng.random_range(5..=40);
        let rows = random_rows(&mut rng, n, 4);
        let y: Vec<f64> = rows.iter().map(|r| smooth_target(r)).collect();
        let inputs = Arc::new(Inputs::from_rows(&rows).unwrap());
        let distance = if case % 2 == 0 { KernelDistance::Norm } else { KernelDistance::SquaredNorm };
        let model = GpModel::exact(inputs.clone(), y, random_hp(&mut rng), distance).unwrap();
        let queries = Inputs::from_rows(&random_rows(&mut rng, 7, 4)).unwrap();
        let d2 = sq_distances(&inputs, &queries).unwrap();
        let block = model.predict_from_sq_block(&d2);
        for (j, (m, v)) in block.iter().enumerate() {
            let (m1, v1) = model.predict_from_sq(d2.column(j).as_slice());
            assert!((m - m1).abs() < 1e-10 && (v - v1).abs() < 1e-10, "case {case} query {j}");
        }
    }
}
