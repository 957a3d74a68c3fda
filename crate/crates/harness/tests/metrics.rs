use nailforce_core::{Finger, TargetVector, TrialKey};
use nailforce_harness::metrics::{
    component_rmse, derived, derived_rmse, percentile_binned_rmse, quantile_sorted, rmse, N_BINS,
};
use nailforce_harness::report::{consistency, evaluate, ReportContext, SyncSummary, TrialPrediction};
use nailforce_harness::EvalReport;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

#[test]
fn rmse_examples() {
    assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    // errors 3 and 4: sqrt((9 + 16) / 2)
    assert!(close(rmse(&[3.0, 0.0], &[0.0, 4.0]).unwrap(), 12.5f64.sqrt(), 1e-15));
    assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    assert!(rmse(&[], &[]).is_err());
}

#[test]
fn derived_examples() {
    let d = derived([3.0, 0.0, 4.0]);
    assert!(close(d.magnitude, 5.0, 1e-15));
    assert!(close(d.tangential, 3.0, 1e-15));
    assert!(close(d.angle_deg, (0.75f64).atan().to_degrees(), 1e-12));
    assert!((d.angle_deg - 36.87).abs() < 5e-3);
    assert!(close(d.ratio.unwrap(), 4.0 / 3.0, 1e-15));
    // load below 0.2 N leaves the ratio undefined
    let small = derived([0.1, 0.1, 2.0]);
    assert!(small.ratio.is_none());
    assert!(derived([0.0, 0.2, 1.0]).ratio.is_some());
}

#[test]
fn ratio_rmse_skips_undefined_samples() {
    let t = |f: [f64; 3]| TargetVector::new(f, [0.0; 3], 0.0, 0.0);
    let truth = [t([3.0, 0.0, 4.0]), t([0.1, 0.1, 2.0]), t([0.0, 1.0, 1.0])];
    let pred = [t([3.0, 0.0, 5.0]), t([1.0, 0.0, 2.0]), t([0.0, 0.05, 1.0])];
    let r = derived_rmse(&pred, &truth).unwrap();
    assert_eq!(r.ratio_samples, 1);
    assert!(close(r.ratio.unwrap(), 1.0 / 3.0, 1e-12));
    let none = derived_rmse(&truth[1..2], &truth[1..2]).unwrap();
    assert_eq!((none.ratio, none.ratio_samples), (None, 0));
}

#[test]
fn component_rmse_is_per_column() {
    let truth = vec![TargetVector::default(); 4];
    let pred: Vec<TargetVector> = (0..4)
        .map(|_| {
            let mut v = TargetVector::default();
            for c in 0..8 {
                v.0[c] = c as f64;
            }
            v
        })
        .collect();
    let r = component_rmse(&pred, &truth).unwrap();
    for (c, v) in r.iter().enumerate() {
        assert!(close(*v, c as f64, 1e-15));
    }
}

#[test]
fn quantiles_interpolate_linearly() {
    let s = [1.0, 2.0, 4.0, 8.0];
    assert_eq!(quantile_sorted(&s, 0.0), 1.0);
    assert_eq!(quantile_sorted(&s, 100.0), 8.0);
    // position 1.5 between 2 and 4
    assert!(close(quantile_sorted(&s, 50.0), 3.0, 1e-15));
    assert_eq!(quantile_sorted(&[7.0], 30.0), 7.0);
}

/// Truth values 0..=400 in shuffled order: the q-th percentile is exactly
/// 4q, so bin k holds the integers in [20k − 10, 20k + 10), clamped, with
/// 400 included in the last bin.
#[test]
fn uniform_ranks_match_closed_form_bins() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut truth: Vec<f64> = (0..=400).map(f64::from).collect();
    for i in (1..truth.len()).rev() {
        truth.swap(i, r.random_range(0..=i));
    }
    let pred: Vec<f64> = truth.iter().map(|t| t + r.random_range(-1.0..1.0) * (1.0 + t / 100.0)).collect();
    let bins = percentile_binned_rmse(&pred, &truth).unwrap();
    assert_eq!(bins.len(), N_BINS);
    for (k, b) in bins.iter().enumerate() {
        let lo = (20 * k as i64 - 10).max(0);
        let hi = if k == N_BINS - 1 { 401 } else { 20 * k as i64 + 10 };
        let members: Vec<usize> = (0..truth.len()).filter(|&i| (lo..hi).contains(&(truth[i] as i64))).collect();
        assert_eq!(b.percentile, 5.0 * k as f64);
        assert_eq!(b.count, members.len(), "bin {k}");
        let mean = members.iter().map(|&i| truth[i]).sum::<f64>() / members.len() as f64;
        let se: f64 = members.iter().map(|&i| (pred[i] - truth[i]).powi(2)).sum();
        assert!(close(b.mean, mean, 1e-12));
        assert!(close(b.rmse, (se / members.len() as f64).sqrt(), 1e-12));
    }
    assert_eq!(bins[0].count, 10);
    assert_eq!(bins[10].count, 20);
    assert_eq!(bins[20].count, 11);
}

#[test]
fn identical_truth_puts_everything_in_every_bin() {
    let truth = vec![2.5; 30];
    let pred: Vec<f64> = (0..30).map(|i| 2.5 + (i % 3) as f64 - 1.0).collect();
    let all = rmse(&pred, &truth).unwrap();
    let bins = percentile_binned_rmse(&pred, &truth).unwrap();
    assert_eq!(bins.len(), N_BINS);
    for b in bins {
        assert_eq!(b.count, 30);
        assert!(close(b.rmse, all, 1e-15));
        assert_eq!(b.mean, 2.5);
    }
}

#[test]
fn binning_rejects_bad_input() {
    assert!(percentile_binned_rmse(&[1.0], &[1.0, 2.0]).is_err());
    assert!(percentile_binned_rmse(&[], &[]).is_err());
    assert!(percentile_binned_rmse(&[1.0], &[f64::NAN]).is_err());
}

/// Rank-based membership: a value is in bin k iff its interpolated
/// percentile rank falls in [5k − 2.5, 5k + 2.5). Valid for distinct values.
fn rank_oracle(truth: &[f64], k: usize) -> Vec<usize> {
    let n = truth.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| truth[a].total_cmp(&truth[b]));
    let mut out = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        let pct = 100.0 * rank as f64 / (n - 1) as f64;
        let lo = (5.0 * k as f64 - 2.5).max(0.0);
        let hi = 5.0 * k as f64 + 2.5;
        if pct >= lo - 1e-9 && (pct < hi - 1e-9 || (k == N_BINS - 1)) {
            out.push(i);
        }
    }
    out.sort_unstable();
    out
}

proptest! {
    #[test]
    fn bins_match_rank_oracle(seed in any::<u64>(), n in 2usize..300) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + r.random_range(-0.5..0.5)).collect();
        let bins = percentile_binned_rmse(&pred, &truth).unwrap();
        let total: usize = bins.iter().map(|b| b.count).sum();
        // every value lands in exactly one bin
        prop_assert_eq!(total, n);
        let mut expected = Vec::new();
        for k in 0..N_BINS {
            let m = rank_oracle(&truth, k);
            if !m.is_empty() {
                let se: f64 = m.iter().map(|&i| (pred[i] - truth[i]).powi(2)).sum();
                expected.push((5.0 * k as f64, m.len(), (se / m.len() as f64).sqrt()));
            }
        }
        prop_assert_eq!(bins.len(), expected.len());
        for (b, e) in bins.iter().zip(&expected) {
            prop_assert_eq!(b.percentile, e.0);
            prop_assert_eq!(b.count, e.1);
            prop_assert!(close(b.rmse, e.2, 1e-12));
        }
    }
}

fn key(finger: Finger, repetition: u32) -> TrialKey {
    TrialKey {
        participant: 0,
        finger,
        weight_g: 330,
        surface_id: 2,
        repetition,
        session: 0,
    }
}

fn trial_prediction(finger: Finger, seed: u64) -> TrialPrediction {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = 40;
    let mut tv = |scale: f64| -> Vec<TargetVector> {
        (0..n)
            .map(|_| {
                let mut v = TargetVector::default();
                for c in 0..8 {
                    v.0[c] = r.random_range(-scale..scale);
                }
                v
            })
            .collect()
    };
    let labels = tv(2.0);
    let raw = tv(2.0);
    let smoothed = tv(2.0);
    let std = tv(0.5);
    let oracle = tv(2.0);
    TrialPrediction {
        key: key(finger, 1),
        frames: (0..n).collect(),
        times: (0..n).map(|i| i as f64 / 30.0).collect(),
        labels,
        raw,
        smoothed,
        std: Some(std),
        oracle: Some(oracle),
        static_phase: Some((0..n).map(|i| (10..30).contains(&i)).collect()),
    }
}

fn context() -> ReportContext {
    ReportContext {
        scheme: "per-combination-holdout".into(),
        predictor: "gp-exact".into(),
        sync: SyncSummary {
            trials: 2,
            mean_score: 0.9,
            min_score: 0.8,
            max_offset_error: Some(0.01),
        },
        models: Vec::new(),
        gravity: 9.81,
    }
}

#[test]
fn report_round_trips_and_writes_files() {
    let preds = vec![trial_prediction(Finger::Thumb, 1), trial_prediction(Finger::Index, 2)];
    let report = evaluate(&preds, context()).unwrap();
    assert_eq!(report.test_frames, 80);
    assert_eq!(report.curves.len(), 9);
    assert!(report.oracle_rmse.is_some() && report.mean_std.is_some());
    let back = EvalReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    for f in ["report.json", "components.csv", "curves.csv", "summary.txt"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("components.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn report_rmse_matches_direct_computation() {
    let preds = vec![trial_prediction(Finger::Thumb, 3), trial_prediction(Finger::Index, 4)];
    let report = evaluate(&preds, context()).unwrap();
    let labels: Vec<TargetVector> = preds.iter().flat_map(|p| p.labels.clone()).collect();
    let smoothed: Vec<TargetVector> = preds.iter().flat_map(|p| p.smoothed.clone()).collect();
    for c in 0..8 {
        let se: f64 = smoothed.iter().zip(&labels).map(|(p, t)| (p.0[c] - t.0[c]).powi(2)).sum();
        assert!(close(report.rmse[c], (se / 80.0).sqrt(), 1e-12));
    }
}

#[test]
fn consistency_pairs_static_frames_of_both_fingers() {
    let mut thumb = trial_prediction(Finger::Thumb, 5);
    let mut index = trial_prediction(Finger::Index, 6);
    let weight_n = 0.33 * 9.81;
    for (i, (t, x)) in thumb.smoothed.iter_mut().zip(index.smoothed.iter_mut()).enumerate() {
        t.0[0] = weight_n / 2.0 + 0.1;
        x.0[0] = weight_n / 2.0;
        t.0[2] = 3.0 + i as f64 * 0.01;
        x.0[2] = 3.0;
    }
    let c = consistency(&[thumb.clone(), index.clone()], 9.81).unwrap();
    assert_eq!(c.frames, 20);
    // static frames 10..30: mean of 0.01 i
    assert!(close(c.mean_abs_grip_difference, 0.195, 1e-12));
    assert!(close(c.mean_abs_load_residual, 0.1, 1e-12));
    assert!(consistency(&[thumb], 9.81).is_none());
}
