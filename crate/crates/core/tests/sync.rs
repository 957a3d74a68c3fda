use nailforce_core::sync::{find_offset, resample, BinarySignal};
use nailforce_core::synth::Telegraph;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const RATE: f64 = 24.0;

fn telegraph(seed: u64, n: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Telegraph::sample(&mut rng, 4.0, RATE, n);
    (0..n).map(|k| t.at_sample(k)).collect()
}

/// `a` and `b` with `b[n] = a[n − lag]`, both of length `n`.
fn shifted_pair(seed: u64, n: usize, lag: i64, margin: usize) -> (BinarySignal, BinarySignal) {
    let x = telegraph(seed, n + 2 * margin);
    let a = x[margin..margin + n].to_vec();
    let start = (margin as i64 - lag) as usize;
    let b = x[start..start + n].to_vec();
    (BinarySignal::new(a, RATE).unwrap(), BinarySignal::new(b, RATE).unwrap())
}

/// Lag maximising the raw Pearson correlation, searched independently.
fn brute_force_lag(a: &[u8], b: &[u8], max_lag: i64) -> i64 {
    let corr = |lag: i64| {
        let pairs: Vec<(f64, f64)> = (0..b.len() as i64)
            .filter(|&i| i - lag >= 0 && i - lag < a.len() as i64)
            .map(|i| (a[(i - lag) as usize] as f64, b[i as usize] as f64))
            .collect();
        let n = pairs.len() as f64;
        let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let cov: f64 = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum();
        let va: f64 = pairs.iter().map(|p| (p.0 - ma).powi(2)).sum();
        let vb: f64 = pairs.iter().map(|p| (p.1 - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    };
    let mut best = (0i64, f64::NEG_INFINITY);
    for lag in -max_lag..=max_lag {
        let c = corr(lag);
        if c > best.1 + 1e-12 || ((c - best.1).abs() <= 1e-12 && lag.abs() < best.0.abs()) {
            best = (lag, c);
        }
    }
    best.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_shift_is_recovered(seed in 0u64..10_000, lag in -40i64..=40) {
        let (a, b) = shifted_pair(seed, 600, lag, 50);
        let (found, score) = find_offset(&a, &b, 48).unwrap();
        prop_assert_eq!(found, lag);
        prop_assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offset_is_antisymmetric(seed in 0u64..10_000, lag in -40i64..=40) {
        let (a, b) = shifted_pair(seed, 600, lag, 50);
        let ab = find_offset(&a, &b, 48).unwrap().0;
        let ba = find_offset(&b, &a, 48).unwrap().0;
        prop_assert_eq!(ab, -ba);
    }

    #[test]
    fn score_is_bounded(seed in 0u64..10_000, other in 0u64..10_000) {
        let a = BinarySignal::new(telegraph(seed, 300), RATE).unwrap();
        let b = BinarySignal::new(telegraph(other.wrapping_add(77_777), 300), RATE).unwrap();
        let (_, score) = find_offset(&a, &b, 30).unwrap();
        prop_assert!((-1.0..=1.0).contains(&score));
    }
}

#[test]
fn flipped_samples_stay_near_the_noiseless_lag() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (a, b) = shifted_pair(5, 1440, 17, 40);
    let oracle = brute_force_lag(a.samples(), b.samples(), 30);
    assert_eq!(oracle, 17);
    let noisy: Vec<u8> = b.samples().iter().map(|&v| if rng.random_bool(0.1) { 1 - v } else { v }).collect();
    let (found, _) = find_offset(&a, &BinarySignal::new(noisy, RATE).unwrap(), 30).unwrap();
    assert!((16..=18).contains(&found), "{found}");
}

#[test]
fn downsampling_picks_the_nearest_sample() {
    let x = BinarySignal::new(telegraph(3, 1000), 100.0).unwrap();
    let y = resample(&x, 24.0).unwrap();
    assert_eq!(y.len(), 240);
    for (i, &v) in y.samples().iter().enumerate() {
        // exact integer distances |k/100 − i/24| · 2400; ties go to the earlier sample
        let nearest = (0..x.len() as i64).min_by_key(|&k| ((24 * k - 100 * i as i64).abs(), k)).unwrap() as usize;
        assert_eq!(v, x.samples()[nearest], "sample {i}");
    }
}
