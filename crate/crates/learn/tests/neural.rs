use nailforce_learn::neural::{
    conv2d, fd_layer_moments, fd_unit_moments, gradient_check, maxpool, sigmoid, train, Activation, Cnn, CnnSpec,
    ConvLayerSpec, Example, FdNet, FdNetSpec, FdRnn, LossNorm, Map, RnnSpec, Sequence, TrainConfig, Trainable,
};
use nailforce_learn::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_map(r: &mut impl Rng, h: usize, w: usize) -> Map {
    Map::new(h, w, (0..h * w).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_vec(r: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

#[test]
fn conv2d_trivial_kernels() {
    let g = random_map(&mut rng(1), 4, 5);
    let out = conv2d(&g, &Map::new(1, 1, vec![2.0]).unwrap(), 1.0).unwrap();
    for (o, x) in out.data.iter().zip(&g.data) {
        assert_eq!(*o, 2.0 * x + 1.0);
    }
    let out = conv2d(&g, &Map::zeros(3, 3), 0.3).unwrap();
    assert_eq!((out.height, out.width), (2, 3));
    assert!(out.data.iter().all(|&v| v == 0.3));
}

#[test]
fn conv2d_matches_quadruple_loop_exactly() {
    let mut r = rng(2);
    for _ in 0..20 {
        let g = random_map(&mut r, 6, 6);
        let w = random_map(&mut r, 3, 3);
        let b: f64 = r.random_range(-1.0..1.0);
        let out = conv2d(&g, &w, b).unwrap();
        assert_eq!((out.height, out.width), (4, 4));
        for m in 0..4 {
            for n in 0..4 {
                let mut acc = 0.0;
                for u in 0..3 {
                    for v in 0..3 {
                        acc += w.get(u, v) * g.get(u + m, v + n);
                    }
                }
                assert_eq!(out.get(m, n), acc + b);
            }
        }
    }
}

#[test]
fn conv2d_rejects_oversized_kernel() {
    let g = Map::zeros(3, 5);
    assert!(matches!(conv2d(&g, &Map::zeros(4, 4), 0.0), Err(Error::InvalidInput(_))));
}

#[test]
fn maxpool_examples() {
    let p = maxpool(&Map::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), 2, 2).unwrap();
    assert_eq!(p.data, vec![4.0]);
    let c = maxpool(&Map::new(4, 6, vec![0.7; 24]).unwrap(), 2, 2).unwrap();
    assert_eq!((c.height, c.width), (2, 3));
    assert!(c.data.iter().all(|&v| v == 0.7));
}

#[test]
fn maxpool_matches_brute_force_windows() {
    let mut r = rng(3);
    for (h, w) in [(8, 8), (7, 5), (9, 4)] {
        let g = random_map(&mut r, h, w);
        let p = maxpool(&g, 2, 2).unwrap();
        assert_eq!((p.height, p.width), (h.div_ceil(2), w.div_ceil(2)));
        for i in 0..p.height {
            for j in 0..p.width {
                let mut cells = Vec::new();
                for a in 2 * i..2 * i + 2 {
                    for b in 2 * j..2 * j + 2 {
                        if a < h && b < w {
                            cells.push(g.get(a, b));
                        }
                    }
                }
                let best = cells.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(p.get(i, j), best);
                assert!(cells.iter().all(|&c| c <= p.get(i, j)));
            }
        }
    }
}

#[test]
fn default_cnn_shapes_chain() {
    let shapes = CnnSpec::default().shapes((1, 111, 105)).unwrap();
    assert_eq!(shapes, vec![(1, 111, 105), (8, 107, 101), (8, 54, 51), (25, 50, 47), (25, 25, 24)]);
    let small = CnnSpec::default().shapes((1, 12, 12));
    assert!(small.is_err());
}

fn small_cnn_spec(loss: LossNorm) -> CnnSpec {
    CnnSpec {
        conv: vec![ConvLayerSpec { kernels: 3, size: 3 }, ConvLayerSpec { kernels: 4, size: 3 }],
        hidden: 6,
        loss,
        ..CnnSpec::default()
    }
}

fn cnn_examples(r: &mut impl Rng, c: usize, n: usize) -> Vec<Example> {
    (0..n)
        .map(|_| Example {
            x: random_vec(r, c * 144, 1.0),
            y: random_vec(r, 8, 1.0),
        })
        .collect()
}

#[test]
fn cnn_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let loss = if seed % 2 == 0 { LossNorm::Norm } else { LossNorm::Squared };
        let channels = 1 + (seed as usize % 3 == 2) as usize * 2;
        let mut net = Cnn::new(small_cnn_spec(loss), (channels, 12, 12), 8, &mut r).unwrap();
        // Non-zero biases so their gradients are exercised away from init.
        for p in net.params_mut().iter_mut() {
            *p += r.random_range(-0.05..0.05);
        }
        let samples = cnn_examples(&mut r, channels, 3);
        let err = gradient_check(&mut net, &samples, 1e-5, 1e-6);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn cnn_loss_zero_at_target_and_homogeneous() {
    let mut r = rng(7);
    let mut net = Cnn::new(small_cnn_spec(LossNorm::Norm), (1, 12, 12), 8, &mut r).unwrap();
    let x = random_vec(&mut r, 144, 1.0);
    let y = net.predict(&x).unwrap();
    assert_eq!(net.sample_loss(&Example { x: x.clone(), y: y.clone() }), 0.0);
    let target = random_vec(&mut r, 8, 1.0);
    let l1 = net.sample_loss(&Example { x: x.clone(), y: target.clone() });
    // Scaling the linear output layer doubles every prediction.
    let n = net.params().len();
    let tail = 6 * 8 + 8;
    for p in &mut net.params_mut()[n - tail..] {
        *p *= 2.0;
    }
    let doubled: Vec<f64> = target.iter().map(|v| 2.0 * v).collect();
    let l2 = net.sample_loss(&Example { x, y: doubled });
    assert!((l2 - 2.0 * l1).abs() < 1e-12 * l1.max(1.0), "{l1} {l2}");
}

#[test]
fn cnn_rejects_wrong_input_size() {
    let net = Cnn::new(small_cnn_spec(LossNorm::Norm), (1, 12, 12), 8, &mut rng(0)).unwrap();
    assert!(matches!(net.predict(&[0.0; 10]), Err(Error::InvalidInput(_))));
}

#[test]
fn fd_unit_moments_examples() {
    for s2 in [0.0, 0.3, 2.0, 50.0] {
        assert_eq!(fd_unit_moments(0.0, s2, Activation::Sigmoid).unwrap().0, 0.5);
    }
    let (nu, tau2) = fd_unit_moments(1.2, 0.0, Activation::Sigmoid).unwrap();
    assert!((nu - 0.768524783499018).abs() < 1e-12);
    assert_eq!(nu, sigmoid(1.2));
    assert_eq!(tau2, 0.0);
    assert!(fd_unit_moments(0.0, -1.0, Activation::Sigmoid).is_err());
}

fn monte_carlo_unit(mu: f64, s2: f64, act: Activation, n: usize, seed: u64) -> (f64, f64) {
    let normal = Normal::new(mu, s2.sqrt()).unwrap();
    let mut r = rng(seed);
    let (mut s, mut ss) = (0.0, 0.0);
    for _ in 0..n {
        let y = act.apply(normal.sample(&mut r));
        s += y;
        ss += y * y;
    }
    let m = s / n as f64;
    (m, ss / n as f64 - m * m)
}

#[test]
fn fd_unit_moments_match_monte_carlo() {
    let (nu, _) = fd_unit_moments(0.7, 0.9, Activation::Sigmoid).unwrap();
    let (m, _) = monte_carlo_unit(0.7, 0.9, Activation::Sigmoid, 1_000_000, 9);
    assert!((nu - m).abs() < 0.01, "{nu} vs {m}");
    let mut r = rng(10);
    for i in 0..10 {
        let act = if i % 2 == 0 { Activation::Sigmoid } else { Activation::Tanh };
        let mu = r.random_range(-2.0..2.0);
        let s2 = r.random_range(0.05..3.0);
        let (nu, tau2) = fd_unit_moments(mu, s2, act).unwrap();
        let (m, v) = monte_carlo_unit(mu, s2, act, 1_000_000, 20 + i);
        // The probit-style mean approximation is held to an absolute 0.01
        // in [0,1] units (half that range for tanh); τ² to 1 % relative.
        let scale = if act == Activation::Tanh { 2.0 } else { 1.0 };
        assert!((nu - m).abs() < 0.01 * scale, "config {i}: ν {nu} vs {m}");
        assert!((tau2 - v).abs() < 0.01 * v, "config {i}: τ² {tau2} vs {v}");
    }
}

#[test]
fn fd_layer_moments_examples() {
    let mut r = rng(11);
    let x = random_vec(&mut r, 5, 1.0);
    let w: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut r, 5, 1.0)).collect();
    let (m, v) = fd_layer_moments(&x, &[0.0; 5], &w, &[0.0; 3], 1.0).unwrap();
    for (j, row) in w.iter().enumerate() {
        let dot: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((m[j] - dot).abs() < 1e-14);
        assert_eq!(v[j], 0.0);
    }
    let zero = vec![vec![0.0; 5]; 3];
    let (m, v) = fd_layer_moments(&x, &[0.3; 5], &zero, &[0.0; 3], 0.5).unwrap();
    assert!(m.iter().chain(&v).all(|&a| a == 0.0));
    assert!(fd_layer_moments(&x, &[0.0; 5], &w, &[0.0; 3], 0.0).is_err());
}

#[test]
fn fd_layer_moments_match_monte_carlo() {
    let mut r = rng(12);
    for config in 0..10 {
        let d = 8;
        let x = random_vec(&mut r, d, 1.0);
        let xv: Vec<f64> = if config % 2 == 0 { vec![0.0; d] } else { (0..d).map(|_| r.random_range(0.0..0.2)).collect() };
        let w = vec![random_vec(&mut r, d, 1.0)];
        let p = 0.5;
        let (m, v) = fd_layer_moments(&x, &xv, &w, &[0.0], p).unwrap();
        let n = 1_000_000;
        let (mut s, mut ss) = (0.0, 0.0);
        for _ in 0..n {
            let mut a = 0.0;
            for i in 0..d {
                if r.random_bool(p) {
                    let xi = if xv[i] > 0.0 { x[i] + xv[i].sqrt() * r.sample::<f64, _>(rand_distr::StandardNormal) } else { x[i] };
                    a += w[0][i] * xi;
                }
            }
            s += a;
            ss += a * a;
        }
        let mm = s / n as f64;
        let mv = ss / n as f64 - mm * mm;
        // Mean error is measured against the larger of |mean| and the
        // standard deviation, since the mean can sit near zero.
        assert!((m[0] - mm).abs() < 0.01 * m[0].abs().max(v[0].sqrt()), "config {config}: mean {} vs {mm}", m[0]);
        assert!((v[0] - mv).abs() < 0.01 * v[0], "config {config}: var {} vs {mv}", v[0]);
    }
}

fn fd_examples(r: &mut impl Rng, d: usize, o: usize, n: usize) -> Vec<Example> {
    (0..n)
        .map(|_| Example {
            x: random_vec(r, d, 1.0),
            y: random_vec(r, o, 1.0),
        })
        .collect()
}

#[test]
fn fd_net_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut r = rng(200 + seed);
        let spec = FdNetSpec {
            hidden: vec![5, 3],
            hidden_activation: if seed % 3 == 0 { Activation::Sigmoid } else { Activation::Tanh },
            output_activation: if seed % 2 == 0 { Activation::Identity } else { Activation::Sigmoid },
            drop_input: 0.3,
            drop_hidden: 0.2,
        };
        let mut net = FdNet::new(spec, 4, 2, &mut r).unwrap();
        for p in net.params_mut().iter_mut() {
            *p += r.random_range(-0.1..0.1);
        }
        let samples = fd_examples(&mut r, 4, 2, 4);
        let err = gradient_check(&mut net, &samples, 1e-5, 1e-6);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn fd_net_without_dropout_is_deterministic_network() {
    let mut r = rng(13);
    let spec = FdNetSpec {
        hidden: vec![4],
        drop_input: 0.0,
        drop_hidden: 0.0,
        ..FdNetSpec::default()
    };
    let net = FdNet::new(spec, 3, 2, &mut r).unwrap();
    let x = random_vec(&mut r, 3, 1.0);
    let (mean, var) = net.forward(&x).unwrap();
    let (w0, b0) = net.layer(0);
    let (w1, b1) = net.layer(1);
    let h: Vec<f64> = (0..4).map(|j| (b0[j] + (0..3).map(|i| w0[j * 3 + i] * x[i]).sum::<f64>()).tanh()).collect();
    for k in 0..2 {
        let y = b1[k] + (0..4).map(|j| w1[k * 4 + j] * h[j]).sum::<f64>();
        assert!((mean[k] - y).abs() < 1e-12);
        assert_eq!(var[k], 0.0);
    }
}

#[test]
fn linear_fd_net_recovers_least_squares() {
    let mut r = rng(14);
    let beta = [0.8, -1.3, 0.4];
    let data: Vec<Example> = (0..200)
        .map(|_| {
            let x = random_vec(&mut r, 3, 1.0);
            let y = 0.5 + x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + r.random_range(-0.1..0.1);
            Example { x, y: vec![y] }
        })
        .collect();
    let mut a = nalgebra::DMatrix::zeros(200, 4);
    let mut b = nalgebra::DVector::zeros(200);
    for (i, e) in data.iter().enumerate() {
        for j in 0..3 {
            a[(i, j)] = e.x[j];
        }
        a[(i, 3)] = 1.0;
        b[i] = e.y[0];
    }
    let ols = a.clone().svd(true, true).solve(&b, 1e-12).unwrap();
    let spec = FdNetSpec {
        hidden: vec![],
        drop_input: 0.0,
        ..FdNetSpec::default()
    };
    let mut net = FdNet::new(spec, 3, 1, &mut r).unwrap();
    let config = TrainConfig {
        epochs: 3000,
        batch_size: 200,
        learning_rate: 0.2,
        momentum: 0.9,
        ..TrainConfig::default()
    };
    let report = train(&mut net, &data, &[], &config).unwrap();
    assert!(report.train_loss.windows(2).all(|w| w[1] <= w[0]));
    let (w, bias) = net.layer(0);
    for j in 0..3 {
        assert!((w[j] - ols[j]).abs() < 1e-3, "weight {j}: {} vs {}", w[j], ols[j]);
    }
    assert!((bias[0] - ols[3]).abs() < 1e-3);
}

#[test]
fn training_loss_never_increases() {
    let mut r = rng(15);
    let data: Vec<Example> = (0..120)
        .map(|_| {
            let x = random_vec(&mut r, 6, 1.0);
            let y = vec![(x[0] * x[1]).sin(), x[2].powi(2) - x[3]];
            Example { x, y }
        })
        .collect();
    let (tr, va) = data.split_at(90);
    let spec = FdNetSpec {
        hidden: vec![12, 6],
        ..FdNetSpec::default()
    };
    let mut net = FdNet::new(spec, 6, 2, &mut r).unwrap();
    let config = TrainConfig {
        epochs: 60,
        batch_size: 16,
        learning_rate: 0.2,
        ..TrainConfig::default()
    };
    let report = train(&mut net, tr, va, &config).unwrap();
    assert!(report.train_loss.len() > 2);
    assert!(report.train_loss.windows(2).all(|w| w[1] <= w[0]));
    assert!(report.train_loss.last() < report.train_loss.first());
}

#[test]
fn divergent_training_reports_failure() {
    let mut r = rng(16);
    let data = fd_examples(&mut r, 3, 1, 20);
    let spec = FdNetSpec {
        hidden: vec![],
        drop_input: 0.0,
        ..FdNetSpec::default()
    };
    let mut net = FdNet::new(spec, 3, 1, &mut r).unwrap();
    let config = TrainConfig {
        learning_rate: 1e300,
        min_learning_rate: 1e299,
        momentum: 0.0,
        ..TrainConfig::default()
    };
    let err = train(&mut net, &data, &[], &config).unwrap_err();
    assert!(matches!(err, Error::TrainingFailed { .. }), "{err:?}");
}

fn rnn_spec(hidden: usize, out: Activation) -> RnnSpec {
    RnnSpec {
        hidden,
        output_activation: out,
        ..RnnSpec::default()
    }
}

#[test]
fn rnn_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut r = rng(300 + seed);
        let out = if seed % 2 == 0 { Activation::Identity } else { Activation::Sigmoid };
        let mut net = FdRnn::new(rnn_spec(3, out), 2, 2, &mut r).unwrap();
        for p in net.params_mut().iter_mut() {
            *p += r.random_range(-0.1..0.1);
        }
        let seqs: Vec<Sequence> = (0..2)
            .map(|_| Sequence {
                xs: (0..4).map(|_| random_vec(&mut r, 2, 1.0)).collect(),
                ys: (0..4).map(|_| random_vec(&mut r, 2, 1.0)).collect(),
            })
            .collect();
        let err = gradient_check(&mut net, &seqs, 1e-5, 1e-6);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn rnn_with_zero_input_and_recurrent_weights_is_constant() {
    let mut r = rng(17);
    let mut net = FdRnn::new(rnn_spec(5, Activation::Identity), 3, 2, &mut r).unwrap();
    net.input_weights_mut().iter_mut().for_each(|w| *w = 0.0);
    net.recurrent_weights_mut().iter_mut().for_each(|w| *w = 0.0);
    net.output_bias_mut().copy_from_slice(&[0.4, -1.1]);
    let xs: Vec<Vec<f64>> = (0..6).map(|_| random_vec(&mut r, 3, 1.0)).collect();
    for y in net.predict_sequence(&xs).unwrap() {
        assert_eq!(y, vec![0.4, -1.1]);
    }
}

#[test]
fn rnn_single_step_equals_feedforward_net() {
    let mut r = rng(18);
    let (d, h, o) = (4, 6, 3);
    let rnn = FdRnn::new(rnn_spec(h, Activation::Identity), d, o, &mut r).unwrap();
    let spec = FdNetSpec {
        hidden: vec![h],
        hidden_activation: Activation::Tanh,
        output_activation: Activation::Identity,
        drop_input: 0.5,
        drop_hidden: 0.5,
    };
    let mut nn = FdNet::new(spec, d, o, &mut r).unwrap();
    let mut flat = rnn.input_weights().to_vec();
    flat.extend(rnn.hidden_bias());
    flat.extend(rnn.output_weights());
    flat.extend(rnn.output_bias());
    nn.params_mut().copy_from_slice(&flat);
    for _ in 0..5 {
        let x = random_vec(&mut r, d, 1.0);
        let (rm, rv) = rnn.forward(&[x.clone()]).unwrap().remove(0);
        let (nm, nv) = nn.forward(&x).unwrap();
        assert_eq!(rm, nm);
        assert_eq!(rv, nv);
    }
}

#[test]
fn rnn_rejects_empty_sequence() {
    let net = FdRnn::new(rnn_spec(3, Activation::Identity), 2, 2, &mut rng(0)).unwrap();
    assert!(matches!(net.predict_sequence(&[]), Err(Error::InvalidInput(_))));
}

#[test]
fn networks_round_trip_through_json() {
    let mut r = rng(19);
    let net = FdNet::new(FdNetSpec::default(), 5, 8, &mut r).unwrap();
    let back: FdNet = serde_json::from_str(&serde_json::to_string(&net).unwrap()).unwrap();
    assert_eq!(back, net);
    let rnn = FdRnn::new(RnnSpec::default(), 5, 8, &mut r).unwrap();
    let back: FdRnn = serde_json::from_str(&serde_json::to_string(&rnn).unwrap()).unwrap();
    assert_eq!(back, rnn);
    let cnn = Cnn::new(small_cnn_spec(LossNorm::Norm), (1, 12, 12), 8, &mut r).unwrap();
    let back: Cnn = serde_json::from_str(&serde_json::to_string(&cnn).unwrap()).unwrap();
    assert_eq!(back, cnn);
}
