use std::path::Path;
use std::process::Command;

use nailforce_core::synth::GeneratorConfig;
use nailforce_core::SplitTag;
use nailforce_harness::config::{PipelineConfig, Source};
use nailforce_harness::pipeline::{predict_source, train_bundle, ModelBundle};
use nailforce_harness::{commands, run_pipeline, EvalReport, SplitScheme};
use nailforce_learn::gp::{GpConfig, GpMode, MultiGpConfig};
use nailforce_learn::PredictorConfig;

fn tiny_generator() -> GeneratorConfig {
    GeneratorConfig {
        seed: 3,
        n_participants: 1,
        weights: vec![330],
        surfaces: vec![1, 4],
        repetitions: 3,
        image_size: [28, 27],
        trial_duration: 6.0,
        frame_rate: 12.0,
        ..GeneratorConfig::default()
    }
}

fn tiny_config(out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig {
        output: out.to_path_buf(),
        source: Source::Synthetic {
            generator: tiny_generator(),
        },
        predictor: PredictorConfig::Gp {
            gp: MultiGpConfig {
                gp: GpConfig {
                    max_iter: 15,
                    starts: 1,
                    ..GpConfig::default()
                },
                hyper_subset: Some(100),
                ..MultiGpConfig::default()
            },
        },
        max_offset_s: 1.0,
        ..PipelineConfig::default()
    };
    c.features.train_frames = 240;
    c.features.test_stride = 2;
    c.align.max_iter = [6, 6, 6];
    c
}

#[test]
fn pipeline_reports_finite_errors_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out = run_pipeline(&config).unwrap();
    let r = &out.report;
    assert_eq!(r.test_trials, 4);
    assert!(r.test_frames > 0);
    for v in r.rmse.iter().chain(&r.rmse_unsmoothed) {
        assert!(v.is_finite() && *v >= 0.0);
    }
    assert!(r.oracle_rmse.is_some());
    assert!(r.mean_std.is_some());
    assert_eq!(r.curves.len(), 9);
    // 2 combinations × 3 repetitions × 2 fingers, one repetition held out each
    assert_eq!(out.splits.len(), 12);
    assert_eq!(out.splits.iter().filter(|(_, t)| *t == SplitTag::Test).count(), 4);
    assert_eq!(r.models.len(), 2);
    for f in [
        "config.toml",
        "splits.json",
        "trials.json",
        "predictions.csv",
        "report.json",
        "components.csv",
        "curves.csv",
        "summary.txt",
        "models/p0-thumb.json",
        "models/p0-index.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    // the written config reproduces the run configuration
    let again = PipelineConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(again.to_toml().unwrap(), config.to_toml().unwrap());
    let sync = &r.sync;
    assert!(sync.max_offset_error.unwrap() < 1.0 / 12.0, "{sync:?}");
}

#[test]
fn pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = tiny_config(a.path());
    ca.save_models = false;
    let mut cb = ca.clone();
    cb.output = b.path().to_path_buf();
    run_pipeline(&ca).unwrap();
    run_pipeline(&cb).unwrap();
    for f in ["report.json", "predictions.csv", "splits.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
}

#[test]
fn single_model_scheme_uses_fitc() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    config.split = SplitScheme::SingleModelAll {
        data_fraction: 0.30,
        inducing_fraction: 0.17,
    };
    config.save_models = false;
    config.marker_search = false;
    let out = run_pipeline(&config).unwrap();
    assert_eq!(out.report.predictor, "gp-fitc");
    // one pooled model per finger across participants
    let groups: Vec<&str> = out.report.models.iter().map(|m| m.group.as_str()).collect();
    assert_eq!(groups, ["all-thumb", "all-index"]);
    assert!(out.report.rmse.iter().all(|v| v.is_finite()));
}

#[test]
fn dataset_directory_matches_synthetic_source() {
    let data = tempfile::tempdir().unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut synthetic = tiny_config(a.path());
    synthetic.save_models = false;
    assert_eq!(commands::synth(&synthetic, data.path()).unwrap(), 12);
    let mut stored = synthetic.clone();
    stored.output = b.path().to_path_buf();
    stored.source = Source::Dataset {
        dir: data.path().to_path_buf(),
    };
    let ra = run_pipeline(&synthetic).unwrap().report;
    let rb = run_pipeline(&stored).unwrap().report;
    assert_eq!(ra.test_frames, rb.test_frames);
    for c in 0..8 {
        // frames pass through an 8-bit image format on disk
        let (x, y) = (ra.rmse_unsmoothed[c], rb.rmse_unsmoothed[c]);
        assert!((x - y).abs() <= 0.25 * x.max(y) + 1e-3, "component {c}: {x} vs {y}");
    }
}

#[test]
fn train_then_predict_with_a_saved_bundle() {
    let data = tempfile::tempdir().unwrap();
    let mut config = tiny_config(data.path());
    commands::synth(&config, data.path()).unwrap();
    config.source = Source::Dataset {
        dir: data.path().to_path_buf(),
    };
    if let PredictorConfig::Gp { gp } = &mut config.predictor {
        gp.mode = GpMode::Fitc { inducing_frac: 0.3 };
    }
    let (bundle, report) = train_bundle(&config).unwrap();
    assert!(report.is_none());
    assert_eq!(bundle.model.kind(), "gp-fitc");
    let path = data.path().join("model.json");
    bundle.save(&path).unwrap();
    let loaded = ModelBundle::load(&path).unwrap();
    let (p1, trials) = predict_source(&config, &bundle).unwrap();
    let (p2, _) = predict_source(&config, &loaded).unwrap();
    assert_eq!(p1.len(), 12);
    assert_eq!(trials.len(), 12);
    assert_eq!(p1, p2);
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config(dir.path());
    c.features.test_stride = 0;
    assert!(c.validate().is_err());
    let mut c = tiny_config(dir.path());
    c.split = SplitScheme::SurfaceCross { surface: 9 };
    assert!(run_pipeline(&c).is_err());
    assert!(PipelineConfig::from_toml("seed = 1\nbogus = 2\n").is_err());
    let text = tiny_config(dir.path()).to_toml().unwrap();
    assert!(PipelineConfig::from_toml(&text).is_ok());
}

fn nailforce(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nailforce")).args(args).output().unwrap()
}

#[test]
fn command_line_stages_run_on_a_synthesized_trial() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("config.toml");
    std::fs::write(&cfg, tiny_config(&d.join("out")).to_toml().unwrap()).unwrap();
    let cfg = cfg.to_str().unwrap();
    let data = d.join("data");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let run = |args: &[&str]| {
        let o = nailforce(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    run(&["--config", cfg, "synth", "--out", &s(&data)]);
    let trial = std::fs::read_dir(&data)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .min()
        .unwrap();
    run(&["--config", cfg, "sync", "--trial", &s(&trial), "--out", &s(&d.join("sync.csv"))]);
    run(&["--config", cfg, "track", "--trial", &s(&trial), "--out", &s(&d.join("track.csv"))]);
    run(&["--config", cfg, "align", "--trial", &s(&trial), "--ref", "0", "--out", &s(&d.join("aligned"))]);
    run(&["--config", cfg, "calibrate", "--trial", &s(&trial), "--out", &s(&d.join("cal.csv"))]);
    for f in ["sync.csv", "track.csv", "cal.csv", "cal.labels.csv", "cal.contact.json", "aligned/energy.csv"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    let model = d.join("model.json");
    run(&["--config", cfg, "train", "--data", &s(&data), "--out", &s(&model), "--predictor", "gp", "--mode", "fitc"]);
    run(&["--config", cfg, "eval", "--data", &s(&data), "--model", &s(&model), "--out", &s(&d.join("eval"))]);
    let report = EvalReport::from_json(&std::fs::read_to_string(d.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report.test_trials, 12);
}

#[test]
fn command_line_failures_exit_nonzero_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = nailforce(&["sync", "--trial", missing.to_str().unwrap(), "--out", "x.csv"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage failed"));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "unknown_key = 1\n").unwrap();
    let o = nailforce(&["--config", bad.to_str().unwrap(), "pipeline"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("config stage failed"));
}
