use nailforce_core::calibration::{rotate_forces, trial_contact, ContactConfig};
use nailforce_core::imaging::{centering_shift, segment_nail, SegmentBands};
use nailforce_core::io::{read_trial, read_truth, write_trial, write_truth};
use nailforce_core::sync::{extract_led, interpolate_wrench, resample, synchronize_trial, BinarySignal, Roi, SyncConfig};
use nailforce_core::synth::{led_roi, Generator, GeneratorConfig, SyntheticTrial};
use nailforce_core::{Finger, Wrench};

fn config() -> GeneratorConfig {
    GeneratorConfig {
        n_participants: 1,
        weights: vec![330],
        surfaces: vec![1, 6, 11],
        repetitions: 1,
        image_size: [56, 53],
        ..Default::default()
    }
}

fn trials(config: GeneratorConfig) -> Vec<SyntheticTrial> {
    let g = Generator::new(config).unwrap();
    g.grasps().iter().flat_map(|k| g.generate(k).unwrap()).collect()
}

fn sync_config(t: &SyntheticTrial) -> SyncConfig {
    let (r, c, s) = led_roi((t.trial.frames[0].height(), t.trial.frames[0].width()));
    SyncConfig {
        roi: Roi::square(r, c, s),
        ..Default::default()
    }
}

#[test]
fn led_extraction_matches_generator_state() {
    for t in trials(config()) {
        let roi = sync_config(&t).roi;
        let led = extract_led(&t.trial.frames, roi, t.trial.frame_rate).unwrap();
        assert_eq!(led.samples(), &t.truth.led_frames[..]);
        assert_eq!(t.trial.led_video, t.truth.led_frames);
    }
}

#[test]
fn recovered_offset_within_half_a_force_sample() {
    for t in trials(config()) {
        let s = synchronize_trial(&t.trial, &sync_config(&t)).unwrap();
        assert!((s.offset - t.truth.camera_offset).abs() <= 0.005, "{} vs {}", s.offset, t.truth.camera_offset);
        for (f, truth) in s.trial.frames.iter().zip(&t.truth.frame_times) {
            assert!((f.timestamp - truth).abs() < 0.005 + 1e-9);
        }
    }
}

#[test]
fn zero_offset_gives_identical_led_sequences() {
    let t = &trials(GeneratorConfig {
        true_camera_offset: 0.0,
        ..config()
    })[0];
    let force = BinarySignal::new(t.trial.led_force.clone(), t.trial.force_rate).unwrap();
    let resampled = resample(&force, t.trial.frame_rate).unwrap();
    let n = t.trial.led_video.len();
    assert_eq!(&resampled.samples()[..n], &t.trial.led_video[..]);
}

#[test]
fn zero_offset_labels_follow_the_raw_stream() {
    let t = &trials(GeneratorConfig {
        true_camera_offset: 0.0,
        ..config()
    })[1];
    let s = synchronize_trial(&t.trial, &sync_config(t)).unwrap();
    assert_eq!(s.offset, 0.0);
    for (f, label) in s.trial.frames.iter().zip(&s.labels) {
        let want = interpolate_wrench(&t.trial.wrenches, f.timestamp).unwrap();
        assert_eq!(*label, want);
    }
}

#[test]
fn constant_wrench_stream_labels_every_frame_with_it() {
    let mut t = trials(config()).remove(0);
    let w = Wrench::new([0.5, -0.2, 3.0], [1.0, 2.0, -1.0], 0.0);
    for (k, x) in t.trial.wrenches.iter_mut().enumerate() {
        *x = Wrench { timestamp: k as f64 / t.trial.force_rate, ..w };
    }
    let s = synchronize_trial(&t.trial, &sync_config(&t)).unwrap();
    for l in &s.labels {
        assert_eq!((l.f, l.tau), (w.f, w.tau));
    }
}

#[test]
fn contact_point_recovered_from_early_samples() {
    for t in trials(config()) {
        let p = trial_contact(&t.trial.wrenches, &t.trial.surface, &ContactConfig::default()).unwrap();
        let truth = t.truth.contact;
        let err = (p.x - truth.x).hypot(p.y - truth.y);
        assert!(err < 0.5, "{:?}: {err} mm", t.trial.key);
    }
}

#[test]
fn marker_rotation_restores_fingertip_forces() {
    let t = trials(GeneratorConfig {
        force_noise_sigma: 0.0,
        torque_noise_sigma: 0.0,
        ..config()
    })
    .remove(1);
    let rate = t.trial.force_rate;
    for (i, &theta) in t.trial.marker_angles.iter().enumerate() {
        let time = t.truth.frame_times[i];
        let k = (time * rate).round() as usize;
        if ((k as f64 / rate) - time).abs() > 1e-9 {
            continue;
        }
        let f = rotate_forces(t.trial.wrenches[k].f, theta, t.trial.theta_r_deg);
        let want = t.truth.profile.tip_force(Finger::Index, time);
        for a in 0..3 {
            assert!((f[a] - want[a]).abs() < 1e-9);
        }
    }
}

#[test]
fn segmentation_matches_generator_mask() {
    let full = GeneratorConfig {
        image_size: [111, 105],
        n_participants: 3,
        ..config()
    };
    for t in trials(full) {
        // before contact, so the nail has not blanched
        let frame = &t.trial.frames[0];
        let mask = segment_nail(frame, &SegmentBands::default()).unwrap();
        let iou = mask.iou(&t.mask);
        assert!(iou > 0.9, "IoU {iou}");
    }
}

#[test]
fn centering_removes_integer_translation() {
    let t = &trials(GeneratorConfig {
        drift_px: 0.0,
        warp_max_px: 0.0,
        translation_max_px: 3.0,
        ..config()
    })[0];
    let g = Generator::new(config()).unwrap();
    let canonical = g.canonical_maps(0, 0).mask;
    let frame = &t.trial.frames[0];
    let size = (frame.height(), frame.width());
    let mask = segment_nail(frame, &SegmentBands::default()).unwrap();
    let (dr, dc) = centering_shift(&mask, size).unwrap();
    let (cdr, cdc) = centering_shift(&canonical, size).unwrap();
    // frame(p) = template(p + t): centering shifts by t relative to the template
    let (ty, tx) = t.truth.translation;
    assert!(((dr - cdr) as f64 - ty).abs() <= 1.0, "{dr} {cdr} {ty}");
    assert!(((dc - cdc) as f64 - tx).abs() <= 1.0, "{dc} {cdc} {tx}");
}

#[test]
fn trial_directory_round_trip() {
    let t = trials(config()).remove(0);
    let dir = tempfile::tempdir().unwrap();
    write_trial(dir.path(), &t.trial).unwrap();
    write_truth(dir.path(), &t.truth).unwrap();
    let back = read_trial(dir.path()).unwrap();
    assert_eq!(back.key, t.trial.key);
    assert_eq!(back.wrenches, t.trial.wrenches);
    assert_eq!(back.led_force, t.trial.led_force);
    assert_eq!(back.marker_angles, t.trial.marker_angles);
    for (a, b) in back.frames.iter().zip(&t.trial.frames) {
        assert_eq!(a.timestamp, b.timestamp);
        let err = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err <= 0.5 / 65535.0 + 1e-12);
    }
    assert_eq!(read_truth(dir.path()).unwrap().unwrap(), t.truth);
}
