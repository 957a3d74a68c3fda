//! Single-stage operations behind the command-line subcommands.

use std::fmt::Write as _;
use std::path::Path;

use nailforce_core::alignment::{align, AlignmentConfig};
use nailforce_core::calibration::{calibrate_torques, trial_contact, ContactPoint};
use nailforce_core::imaging::{centering_shift, mean_shift_track, segment_nail, shift_frame, Mask, TrackResult, TrackState};
use nailforce_core::io::{frame_path, read_trial, trial_dir_name, write_frame, write_json, write_trial, write_truth};
use nailforce_core::sync::{synchronize_trial, SyncConfig, SyncedTrial};
use nailforce_core::synth::Generator;
use nailforce_core::Trial;
use rayon::prelude::*;

use crate::config::{PipelineConfig, Source};
use crate::error::{Error, Result, StageExt};
use crate::pipeline::{blank_roi, frame_label, roi_for, GENERATOR_FILE};

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::stage("io", format!("{}: {e}", path.display())))
}

fn load(dir: &Path) -> Result<Trial> {
    read_trial(dir).stage("io")
}

/// Writes every generated trial, with its truth, under `out`, plus the
/// generator settings. Returns the number of trials written.
pub fn synth(config: &PipelineConfig, out: &Path) -> Result<usize> {
    let Source::Synthetic { generator } = &config.source else {
        return Err(Error::Config("synth needs a synthetic source".into()));
    };
    let g = Generator::new(generator.clone()).stage("synth")?;
    std::fs::create_dir_all(out).stage("io")?;
    write_json(&out.join(GENERATOR_FILE), generator).stage("io")?;
    let counts = g
        .grasps()
        .par_iter()
        .map(|k| -> Result<usize> {
            let pair = g.generate(k).stage("synth")?;
            for t in &pair {
                let dir = out.join(trial_dir_name(&t.trial.key));
                write_trial(&dir, &t.trial).stage("io")?;
                write_truth(&dir, &t.truth).stage("io")?;
            }
            Ok(pair.len())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(counts.iter().sum())
}

pub fn sync(config: &PipelineConfig, dir: &Path) -> Result<SyncedTrial> {
    let trial = load(dir)?;
    let first = trial
        .frames
        .first()
        .ok_or_else(|| Error::stage("sync", "trial without frames"))?;
    let roi = roi_for(config, (first.height(), first.width()));
    synchronize_trial(
        &trial,
        &SyncConfig {
            max_offset_s: config.max_offset_s,
            roi,
        },
    )
    .stage("sync")
}

/// `frame,time,led,fx,fy,fz,tx,ty,tz` for every synchronised frame.
pub fn sync_csv(s: &SyncedTrial) -> String {
    let mut out = format!("# offset_s={} lag_frames={} score={}\n", s.offset, s.lag_frames, s.score);
    out.push_str("frame,time,led,fx,fy,fz,tx,ty,tz\n");
    for (i, (f, w)) in s.trial.frames.iter().zip(&s.labels).enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{},{},{}",
            f.timestamp, s.trial.led_video[i], w.f[0], w.f[1], w.f[2], w.tau[0], w.tau[1], w.tau[2]
        );
    }
    out
}

fn bounding_window(mask: &Mask) -> Option<(usize, usize)> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for (i, _) in mask.data.iter().enumerate().filter(|(_, &m)| m) {
        let (r, c) = (i / mask.width, i % mask.width);
        r0 = r0.min(r);
        r1 = r1.max(r);
        c0 = c0.min(c);
        c1 = c1.max(c);
    }
    (r0 <= r1).then(|| (r1 - r0 + 1, c1 - c0 + 1))
}

/// Mean-shift track of the segmented nail through every frame, seeded
/// with the first frame's mask centroid and bounding box.
pub fn track(config: &PipelineConfig, dir: &Path) -> Result<Vec<TrackResult>> {
    let trial = load(dir)?;
    let first = trial
        .frames
        .first()
        .ok_or_else(|| Error::stage("track", "trial without frames"))?;
    let (h, w) = (first.height(), first.width());
    let roi = roi_for(config, (h, w));
    let mask0 = segment_nail(&blank_roi(first, roi), &config.segment).stage("track")?;
    let center = mask0.centroid().ok_or_else(|| Error::stage("track", "no nail in the first frame"))?;
    let window = bounding_window(&mask0).unwrap_or((h, w));
    let mut state = TrackState { center, window };
    let mut out = Vec::with_capacity(trial.frames.len());
    for f in &trial.frames {
        let mask = segment_nail(&blank_roi(f, roi), &config.segment).stage("track")?;
        let weights: Vec<f64> = mask.data.iter().map(|&m| f64::from(u8::from(m))).collect();
        let (res, _) = mean_shift_track(&weights, h, w, state, 0.05, 50).stage("track")?;
        state = res.state;
        out.push(res);
    }
    Ok(out)
}

pub fn track_csv(results: &[TrackResult]) -> String {
    let mut s = String::from("frame,row,col,height,width,iterations,lost\n");
    for (i, r) in results.iter().enumerate() {
        let st = r.state;
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{},{}",
            st.center.0, st.center.1, st.window.0, st.window.1, r.iterations, r.lost
        );
    }
    s
}

/// Centres every frame on the first frame's nail, registers each to the
/// centred reference frame `reference`, and writes the aligned frames and
/// `energy.csv` (`frame,step,energy`) under `out`.
pub fn align_trial(config: &PipelineConfig, dir: &Path, reference: usize, out: &Path) -> Result<usize> {
    let trial = load(dir)?;
    let first = trial
        .frames
        .first()
        .ok_or_else(|| Error::stage("align", "trial without frames"))?;
    let size = (first.height(), first.width());
    let roi = roi_for(config, size);
    let mask = segment_nail(&blank_roi(first, roi), &config.segment).stage("track")?;
    let (dr, dc) = centering_shift(&mask, size).stage("track")?;
    let centred: Vec<_> = trial
        .frames
        .iter()
        .map(|f| shift_frame(&blank_roi(f, roi), dr, dc, size))
        .collect();
    let r = centred
        .get(reference)
        .ok_or_else(|| Error::stage("align", format!("reference frame {reference} out of range")))?;
    let cfg = config.align.config.clone().unwrap_or_else(|| AlignmentConfig::for_canvas(size.0));
    std::fs::create_dir_all(out).stage("io")?;
    let results: Vec<_> = centred.par_iter().map(|f| align(r, f, &cfg).stage("align")).collect::<Result<_>>()?;
    let mut energy = String::from("frame,step,energy\n");
    for (i, res) in results.iter().enumerate() {
        write_frame(&frame_path(out, i, res.aligned.channels()), &res.aligned).stage("io")?;
        for (k, e) in res.trace.iter().enumerate() {
            let _ = writeln!(energy, "{i},{k},{e}");
        }
    }
    write(&out.join("energy.csv"), &energy)?;
    Ok(results.len())
}

/// Contact point and the torque-calibrated force stream of a trial.
pub fn calibrate(config: &PipelineConfig, dir: &Path) -> Result<(ContactPoint, String)> {
    let trial = load(dir)?;
    let contact = trial_contact(&trial.wrenches, &trial.surface, &config.contact).stage("calibrate")?;
    let mut s = String::from("time,fx,fy,fz,tx,ty,tz\n");
    for w in calibrate_torques(&trial.wrenches, &contact) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            w.timestamp, w.f[0], w.f[1], w.f[2], w.tau_prime[0], w.tau_prime[1], w.tau_prime[2]
        );
    }
    Ok((contact, s))
}

/// Per-frame training labels of a synchronised trial:
/// `frame,time,fx,fy,fz,tx,ty,tz,c1,c2`.
pub fn labels_csv(config: &PipelineConfig, dir: &Path) -> Result<String> {
    let synced = sync(config, dir)?;
    let trial = &synced.trial;
    let contact = trial_contact(&trial.wrenches, &trial.surface, &config.contact).stage("calibrate")?;
    let mut s = String::from("frame,time,fx,fy,fz,tx,ty,tz,c1,c2\n");
    for (i, w) in synced.labels.iter().enumerate() {
        let t = frame_label(trial, i, w, &contact);
        let _ = write!(s, "{i},{}", trial.frames[i].timestamp);
        for v in t.0 {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn save(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).stage("io")?;
    }
    write(path, text)
}
