//! On-disk trial layout.
//!
//! One directory per trial:
//!
//! ```text
//! meta            key = value lines (TOML)
//! frames.csv      index,timestamp,theta_deg
//! frame_000000.ppm  16-bit frames (.pgm for single-channel)
//! wrench.csv      timestamp,fx,fy,fz,tx,ty,tz
//! led_video.csv   index,state
//! led_force.csv   index,state
//! truth.json      generator metadata, synthetic trials only
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::ImageFrame;
use crate::surface::SurfaceSpec;
use crate::synth::TrialTruth;
use crate::trial::{Finger, Trial, TrialKey};
use crate::wrench::Wrench;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialMeta {
    pub participant: u32,
    pub finger: String,
    pub weight_g: u32,
    /// Object surface of the grasp.
    pub surface_id: u8,
    /// Surface under this finger.
    pub contact_surface_id: u8,
    pub c1: f64,
    pub c2: f64,
    pub theta_r_deg: f64,
    pub repetition: u32,
    pub session: u32,
    pub frame_rate: f64,
    pub force_rate: f64,
    pub n_frames: usize,
    pub channels: usize,
}

impl TrialMeta {
    pub fn of(trial: &Trial) -> Self {
        Self {
            participant: trial.key.participant,
            finger: trial.key.finger.name().to_string(),
            weight_g: trial.key.weight_g,
            surface_id: trial.key.surface_id,
            contact_surface_id: trial.surface.id,
            c1: trial.surface.c1,
            c2: trial.surface.c2,
            theta_r_deg: trial.theta_r_deg,
            repetition: trial.key.repetition,
            session: trial.key.session,
            frame_rate: trial.frame_rate,
            force_rate: trial.force_rate,
            n_frames: trial.frames.len(),
            channels: trial.frames.first().map_or(3, |f| f.channels()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn frame_path(dir: &Path, index: usize, channels: usize) -> PathBuf {
    let ext = if channels == 1 { "pgm" } else { "ppm" };
    dir.join(format!("frame_{index:06}.{ext}"))
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes a 1- or 3-channel frame as a 16-bit portable pixmap/graymap.
pub fn write_frame(path: &Path, frame: &ImageFrame) -> Result<()> {
    let (h, w) = (frame.height() as u32, frame.width() as u32);
    let data: Vec<u16> = frame.data().iter().map(|&v| to_u16(v)).collect();
    let saved = match frame.channels() {
        1 => ImageBuffer::<Luma<u16>, _>::from_raw(w, h, data).map(|b| b.save(path)),
        3 => ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, data).map(|b| b.save(path)),
        c => return Err(Error::InvalidInput(format!("cannot store a {c}-channel frame"))),
    };
    match saved {
        Some(Ok(())) => Ok(()),
        Some(Err(e)) => Err(Error::format(path, e.to_string())),
        None => Err(Error::format(path, "pixel buffer size mismatch")),
    }
}

pub fn read_frame(path: &Path, channels: usize, timestamp: f64) -> Result<ImageFrame> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<u16> = match channels {
        1 => img.into_luma16().into_raw(),
        3 => img.into_rgb16().into_raw(),
        c => return Err(Error::format(path, format!("unsupported channel count {c}"))),
    };
    let data = raw.iter().map(|&v| v as f64 / 65535.0).collect();
    ImageFrame::new(h, w, channels, data, timestamp)
}

fn parse_csv(path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    let text = read_file(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match row {
            Ok(r) if r.len() == columns => rows.push(r),
            Ok(r) => return Err(Error::format(path, format!("line {}: {} columns, expected {columns}", n + 1, r.len()))),
            Err(e) => return Err(Error::format(path, format!("line {}: {e}", n + 1))),
        }
    }
    Ok(rows)
}

fn write_states(path: &Path, states: &[u8]) -> Result<()> {
    let mut s = String::from("index,state\n");
    for (i, v) in states.iter().enumerate() {
        writeln!(s, "{i},{v}").expect("string write");
    }
    write_file(path, &s)
}

fn read_states(path: &Path) -> Result<Vec<u8>> {
    parse_csv(path, 2)?
        .into_iter()
        .map(|r| match r[1] {
            0.0 => Ok(0),
            1.0 => Ok(1),
            v => Err(Error::format(path, format!("LED state {v} is not 0/1"))),
        })
        .collect()
}

pub fn write_wrenches(path: &Path, wrenches: &[Wrench]) -> Result<()> {
    let mut s = String::from("timestamp,fx,fy,fz,tx,ty,tz\n");
    for w in wrenches {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            w.timestamp, w.f[0], w.f[1], w.f[2], w.tau[0], w.tau[1], w.tau[2]
        )
        .expect("string write");
    }
    write_file(path, &s)
}

pub fn read_wrenches(path: &Path) -> Result<Vec<Wrench>> {
    Ok(parse_csv(path, 7)?
        .into_iter()
        .map(|r| Wrench::new([r[1], r[2], r[3]], [r[4], r[5], r[6]], r[0]))
        .collect())
}

/// Writes a trial directory, creating it if needed.
pub fn write_trial(dir: &Path, trial: &Trial) -> Result<()> {
    trial.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = TrialMeta::of(trial);
    let text = toml::to_string(&meta).map_err(|e| Error::format(dir.join("meta"), e.to_string()))?;
    write_file(&dir.join("meta"), &text)?;
    let mut frames = String::from("index,timestamp,theta_deg\n");
    for (i, (f, th)) in trial.frames.iter().zip(&trial.marker_angles).enumerate() {
        writeln!(frames, "{i},{},{th}", f.timestamp).expect("string write");
        write_frame(&frame_path(dir, i, f.channels()), f)?;
    }
    write_file(&dir.join("frames.csv"), &frames)?;
    write_wrenches(&dir.join("wrench.csv"), &trial.wrenches)?;
    write_states(&dir.join("led_video.csv"), &trial.led_video)?;
    write_states(&dir.join("led_force.csv"), &trial.led_force)
}

pub fn read_meta(dir: &Path) -> Result<TrialMeta> {
    let path = dir.join("meta");
    toml::from_str(&read_file(&path)?).map_err(|e| Error::format(&path, e.to_string()))
}

pub fn read_trial(dir: &Path) -> Result<Trial> {
    let meta = read_meta(dir)?;
    let meta_path = dir.join("meta");
    let finger = Finger::parse(&meta.finger).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let surface = SurfaceSpec::catalog(meta.contact_surface_id).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let rows = parse_csv(&dir.join("frames.csv"), 3)?;
    if rows.len() != meta.n_frames {
        return Err(Error::format(dir.join("frames.csv"), format!("{} rows for {} frames", rows.len(), meta.n_frames)));
    }
    let mut frames = Vec::with_capacity(rows.len());
    let mut marker_angles = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        frames.push(read_frame(&frame_path(dir, i, meta.channels), meta.channels, r[1])?);
        marker_angles.push(r[2]);
    }
    let trial = Trial {
        key: TrialKey {
            participant: meta.participant,
            finger,
            weight_g: meta.weight_g,
            surface_id: meta.surface_id,
            repetition: meta.repetition,
            session: meta.session,
        },
        surface,
        marker_angles,
        theta_r_deg: meta.theta_r_deg,
        frames,
        wrenches: read_wrenches(&dir.join("wrench.csv"))?,
        led_video: read_states(&dir.join("led_video.csv"))?,
        led_force: read_states(&dir.join("led_force.csv"))?,
        frame_rate: meta.frame_rate,
        force_rate: meta.force_rate,
    };
    trial.validate()?;
    Ok(trial)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_file(path)?).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_truth(dir: &Path, truth: &TrialTruth) -> Result<()> {
    write_json(&dir.join("truth.json"), truth)
}

/// Generator metadata, if the trial is synthetic.
pub fn read_truth(dir: &Path) -> Result<Option<TrialTruth>> {
    let path = dir.join("truth.json");
    if !path.exists() {
        return Ok(None);
    }
    read_json(&path).map(Some)
}

/// Directory name of a trial below a dataset root.
pub fn trial_dir_name(key: &TrialKey) -> String {
    format!(
        "p{:02}_s{}_{}_w{}_surf{:02}_r{}",
        key.participant,
        key.session,
        key.finger.name(),
        key.weight_g,
        key.surface_id,
        key.repetition
    )
}

/// Trial directories (those holding a `meta` file) directly below `root`, sorted.
pub fn list_trial_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join("meta").is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
