//! Synchronization of the camera and force clocks through the LED telegraph
//! recorded in both streams.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::ImageFrame;
use crate::trial::Trial;
use crate::wrench::Wrench;

/// A 0/1 sequence sampled at `rate` Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySignal {
    samples: Vec<u8>,
    rate: f64,
}

impl BinarySignal {
    pub fn new(samples: Vec<u8>, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidInput(format!("signal rate {rate} must be positive")));
        }
        if samples.iter().any(|&s| s > 1) {
            return Err(Error::InvalidInput("binary signal holds values other than 0/1".into()));
        }
        Ok(Self { samples, rate })
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    fn is_constant(&self) -> bool {
        self.samples.windows(2).all(|w| w[0] == w[1])
    }
}

/// Rectangle of pixels holding the LED.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Roi {
    pub fn square(row: usize, col: usize, size: usize) -> Self {
        Self {
            row,
            col,
            height: size,
            width: size,
        }
    }
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Thresholds the mean ROI intensity of each frame halfway between its
/// 10th and 90th percentiles.
pub fn extract_led(frames: &[ImageFrame], roi: Roi, rate: f64) -> Result<BinarySignal> {
    let Some(first) = frames.first() else {
        return Err(Error::NoSignal("no frames".into()));
    };
    if roi.height == 0 || roi.width == 0 || roi.row + roi.height > first.height() || roi.col + roi.width > first.width() {
        return Err(Error::InvalidInput(format!("LED region {roi:?} outside the frame")));
    }
    let means: Vec<f64> = frames
        .iter()
        .map(|f| {
            let mut s = 0.0;
            for r in roi.row..roi.row + roi.height {
                for c in roi.col..roi.col + roi.width {
                    for ch in 0..f.channels() {
                        s += f.get(r, c, ch);
                    }
                }
            }
            s / (roi.height * roi.width * f.channels()) as f64
        })
        .collect();
    let mut sorted = means.clone();
    sorted.sort_by(f64::total_cmp);
    let p10 = percentile_sorted(&sorted, 0.1);
    let p90 = percentile_sorted(&sorted, 0.9);
    if p90 - p10 <= 1e-9 {
        return Err(Error::NoSignal("LED region intensity is constant".into()));
    }
    let mid = 0.5 * (p10 + p90);
    BinarySignal::new(means.iter().map(|&m| u8::from(m > mid)).collect(), rate)
}

/// Zero-order hold resampling: each output sample copies the input sample
/// nearest in time, the earlier one on ties.
pub fn resample(signal: &BinarySignal, target_rate: f64) -> Result<BinarySignal> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(Error::InvalidInput(format!("target rate {target_rate} must be positive")));
    }
    let n = signal.len();
    if n == 0 {
        return BinarySignal::new(Vec::new(), target_rate);
    }
    let len = (signal.duration() * target_rate).round() as usize;
    let samples = (0..len)
        .map(|i| {
            // ties between two samples go to the earlier one
            let x = i as f64 * signal.rate / target_rate;
            let idx = (x - 0.5 - 1e-9 * x.max(1.0)).ceil().max(0.0) as usize;
            signal.samples[idx.min(n - 1)]
        })
        .collect();
    BinarySignal::new(samples, target_rate)
}

/// Pearson correlation of `a[n - lag]` with `b[n]` over the overlap. `None`
/// when either side is constant there.
fn lagged_correlation(a: &[u8], b: &[u8], lag: i64) -> Option<f64> {
    let start = lag.max(0) as usize;
    let end = (b.len() as i64).min(a.len() as i64 + lag).max(0) as usize;
    if end <= start + 1 {
        return None;
    }
    let n = (end - start) as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in start..end {
        let x = a[(i as i64 - lag) as usize] as f64;
        let y = b[i] as f64;
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
        sab += x * y;
    }
    let va = saa - sa * sa / n;
    let vb = sbb - sb * sb / n;
    if va <= 1e-12 || vb <= 1e-12 {
        return None;
    }
    Some(((sab - sa * sb / n) / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Integer lag maximising the normalized cross-correlation, with the
/// convention `b[n] ≈ a[n − lag]`. Ties go to the smallest `|lag|`, then to
/// the negative side.
pub fn find_offset(a: &BinarySignal, b: &BinarySignal, max_lag: usize) -> Result<(i64, f64)> {
    if (a.rate - b.rate).abs() > 1e-9 * a.rate.max(b.rate) {
        return Err(Error::InvalidInput(format!("rates differ: {} vs {} Hz", a.rate, b.rate)));
    }
    if a.is_constant() || b.is_constant() {
        return Err(Error::NoSignal("constant LED signal".into()));
    }
    let mut best: Option<(i64, f64)> = None;
    let max_lag = max_lag as i64;
    for mag in 0..=max_lag {
        for lag in if mag == 0 { vec![0] } else { vec![-mag, mag] } {
            if let Some(score) = lagged_correlation(&a.samples, &b.samples, lag) {
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((lag, score));
                }
            }
        }
    }
    best.ok_or_else(|| Error::NoSignal("signals never overlap with variation".into()))
}

/// Linearly interpolated wrench at time `t` on the force clock; clamped at
/// the ends of the log.
pub fn interpolate_wrench(wrenches: &[Wrench], t: f64) -> Result<Wrench> {
    let (Some(first), Some(last)) = (wrenches.first(), wrenches.last()) else {
        return Err(Error::InvalidInput("empty wrench stream".into()));
    };
    let mut out = if t <= first.timestamp {
        *first
    } else if t >= last.timestamp {
        *last
    } else {
        let i = wrenches.partition_point(|w| w.timestamp <= t);
        let (a, b) = (&wrenches[i - 1], &wrenches[i]);
        a.lerp(b, (t - a.timestamp) / (b.timestamp - a.timestamp))
    };
    out.timestamp = t;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncConfig {
    /// Largest clock offset searched, seconds.
    pub max_offset_s: f64,
    /// LED region in the raw frames.
    pub roi: Roi,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            max_offset_s: 2.0,
            roi: Roi::square(0, 0, 2),
        }
    }
}

/// A trial whose frame timestamps live on the force clock, each frame with
/// its interpolated wrench.
#[derive(Debug, Clone)]
pub struct SyncedTrial {
    pub trial: Trial,
    /// Seconds added to camera timestamps.
    pub offset: f64,
    pub lag_frames: i64,
    pub score: f64,
    pub labels: Vec<Wrench>,
}

/// Recovers the camera offset from the LED streams and labels every frame.
pub fn synchronize_trial(trial: &Trial, config: &SyncConfig) -> Result<SyncedTrial> {
    let video = extract_led(&trial.frames, config.roi, trial.frame_rate)?;
    let force = resample(&BinarySignal::new(trial.led_force.clone(), trial.force_rate)?, trial.frame_rate)?;
    let max_lag = (config.max_offset_s * trial.frame_rate).ceil() as usize;
    let (lag, score) = find_offset(&video, &force, max_lag)?;
    let offset = lag as f64 / trial.frame_rate;
    let mut synced = trial.clone();
    let mut labels = Vec::with_capacity(trial.frames.len());
    for f in &mut synced.frames {
        f.timestamp += offset;
        labels.push(interpolate_wrench(&trial.wrenches, f.timestamp)?);
    }
    Ok(SyncedTrial {
        trial: synced,
        offset,
        lag_frames: lag,
        score,
        labels,
    })
}
