//! Finger segmentation, mean-shift tracking and integer-pixel centering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{ImageFrame, CANONICAL_SIZE};

/// Hexcone RGB → HSV for one pixel; hue in degrees `[0, 360)`, zero when
/// the pixel is achromatic.
pub fn rgb_to_hsv_pixel(r: f64, g: f64, b: f64) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return [0.0, s, max];
    }
    let h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let h = if h < 0.0 { h + 360.0 } else { h };
    [if h >= 360.0 { 0.0 } else { h }, s, max]
}

pub fn hsv_to_rgb_pixel(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// HSV planes of a colour frame. The result is not an [`ImageFrame`] since
/// hue lives in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    pub height: usize,
    pub width: usize,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn rgb_to_hsv(frame: &ImageFrame) -> Result<HsvImage> {
    if frame.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "HSV conversion needs 3 channels, got {}",
            frame.channels()
        )));
    }
    let n = frame.height() * frame.width();
    let (mut h, mut s, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in frame.data().chunks_exact(3) {
        let [a, b, c] = rgb_to_hsv_pixel(px[0], px[1], px[2]);
        h.push(a);
        s.push(b);
        v.push(c);
    }
    Ok(HsvImage {
        height: frame.height(),
        width: frame.width(),
        h,
        s,
        v,
    })
}

pub fn hsv_to_rgb(hsv: &HsvImage, timestamp: f64) -> Result<ImageFrame> {
    let mut data = Vec::with_capacity(hsv.h.len() * 3);
    for k in 0..hsv.h.len() {
        data.extend(hsv_to_rgb_pixel(hsv.h[k], hsv.s[k], hsv.v[k]));
    }
    ImageFrame::from_clamped(hsv.height, hsv.width, 3, data, timestamp)
}

/// Hue interval in degrees; `lo > hi` wraps through 0°.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HueBand {
    pub lo: f64,
    pub hi: f64,
}

impl HueBand {
    pub fn contains(&self, h: f64) -> bool {
        if self.lo <= self.hi {
            (self.lo..=self.hi).contains(&h)
        } else {
            h >= self.lo || h <= self.hi
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentBands {
    pub hue: HueBand,
    /// Inclusive saturation interval.
    pub sat: (f64, f64),
}

impl Default for SegmentBands {
    /// Matches the synthetic generator's skin and nail palette.
    fn default() -> Self {
        Self {
            hue: HueBand { lo: 300.0, hi: 50.0 },
            sat: (0.28, 1.0),
        }
    }
}

/// Binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Mean `(row, col)` of set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
        for (k, &b) in self.data.iter().enumerate() {
            if b {
                sr += (k / self.width) as f64;
                sc += (k % self.width) as f64;
                n += 1;
            }
        }
        (n > 0).then(|| (sr / n as f64, sc / n as f64))
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Largest 4-connected component of pixels whose hue and saturation fall in
/// the bands. Ties between equal-size components go to the one found first
/// in row-major order.
pub fn segment_nail(frame: &ImageFrame, bands: &SegmentBands) -> Result<Mask> {
    let hsv = rgb_to_hsv(frame)?;
    let (h, w) = (hsv.height, hsv.width);
    let inband: Vec<bool> = (0..h * w)
        .map(|k| bands.hue.contains(hsv.h[k]) && (bands.sat.0..=bands.sat.1).contains(&hsv.s[k]))
        .collect();
    Ok(largest_component(&inband, h, w))
}

pub fn largest_component(inband: &[bool], h: usize, w: usize) -> Mask {
    let mut label = vec![0u32; h * w];
    let mut best = (0usize, 0u32);
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !inband[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        let mut size = 0usize;
        while let Some(k) = stack.pop() {
            size += 1;
            let (r, c) = (k / w, k % w);
            let mut visit = |n: usize| {
                if inband[n] && label[n] == 0 {
                    label[n] = next;
                    stack.push(n);
                }
            };
            if r > 0 {
                visit(k - w);
            }
            if r + 1 < h {
                visit(k + w);
            }
            if c > 0 {
                visit(k - 1);
            }
            if c + 1 < w {
                visit(k + 1);
            }
        }
        if size > best.0 {
            best = (size, next);
        }
    }
    Mask {
        height: h,
        width: w,
        data: label.iter().map(|&l| best.1 != 0 && l == best.1).collect(),
    }
}

/// Mean-shift window state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    /// Window centre `(row, col)`.
    pub center: (f64, f64),
    /// Window size `(height, width)` in pixels.
    pub window: (usize, usize),
}

impl TrackState {
    fn bounds(&self, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let (wh, ww) = (self.window.0.min(h), self.window.1.min(w));
        let r0 = (self.center.0 - (wh as f64 - 1.0) / 2.0).round().clamp(0.0, (h - wh) as f64) as usize;
        let c0 = (self.center.1 - (ww as f64 - 1.0) / 2.0).round().clamp(0.0, (w - ww) as f64) as usize;
        (r0, r0 + wh, c0, c0 + ww)
    }

    /// True when the window fits inside an `h × w` frame.
    pub fn is_valid(&self, h: usize, w: usize) -> bool {
        let (hh, ww) = (self.window.0 as f64, self.window.1 as f64);
        self.window.0 >= 1
            && self.window.1 >= 1
            && self.center.0 - (hh - 1.0) / 2.0 >= -0.5
            && self.center.1 - (ww - 1.0) / 2.0 >= -0.5
            && self.center.0 + (hh - 1.0) / 2.0 <= h as f64 - 0.5
            && self.center.1 + (ww - 1.0) / 2.0 <= w as f64 - 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub state: TrackState,
    pub iterations: usize,
    pub lost: bool,
}

/// Box-kernel mean shift on a non-negative weight map. Also returns the
/// shift magnitude of every iteration.
pub fn mean_shift_track(
    weights: &[f64],
    height: usize,
    width: usize,
    initial: TrackState,
    epsilon: f64,
    max_iter: usize,
) -> Result<(TrackResult, Vec<f64>)> {
    if weights.len() != height * width {
        return Err(Error::InvalidInput("weight map size mismatch".into()));
    }
    if weights.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput("weights must be non-negative".into()));
    }
    if !initial.is_valid(height, width) {
        return Err(Error::InvalidInput("initial window outside the frame".into()));
    }
    let mut state = initial;
    let mut shifts = Vec::new();
    for it in 1..=max_iter {
        let (r0, r1, c0, c1) = state.bounds(height, width);
        let (mut sw, mut sr, mut sc) = (0.0, 0.0, 0.0);
        for r in r0..r1 {
            for c in c0..c1 {
                let v = weights[r * width + c];
                sw += v;
                sr += v * r as f64;
                sc += v * c as f64;
            }
        }
        if sw == 0.0 {
            return Ok((
                TrackResult {
                    state: initial,
                    iterations: it,
                    lost: true,
                },
                shifts,
            ));
        }
        let target = (sr / sw, sc / sw);
        // keep the window inside the frame
        let half = ((state.window.0 as f64 - 1.0) / 2.0, (state.window.1 as f64 - 1.0) / 2.0);
        let next = (
            target.0.clamp(half.0, height as f64 - 1.0 - half.0),
            target.1.clamp(half.1, width as f64 - 1.0 - half.1),
        );
        let shift = (next.0 - state.center.0).hypot(next.1 - state.center.1);
        shifts.push(shift);
        state.center = next;
        if shift < epsilon {
            return Ok((
                TrackResult {
                    state,
                    iterations: it,
                    lost: false,
                },
                shifts,
            ));
        }
    }
    Ok((
        TrackResult {
            state,
            iterations: max_iter,
            lost: false,
        },
        shifts,
    ))
}

/// Canonical centre `((H − 1)/2, (W − 1)/2)` of an output canvas.
pub fn canonical_center(size: (usize, usize)) -> (f64, f64) {
    ((size.0 as f64 - 1.0) / 2.0, (size.1 as f64 - 1.0) / 2.0)
}

/// Integer shift that moves the mask centroid onto the canonical centre of
/// an output canvas of `size`. Returns `(d_row, d_col)`.
pub fn centering_shift(mask: &Mask, size: (usize, usize)) -> Result<(isize, isize)> {
    let (cr, cc) = mask.centroid().ok_or(Error::CannotCenter)?;
    let (tr, tc) = canonical_center(size);
    Ok(((tr - cr).round() as isize, (tc - cc).round() as isize))
}

/// Translates `frame` so the mask centroid lands on the canonical centre of
/// an output canvas of `size`; uncovered pixels are 0.
pub fn center_nail_to(frame: &ImageFrame, mask: &Mask, size: (usize, usize)) -> Result<ImageFrame> {
    if mask.height != frame.height() || mask.width != frame.width() {
        return Err(Error::InvalidInput("mask and frame differ in size".into()));
    }
    let (dr, dc) = centering_shift(mask, size)?;
    Ok(shift_frame(frame, dr, dc, size))
}

/// [`center_nail_to`] on the canonical 111×105 canvas.
pub fn center_nail(frame: &ImageFrame, mask: &Mask) -> Result<ImageFrame> {
    center_nail_to(frame, mask, CANONICAL_SIZE)
}

/// `out(r, c) = in(r − dr, c − dc)` on an output canvas of `size`, zero fill.
pub fn shift_frame(frame: &ImageFrame, dr: isize, dc: isize, size: (usize, usize)) -> ImageFrame {
    let ch = frame.channels();
    let mut out = ImageFrame::zeros(size.0, size.1, ch);
    out.timestamp = frame.timestamp;
    for r in 0..size.0 {
        let sr = r as isize - dr;
        if sr < 0 || sr >= frame.height() as isize {
            continue;
        }
        for c in 0..size.1 {
            let sc = c as isize - dc;
            if sc < 0 || sc >= frame.width() as isize {
                continue;
            }
            for k in 0..ch {
                out.set(r, c, k, frame.get(sr as usize, sc as usize, k));
            }
        }
    }
    out
}

/// Shifts a mask the same way as [`shift_frame`].
pub fn shift_mask(mask: &Mask, dr: isize, dc: isize, size: (usize, usize)) -> Mask {
    let mut data = vec![false; size.0 * size.1];
    for r in 0..size.0 {
        let sr = r as isize - dr;
        if sr < 0 || sr >= mask.height as isize {
            continue;
        }
        for c in 0..size.1 {
            let sc = c as isize - dc;
            if sc >= 0 && sc < mask.width as isize {
                data[r * size.1 + c] = mask.data[sr as usize * mask.width + sc as usize];
            }
        }
    }
    Mask {
        height: size.0,
        width: size.1,
        data,
    }
}
