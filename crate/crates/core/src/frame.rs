//! Image frames: row-major intensity grids in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RED: usize = 0;
pub const GREEN: usize = 1;
pub const BLUE: usize = 2;

/// Height and width of the canonical aligned nail image.
pub const CANONICAL_SIZE: (usize, usize) = (111, 105);

/// A camera observation. Pixel `(row, col)` channel `ch` lives at
/// `(row * width + col) * channels + ch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFrame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    pub timestamp: f64,
}

/// Which channels of a frame become features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelPolicy {
    Channel(usize),
    All,
}

impl Default for ChannelPolicy {
    /// Predictors read the green channel.
    fn default() -> Self {
        ChannelPolicy::Channel(GREEN)
    }
}

impl ImageFrame {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        timestamp: f64,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!(
                "frames have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidInput(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            timestamp,
        })
    }

    /// Builds a frame, clamping every intensity into `[0, 1]`.
    pub fn from_clamped(
        height: usize,
        width: usize,
        channels: usize,
        mut data: Vec<f64>,
        timestamp: f64,
    ) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, channels, data, timestamp)
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
            timestamp: 0.0,
        }
    }

    /// Stacks single-channel planes into one frame.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>], timestamp: f64) -> Result<Self> {
        let channels = planes.len();
        let n = height * width;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::InvalidInput("plane size mismatch".into()));
        }
        let mut data = vec![0.0; n * channels];
        for (ch, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                data[i * channels + ch] = *v;
            }
        }
        Self::from_clamped(height, width, channels, data, timestamp)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// Writes one intensity, clamped into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = value.clamp(0.0, 1.0);
    }

    /// One channel as a row-major plane.
    pub fn plane(&self, ch: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(ch)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.channels).map(|c| self.plane(c)).collect()
    }
}

/// Reshapes a frame into a feature vector, row-major, channels interleaved
/// when several are selected.
pub fn flatten_image(frame: &ImageFrame, policy: ChannelPolicy) -> Result<Vec<f64>> {
    if frame.is_empty() {
        return Err(Error::InvalidInput("empty frame".into()));
    }
    match policy {
        ChannelPolicy::All => Ok(frame.data.clone()),
        ChannelPolicy::Channel(ch) if ch < frame.channels => Ok(frame.plane(ch)),
        ChannelPolicy::Channel(ch) => Err(Error::InvalidInput(format!(
            "channel {ch} requested from a {}-channel frame",
            frame.channels
        ))),
    }
}

/// Inverse of [`flatten_image`] for a given shape.
pub fn unflatten_image(
    features: &[f64],
    height: usize,
    width: usize,
    channels: usize,
) -> Result<ImageFrame> {
    ImageFrame::new(height, width, channels, features.to_vec(), 0.0)
}
