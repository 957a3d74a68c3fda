//! Grasp-and-lift trials and the dataset container.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::ImageFrame;
use crate::surface::SurfaceSpec;
use crate::wrench::Wrench;

pub const WEIGHTS_G: [u32; 3] = [165, 330, 660];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    Thumb,
    Index,
}

impl Finger {
    pub const BOTH: [Finger; 2] = [Finger::Thumb, Finger::Index];

    pub fn name(self) -> &'static str {
        match self {
            Finger::Thumb => "thumb",
            Finger::Index => "index",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "thumb" => Ok(Finger::Thumb),
            "index" => Ok(Finger::Index),
            other => Err(Error::InvalidInput(format!("unknown finger '{other}'"))),
        }
    }
}

/// Identifies one trial without carrying its data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialKey {
    pub participant: u32,
    pub finger: Finger,
    pub weight_g: u32,
    pub surface_id: u8,
    pub repetition: u32,
    /// Recording session; distinct sessions are a week apart.
    pub session: u32,
}

/// One finger's view of a grasp-and-lift episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub key: TrialKey,
    pub surface: SurfaceSpec,
    /// Recorded marker angle per frame, degrees.
    pub marker_angles: Vec<f64>,
    /// Marker angle at the reference pose, degrees.
    pub theta_r_deg: f64,
    pub frames: Vec<ImageFrame>,
    pub wrenches: Vec<Wrench>,
    pub led_video: Vec<u8>,
    pub led_force: Vec<u8>,
    pub frame_rate: f64,
    pub force_rate: f64,
}

impl Trial {
    /// Checks the structural invariants of a trial.
    pub fn validate(&self) -> Result<()> {
        if !WEIGHTS_G.contains(&self.key.weight_g) {
            return Err(Error::InvalidInput(format!(
                "weight {} g not in {:?}",
                self.key.weight_g, WEIGHTS_G
            )));
        }
        // the key names the object condition; the thumb always rests on the flat side
        let expected = match self.key.finger {
            Finger::Thumb => SurfaceSpec::thumb().id,
            Finger::Index => self.key.surface_id,
        };
        if self.surface.id != expected {
            return Err(Error::InvalidInput("surface id disagrees with trial key".into()));
        }
        if !(self.frame_rate > 0.0 && self.force_rate > 0.0) {
            return Err(Error::InvalidInput("sampling rates must be positive".into()));
        }
        let n = self.frames.len();
        if self.marker_angles.len() != n || self.led_video.len() != n {
            return Err(Error::InvalidInput(
                "marker angles and video LED need one entry per frame".into(),
            ));
        }
        if self.led_force.len() != self.wrenches.len() {
            return Err(Error::InvalidInput(
                "force LED needs one entry per wrench sample".into(),
            ));
        }
        if self.led_video.iter().chain(&self.led_force).any(|&b| b > 1) {
            return Err(Error::InvalidInput("LED states must be 0 or 1".into()));
        }
        if !strictly_increasing(self.frames.iter().map(|f| f.timestamp)) {
            return Err(Error::InvalidInput("frame timestamps not strictly increasing".into()));
        }
        if !strictly_increasing(self.wrenches.iter().map(|w| w.timestamp)) {
            return Err(Error::InvalidInput("wrench timestamps not strictly increasing".into()));
        }
        if let Some(w) = self.wrenches.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite wrench at t = {}",
                w.timestamp
            )));
        }
        Ok(())
    }

    pub fn frame_timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }
}

fn strictly_increasing(mut it: impl Iterator<Item = f64>) -> bool {
    let Some(mut prev) = it.next() else {
        return true;
    };
    for t in it {
        if !(t > prev) {
            return false;
        }
        prev = t;
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

/// Trials with exactly one split tag each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    trials: Vec<Trial>,
    tags: Vec<SplitTag>,
}

impl Dataset {
    pub fn new(trials: Vec<Trial>, tags: Vec<SplitTag>) -> Result<Self> {
        if trials.len() != tags.len() {
            return Err(Error::InvalidInput(format!(
                "{} trials but {} split tags",
                trials.len(),
                tags.len()
            )));
        }
        Ok(Self { trials, tags })
    }

    /// Every trial tagged for training.
    pub fn all_train(trials: Vec<Trial>) -> Self {
        let tags = vec![SplitTag::Train; trials.len()];
        Self { trials, tags }
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn tags(&self) -> &[SplitTag] {
        &self.tags
    }

    pub fn keys(&self) -> Vec<TrialKey> {
        self.trials.iter().map(|t| t.key).collect()
    }

    pub fn with_tags(mut self, tags: Vec<SplitTag>) -> Result<Self> {
        if tags.len() != self.trials.len() {
            return Err(Error::InvalidInput("split tag count mismatch".into()));
        }
        self.tags = tags;
        Ok(self)
    }

    pub fn split(&self, tag: SplitTag) -> impl Iterator<Item = &Trial> {
        self.trials
            .iter()
            .zip(&self.tags)
            .filter(move |(_, t)| **t == tag)
            .map(|(trial, _)| trial)
    }
}
