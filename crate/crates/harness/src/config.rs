//! Pipeline configuration, read from a TOML key-value file.

use std::path::{Path, PathBuf};

use nailforce_core::alignment::AlignmentConfig;
use nailforce_core::calibration::ContactConfig;
use nailforce_core::imaging::SegmentBands;
use nailforce_core::smooth::SmootherConfig;
use nailforce_core::sync::Roi;
use nailforce_core::synth::GeneratorConfig;
use nailforce_learn::gp::{GpConfig, MultiGpConfig};
use nailforce_learn::PredictorConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splits::SplitScheme;

/// Where trials come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Source {
    /// Generated on the fly, never written to disk in full.
    Synthetic {
        #[serde(default)]
        generator: GeneratorConfig,
    },
    /// A directory of trial directories as written by `synth`.
    Dataset { dir: PathBuf },
}

impl Default for Source {
    fn default() -> Self {
        Source::Synthetic {
            generator: GeneratorConfig::default(),
        }
    }
}

/// Which frames become training and test samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Every `test_stride`-th frame of a test trial is evaluated.
    pub test_stride: usize,
    /// Approximate number of training frames per model, spread evenly over
    /// its training trials.
    pub train_frames: usize,
    /// Approximate number of validation frames per model (neural predictors).
    pub val_frames: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            test_stride: 1,
            train_frames: 1500,
            val_frames: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignStage {
    pub enabled: bool,
    /// Also refine every frame, starting from its trial's transform.
    pub per_frame: bool,
    /// Defaults to the canvas-scaled configuration with `max_iter` and
    /// `tolerance` below.
    pub config: Option<AlignmentConfig>,
    pub max_iter: [usize; 3],
    pub tolerance: f64,
}

impl Default for AlignStage {
    fn default() -> Self {
        Self {
            enabled: true,
            per_frame: false,
            config: None,
            max_iter: [20, 20, 20],
            tolerance: 1e-4,
        }
    }
}

impl AlignStage {
    pub fn resolve(&self, height: usize) -> AlignmentConfig {
        self.config.clone().unwrap_or_else(|| {
            let mut c = AlignmentConfig::for_canvas(height);
            c.max_iter = self.max_iter;
            c.tolerance = self.tolerance;
            c
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothStage {
    pub enabled: bool,
    pub smoother: SmootherConfig,
}

impl Default for SmoothStage {
    fn default() -> Self {
        Self {
            enabled: true,
            smoother: SmootherConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for splits, frame sampling and model initialisation.
    pub seed: u64,
    /// Artifact directory.
    pub output: PathBuf,
    pub source: Source,
    pub split: SplitScheme,
    pub predictor: PredictorConfig,
    pub features: FeatureConfig,
    /// Largest camera/force clock offset searched (s).
    pub max_offset_s: f64,
    /// LED region in the raw frames; defaults to the generator's placement.
    pub led_roi: Option<Roi>,
    pub contact: ContactConfig,
    pub segment: SegmentBands,
    pub align: AlignStage,
    pub smooth: SmoothStage,
    /// Evaluate the generator's inverse map alongside the model
    /// (synthetic data only).
    pub oracle: bool,
    /// Report the marker mounting offset that best reconciles each model's
    /// test predictions with the recorded labels.
    pub marker_search: bool,
    /// Write every trained model to `models/`.
    pub save_models: bool,
}

/// The GP configuration used when none is given: exact inference with
/// hyperparameters fitted on a subset.
pub fn default_predictor() -> PredictorConfig {
    PredictorConfig::Gp {
        gp: MultiGpConfig {
            gp: GpConfig {
                max_iter: 60,
                starts: 1,
                ..GpConfig::default()
            },
            hyper_subset: Some(300),
            ..MultiGpConfig::default()
        },
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("nailforce-out"),
            source: Source::default(),
            split: SplitScheme::default(),
            predictor: default_predictor(),
            features: FeatureConfig::default(),
            max_offset_s: 2.0,
            led_roi: None,
            contact: ContactConfig::default(),
            segment: SegmentBands::default(),
            align: AlignStage::default(),
            smooth: SmoothStage::default(),
            oracle: true,
            marker_search: true,
            save_models: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.features.test_stride == 0 || self.features.train_frames == 0 {
            return Err(Error::Config("test stride and training frame budget must be ≥ 1".into()));
        }
        if !(self.max_offset_s > 0.0) {
            return Err(Error::Config("max_offset_s must be positive".into()));
        }
        if let Source::Synthetic { generator } = &self.source {
            generator.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.smooth.smoother.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Applies a `--seed` override to the pipeline and the generator.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        if let Source::Synthetic { generator } = &mut self.source {
            generator.seed = seed;
        }
    }
}
