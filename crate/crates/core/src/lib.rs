//! Data preparation for fingertip force estimation from fingernail images:
//! domain types, a synthetic grasp generator, nail segmentation and tracking,
//! non-rigid alignment, stream synchronisation, wrench calibration and
//! output smoothing.

pub mod alignment;
pub mod calibration;
pub mod error;
pub mod frame;
pub mod imaging;
pub mod io;
pub mod smooth;
pub mod surface;
pub mod sync;
pub mod synth;
pub mod trial;
pub mod wrench;

pub use error::{Error, Result};
pub use frame::{flatten_image, unflatten_image, ChannelPolicy, ImageFrame};
pub use surface::{Material, SurfaceShape, SurfaceSpec};
pub use trial::{Dataset, Finger, SplitTag, Trial, TrialKey};
pub use wrench::{validate_ranges, Component, TargetVector, Wrench};
