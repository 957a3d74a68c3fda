//! Neural predictors.

pub mod conv;
pub mod fd;
pub mod fdnet;
pub mod rnn;
pub mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use conv::{conv2d, maxpool, Cnn, CnnSpec, ConvLayerSpec, LossNorm, Map, Shape};
pub use fd::{fd_layer_moments, fd_unit_moments, sigmoid, unit_moments, Activation, UnitMoments};
pub use fdnet::{FdNet, FdNetSpec};
pub use rnn::{FdRnn, RnnSpec, Sequence};
pub use train::{batch_loss_grad, gradient_check, mean_loss, train, TrainConfig, TrainReport, Trainable};

/// One input vector with its target vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// `count` draws from the Glorot uniform distribution for a layer with the
/// given fan-in and fan-out.
pub(crate) fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize, count: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..count).map(|_| rng.random_range(-a..a)).collect()
}
