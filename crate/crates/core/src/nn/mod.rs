//! Minimal deterministic neural-network engine.
//!
//! Fixed layer set (2D/3D convolution, max pooling, flatten, dense,
//! dropout, softmax), reverse-mode gradients, SGD with classical momentum,
//! and a regularized cross-entropy loss. Everything runs in f64 and is
//! bit-reproducible for a given seed, including across thread counts.

mod model_io;
mod network;
mod ops;
mod tensor;
mod train;

pub use model_io::{load_model, read_model_sidecar, save_model, write_model_sidecar, ModelSidecar};
pub use network::{ModelParams, Network, ParamLayout};
pub use ops::{
    conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, dense_backward,
    dense_forward, maxpool2d, maxpool2d_backward, softmax, Conv2dSpec, Conv3dSpec,
};
pub use tensor::Tensor;
pub use train::{cross_entropy_loss, l2_penalty, loss, train, EpochStats, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    pub(crate) fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    pub(crate) fn derivative_from_output(&self, out: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

/// One layer of the fixed architecture vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        padding: Padding,
        activation: Activation,
    },
    Conv3d {
        filters: usize,
        kernel_d: usize,
        kernel_h: usize,
        kernel_w: usize,
        padding: Padding,
        activation: Activation,
    },
    MaxPool2d {
        pool_h: usize,
        pool_w: usize,
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
}

impl LayerSpec {
    pub(crate) fn validate(&self) -> Result<()> {
        let positive = |v: usize, what: &str| {
            if v == 0 {
                Err(Error::InvalidParameter(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        match self {
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                ..
            } => {
                positive(*filters, "conv2d filters")?;
                positive(*kernel_h, "conv2d kernel height")?;
                positive(*kernel_w, "conv2d kernel width")
            }
            LayerSpec::Conv3d {
                filters,
                kernel_d,
                kernel_h,
                kernel_w,
                ..
            } => {
                positive(*filters, "conv3d filters")?;
                positive(*kernel_d, "conv3d temporal kernel")?;
                positive(*kernel_h, "conv3d kernel height")?;
                positive(*kernel_w, "conv3d kernel width")
            }
            LayerSpec::MaxPool2d { pool_h, pool_w } => {
                positive(*pool_h, "pool height")?;
                positive(*pool_w, "pool width")
            }
            LayerSpec::Dense { units, .. } => positive(*units, "dense units"),
            LayerSpec::Dropout { rate } => {
                if (0.0..1.0).contains(rate) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "dropout rate must be in [0,1), got {rate}"
                    )))
                }
            }
            LayerSpec::Flatten | LayerSpec::Softmax => Ok(()),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            momentum: 0.9,
            l2_lambda: 1e-5,
            batch_size: 32,
            epochs: 50,
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidParameter(
                "batch size and epochs must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidParameter(format!(
                "dropout rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Width knobs for the two-conv classification architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchParams {
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub dense_units: usize,
    pub dropout_rate: f64,
}

impl Default for ArchParams {
    fn default() -> Self {
        Self {
            conv1_filters: 32,
            conv2_filters: 64,
            dense_units: 128,
            dropout_rate: 0.5,
        }
    }
}

/// The image-classification architecture: two 5x5 same-padded convolutions
/// with 2x2 max pooling, a dense hidden layer with dropout, and a softmax
/// output over `classes`. With a 42x32 single-channel input and default
/// widths the flattened feature vector has length 10*8*64 = 5120.
pub fn build_m1_architecture(
    input_h: usize,
    input_w: usize,
    classes: usize,
    arch: &ArchParams,
) -> Result<Vec<LayerSpec>> {
    if input_h < 8 || input_w < 8 {
        return Err(Error::InvalidParameter(format!(
            "architecture needs inputs of at least 8x8, got {input_h}x{input_w}"
        )));
    }
    if classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "architecture needs at least 2 classes, got {classes}"
        )));
    }
    Ok(vec![
        LayerSpec::Conv2d {
            filters: arch.conv1_filters,
            kernel_h: 5,
            kernel_w: 5,
            padding: Padding::Same,
            activation: Activation::Relu,
        },
        LayerSpec::MaxPool2d {
            pool_h: 2,
            pool_w: 2,
        },
        LayerSpec::Conv2d {
            filters: arch.conv2_filters,
            kernel_h: 5,
            kernel_w: 5,
            padding: Padding::Same,
            activation: Activation::Relu,
        },
        LayerSpec::MaxPool2d {
            pool_h: 2,
            pool_w: 2,
        },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            units: arch.dense_units,
            activation: Activation::Relu,
        },
        LayerSpec::Dropout {
            rate: arch.dropout_rate,
        },
        LayerSpec::Dense {
            units: classes,
            activation: Activation::Linear,
        },
        LayerSpec::Softmax,
    ])
}
