//! Minimal CPU convolutional network toolkit with hand-written backprop.

pub mod backbone;
pub mod conv;
pub mod net;
pub mod optim;
pub mod tensor;
pub mod train;

pub use backbone::{Backbone, BackboneCache, BackboneConfig};
pub use conv::{Conv2d, ConvCache};
pub use net::{HeadedNet, NetCache};
pub use optim::{accumulate, zero_grads, Adam, ConvGrad, Schedule};
pub use tensor::Tensor;
pub use train::{fit, Parameters, SampleLoss, StepRecord, TrainLog};
