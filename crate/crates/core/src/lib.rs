//! Core library for collaborative convolutional training experiments:
//! dense linear algebra, CRC/ProCRC classifiers, the collaborative head and
//! its gradients, a small convolutional feature network with manual
//! backpropagation and Adam, end-to-end training loops, synthetic
//! fine-grained data, and evaluation statistics.

pub mod collab;
pub mod crc;
pub mod data;
pub mod procrc;
pub mod trainer;
mod error;
pub mod featnet;
pub mod gradcheck;
pub mod linalg;
pub mod util;

pub use collab::{CollabState, PartitionPair, WeightingMode};
pub use crc::{CrcModel, Dictionary};
pub use data::{EvalReport, Image, LabeledImageSet, SynthConfig};
pub use error::{Error, Result};
pub use featnet::{FeatNet, Grads, LayerSpec, NetSpec, SoftmaxHead};
pub use procrc::ProCrcModel;
pub use trainer::{HeadKind, LossLog, TrainConfig, TrainMode, TrainedModel};
pub use linalg::{Mat, ThinSvd};
