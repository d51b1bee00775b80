//! Position–velocity LSTM for forecasting pedestrian 3D bounding boxes and
//! their motion attributes, with the data pipeline, training loop and
//! evaluation metrics around it.

pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod train;

pub use error::{Error, Result};
pub use model::{BBox3d, Checkpoint, ModelConfig, PvLstmModel, Velocity6};
pub use params::NamedTensors;
pub use train::{fit, TrainConfig};
