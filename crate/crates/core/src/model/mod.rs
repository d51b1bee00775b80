//! Box geometry, the encoder-decoder network, and its checkpoint format.

mod checkpoint;
mod geometry;
mod network;

pub use checkpoint::{Checkpoint, CheckpointMeta, TensorRecord, CHECKPOINT_FORMAT};
pub use geometry::{integrate, invalid_boxes, to_velocities, zero_vel_predict, BBox3d, Velocity6};
pub use network::{ForwardTrace, ModelConfig, Prediction, PvLstmModel, PvLstmParams, BOX_DIM};
