//! Windowing, optimization and the cascade and joint training strategies.

pub mod adam;
pub mod gradnorm;
pub mod record;
pub mod strategies;
pub mod window;

pub use adam::{Adam, AdamConfig};
pub use gradnorm::{gradnorm_update, GradNormStep, ScalePair, SCALE_FLOOR};
pub use record::{EpochRecord, Snapshot, Stage, TrainRecord};
pub use strategies::{train_cascade, train_crisp, train_joint, IntervalModel, JointOptions, TrainOptions};
pub use window::{window_count, window_data, MiniBatch, WindowedBatch};
