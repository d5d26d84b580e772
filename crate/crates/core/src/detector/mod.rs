//! Grid-based single-stage detector with BatchNorm, its losses, decoding,
//! optimizer and checkpoint format.

mod checkpoint;
mod config;
mod decode;
pub(crate) mod layers;
mod loss;
mod model;
mod optim;
mod params;

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, CheckpointMeta, FORMAT_VERSION};
pub use config::DetectorConfig;
pub use decode::{candidates, decode, decode_output, detect_all, nms, Detection, EVAL_CONF, NMS_IOU};
pub use loss::{cell_index, compute_loss, focal_loss, focal_loss_elementwise, giou, LossBreakdown};
pub use model::{Detector, Grads, GridOutput, InputBatch, Tape};
pub use optim::{LrSchedule, Sgd};
pub use params::{partition_params, ModelParams, ParamTag, ParamTensor};
