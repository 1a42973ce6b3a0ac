//! Tensor engine and the multi-stride fully convolutional segmentation
//! network built on it: ops with hand-written backward passes, a small
//! static graph executor, SGD with a sigmoid learning-rate schedule,
//! checkpointing, training and slide inference.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod infer;
pub mod msfcn;
pub mod ops;
pub mod sgd;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState};
pub use error::{NnError, Result};
pub use graph::{Graph, Gradients, Params, Phase};
pub use infer::{argmax_classes, infer_slide, load_for_inference, InferTiming};
pub use msfcn::{build, init_params, BackboneSpec, DeconvBlockSpec, MsfcnConfig};
pub use sgd::{sgd_step, zero_like, SgdConfig};
pub use tensor::{gemm, Scalar, Tensor};
pub use train::{train, LossRow, TrainJob, TrainSummary};
