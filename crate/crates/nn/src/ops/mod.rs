//! Layer primitives: forward passes and their exact gradients.

pub mod activation;
pub mod conv;
pub mod crop;
pub mod deconv;
pub mod loss;
pub mod pool;
pub mod wsum;

pub use activation::{dropout_backward, dropout_forward, relu_backward, relu_forward};
pub use conv::{conv_backward, conv_forward, conv_out_size};
pub use crop::{center_offsets, crop_backward, crop_forward};
pub use deconv::{bilinear_kernel, deconv_backward, deconv_forward, deconv_out_size};
pub use loss::{softmax, softmax_multinomial_loss, LabelBatch};
pub use pool::{maxpool_backward, maxpool_forward, pool_out_size};
pub use wsum::{wsum_backward, wsum_forward};
