//! Framework-free tensors, layer kernels and the U-Net.

mod layers;
mod model_file;
mod tensor;
mod unet;

pub use layers::{
    concat_channels, conv2d_backward, conv2d_forward, maxpool2_backward, maxpool2_forward, relu_backward,
    relu_forward, sigmoid, sigmoid_backward, sigmoid_forward, split_channels, upsample2_backward,
    upsample2_forward, PoolIndices,
};
pub use model_file::{load_model, save_model, MODEL_MAGIC};
pub use tensor::{Scalar, Tensor};
pub use unet::{
    batch_from_images, init_params, unet_backward, unet_backward_logits, unet_forward, unet_forward_batch,
    ConvLayer, ForwardCache, UNetConfig, UNetParams,
};
