//! Spherical graph network: Laplacian, Chebyshev convolutions, pooling,
//! the U-Net and its training loop.

pub mod graph;
pub mod layers;
pub mod train;
pub mod unet;

pub use graph::{Pooling, SphereGraph};
pub use layers::{cheb_conv, cheb_conv_backward, ChebLayer, DenseLayer};
pub use train::{predict_signal, train, AdamW, TrainConfig, TrainReport};
pub use unet::{NetParams, SphericalUNet, UNetConfig};
