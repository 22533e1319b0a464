//! Small differentiable-computation kernel: just enough layers, losses and
//! optimizer machinery for the level autoencoder, each with an explicit
//! backward pass.

mod activation;
mod conv;
pub mod gradcheck;
mod linear;
mod loss;
mod optim;
mod sampling;
mod tensor;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d, conv2d_backward, transposed_conv2d, transposed_conv2d_backward, ConvGrads};
pub use linear::{fully_connected, fully_connected_backward, LinearGrads};
pub use loss::{kl_standard_normal, masked_softmax_cross_entropy, softmax_cells, KlOutput};
pub use optim::{AdamHyper, AdamState, Gradients, Param, ParamId, ParamStore};
pub use sampling::{reparameterize, reparameterize_backward, shift_scale, standard_normal, LatentSample};
pub use tensor::{Scalar, Tensor};
