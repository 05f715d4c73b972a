//! Physics-informed convolutional network for the phase field.

pub mod io;
pub mod kernel;
pub mod model;
pub mod stencil;
pub mod train;

pub use io::{load_model, save_model, write_loss_csv};
pub use kernel::{expand_kernel, SymmetricKernel};
pub use model::{Architecture, ForwardCache, Gradient, InitScale, ModelMeta, PicnnModel};
pub use stencil::{laplacian, pde_residual, LaplacianStencil, StencilKind};
pub use train::{loss, loss_and_gradient, train, LossKind, TrainConfig, TrainReport};
