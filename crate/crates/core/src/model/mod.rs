//! Model primitives: flat parameter vectors, binary masks, a small MLP with
//! analytic gradients, and masked minibatch SGD.

mod mlp;
mod params;
mod train;

pub use mlp::{forward, loss_and_grad, Mlp};
pub use params::{apply_mask, init_model, mask_of, Mask, ParamVector, Shape};
pub use train::{local_train, test_acc, Dataset, LrSchedule, TrainSpec};
