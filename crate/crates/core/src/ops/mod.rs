//! Dense numerical building blocks with hand-written gradients.

pub mod conv;
pub mod counter;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod tape;

pub use conv::{conv1d, conv1d_backward, conv2d, conv2d_backward, ConvGeom, InputDomain, Padding};
pub use counter::{LayerOps, OpCounter};
pub use linear::{dropout, linear, linear_backward, softmax_xent};
pub use norm::{batchnorm, batchnorm_backward, batchnorm_eval, batchnorm_train, BnCache, BnMode, BnParams};
pub use pool::{avgpool_time, avgpool_time_backward, global_avgpool, global_avgpool_backward};
pub use tape::{tape_backward, BackwardCtx, GradientTape, Grads, ParamId, ParamStore, TapeOp};
