//! Layer primitives on top of the autodiff tape: convolutions, batch/layer
//! norm, per-token linear maps and drop-path, plus the parameter store and
//! forward context shared by every block.

mod ctx;
pub mod conv;
pub mod drop_path;
pub mod linear;
pub mod norm;
mod params;

pub use conv::ConvSpec;
pub use ctx::{Ctx, Mode};
pub use drop_path::drop_path;
pub use linear::LinearSpec;
pub use norm::{NormKind, NormSpec};
pub use params::ParamStore;
