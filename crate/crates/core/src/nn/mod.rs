//! Parametric layers: dilated convolution, batch normalization, fully
//! connected layers and pooling.

mod conv;
mod functional;
mod layers;
mod norm;
mod params;

pub use conv::{conv2d, ConvGeometry};
pub use functional::{global_avg_pool, linear, max_pool2d};
pub use layers::{BatchNorm, Conv2d, Init, Linear};
pub use norm::{batch_norm, BatchNormConfig, Mode, RunningStats};
pub use params::{Entry, ParamId, ParamKind, ParamStore, Session};
