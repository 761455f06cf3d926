//! Adversarial imitation of rough, partial base-motion demonstrations on a
//! planar legged robot.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod analysis;
pub mod dataset;
pub mod discriminator;
pub mod dtw;
pub mod error;
pub mod nn;
pub mod observation;
pub mod reward;
pub mod rl;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
