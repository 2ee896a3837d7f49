//! Variable-length feedback coding by posterior matching over binary-input
//! memoryless symmetric channels.
//!
//! - [`channels`]: channel models, sampling and channel constants.
//! - [`quantizer`]: exact-lattice output quantizer for the BI-AWGN channel.
//! - [`lattice_codec`]: grouped encoder with TOP initialization and SED repair.
//! - [`sed_reference`]: per-message mirror used as an equivalence oracle.
//! - [`bounds`]: achievability bound, stop-at-zero optimization, ruin series.
//! - [`montecarlo`]: reproducible simulation campaigns.

pub mod bounds;
pub mod channels;
pub mod error;
pub mod exec;
pub mod lattice_codec;
pub mod montecarlo;
pub mod numerics;
pub mod quantizer;
pub mod sed_reference;
pub mod trial;

pub use error::{Error, Result};
