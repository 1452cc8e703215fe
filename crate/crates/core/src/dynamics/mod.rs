//! Exact Gaussian dynamics: dense symplectic propagation for small models and
//! structured normal modes for large baths.

pub mod channel;
pub mod dense;
pub mod star;

pub use channel::{
    evolve, extract_channel, extract_channel_dense, extract_channels, reduce_to_system,
    GaussianChannel,
};
pub use dense::{DenseModes, SymplecticPropagator};
pub use star::{BathTemperatures, RowCoefficients, StarModes};
