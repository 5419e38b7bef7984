//! Switched-relaying robust MMSE precoding for multiuser MIMO relay downlinks.
//!
//! A base station with `N_t` antennas serves `K` single-antenna users through
//! an amplify-and-forward relay with `N_r` antennas. Both ends share a
//! codebook of unitary matrices `T_l`; for each entry the BS designs a latent
//! pair `(P_l, β_l T_l)` from imperfect CSI, picks the pair whose noiseless
//! prediction best matches the data block, and forwards the index and the
//! quantized scale to the relay over a limited side channel.
//!
//! Modules:
//! - [`channel`]: Kronecker-correlated channel and estimation-error draws.
//! - [`codebook`]: random and most-frequently-selected unitary codebooks.
//! - [`design`]: the iterative MMSE design of one latent pair.
//! - [`selection`]: per-block squared-distance selection.
//! - [`modulation`], [`quantizer`], [`sideinfo`], [`link_sim`]: the
//!   Monte-Carlo link.
//! - [`analysis`]: closed-form SINR, error-probability, efficiency and
//!   complexity figures.

pub mod analysis;
pub mod channel;
pub mod codebook;
pub mod design;
pub mod error;
pub mod linalg;
pub mod link_sim;
pub mod modulation;
pub mod quantizer;
pub mod rng;
pub mod selection;
pub mod sideinfo;

pub use channel::{draw_channel_set, ChannelSet, Dims, ErrorStats};

pub use codebook::Codebook;
pub use design::{design_pair, DesignInput, DesignParams, PrecodingPair};
pub use error::{Error, Result};
pub use linalg::ComplexMatrix;
pub use link_sim::{run_ser_experiment, SerCurve, SerPoint, SimConfig};
