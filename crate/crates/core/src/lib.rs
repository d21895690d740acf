//! Simulation and analysis toolkit for BB84 quantum key distribution with
//! triggered single-photon sources.
//!
//! The crate covers the whole chain from the emitter to the final key:
//!
//! * [`source`]: photon-number statistics of single-photon emitters,
//!   attenuated lasers and decoy-state lasers, plus named presets.
//! * [`channel`]: free-space loss, setup transmission and dark counts.
//! * [`bb84`]: per-pulse Monte-Carlo of polarization BB84 and sifting.
//! * [`cascade`]: CASCADE reconciliation and Toeplitz privacy amplification.
//! * [`rates`]: closed-form secure-rate bounds and distance sweeps.
//! * [`g2`]: HBT time-tag simulation and g²(τ) / lifetime estimation.
//! * [`pipeline`]: session → reconciliation → amplification, end to end.

pub mod bb84;
pub mod bits;
pub mod cascade;
pub mod channel;
pub mod error;
pub mod g2;
pub mod numfmt;
pub mod pipeline;
pub mod random;
pub mod rates;
pub mod source;

pub use bits::BitString;
pub use channel::LinkSpec;
pub use error::{QkdError, Result};
pub use source::{Preset, SourceKind, SourceSpec};
