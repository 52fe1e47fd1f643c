//! Orthogonal approximate message passing for rank-one estimation from
//! rectangular matrices with rotationally invariant noise.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod model;
pub mod oamp;
pub mod quadrature;
pub mod scalar_channel;
pub mod spectra;
pub mod state_evolution;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/spectra.md")]
    mod spectra {}
    #[doc = include_str!("../../../book/src/scalar-channel.md")]
    mod scalar_channel {}
    #[doc = include_str!("../../../book/src/oamp.md")]
    mod oamp {}
    #[doc = include_str!("../../../book/src/state-evolution.md")]
    mod state_evolution {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
