//! Numerical continuation of periodic orbits and two-dimensional
//! quasi-periodic invariant tori.
//!
//! Tori are computed as multi-segment boundary-value problems: the torus is
//! sampled along `2N+1` characteristic curves, each discretized by Gauss
//! collocation, and the segments are tied together by a Fourier all-to-all
//! boundary condition.

pub mod error;
pub mod odesys;
pub mod ivp;
pub mod colloc;
pub mod fourier;
pub mod bordered;
pub mod contin;
pub mod po;
pub mod torus;
pub mod store;

pub use error::{Error, Result};
