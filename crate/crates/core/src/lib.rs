//! Simulation and analysis toolkit for a parametrically driven unit of two fixed-frequency
//! transmons, a readout resonator and a flux-modulated tunable coupler.
//!
//! Conventions shared by every module:
//! - user-facing frequencies and rates are cyclic (Hz); dynamics use angular units internally;
//! - tensor factors are ordered Q1 ⊗ Q2 ⊗ C ⊗ R.

pub mod numerics;
pub mod circuit;
pub mod floquet;
pub mod dynamics;
pub mod rbsim;
pub mod protocols;
