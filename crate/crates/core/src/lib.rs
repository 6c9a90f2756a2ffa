//! Tabular stationary distribution correction estimation (DICE).
//!
//! The crate solves offline RL problems exactly on finite MDPs so that the
//! behaviour of the different DICE objectives can be checked against a
//! linear-algebra oracle:
//!
//! - [`mdp`]: random benchmark MDPs, planning, exact occupancy/value oracles,
//!   trajectory collection and maximum-likelihood models.
//! - [`divergence`]: f-divergence generators with their nonnegative conjugates.
//! - [`solvers`]: full-gradient OptiDICE and the semi-gradient family
//!   (SemiDICE, f-DVL, ODICE, SQL, XQL), plus tabular policy extraction.
//! - [`extraction`]: recovery of the state occupancy ratio `w(s)` from a
//!   policy correction `w(a|s)`.
//! - [`constrained`]: COptiDICE, naive constrained SemiDICE and CORSDICE.
//! - [`metrics`]: Bellman-flow / policy-correction violations and OPE.
//! - [`bench`]: the seeded experiment sweeps, CSV reports and SVG plots.

pub mod bench;
pub mod constrained;
pub mod divergence;
pub mod error;
pub mod extraction;
pub mod mdp;
pub mod metrics;
pub mod solvers;
mod wire;

pub use error::{Error, Result};
