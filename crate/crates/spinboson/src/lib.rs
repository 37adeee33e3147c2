//! Exact spectra of N-mode spin-boson models.
//!
//! Two independent routes to the same spectrum:
//!
//! * [`gfunction`] + [`rootfind`] — the analytic route: a coefficient
//!   recurrence defines a meromorphic function `G^±(X)` per parity sector
//!   whose zeros are the energy levels (shifted by `sum_j g_j^2/omega_j`).
//! * [`fock`] — the oracle route: truncated Fock-space matrices
//!   diagonalized directly, with parity projections.
//!
//! [`symmetry`] materializes the unitary transformations connecting the
//! model's equivalent forms and verifies them as exact matrix identities at
//! truncation.

pub mod eigen;
pub mod fock;
pub mod gfunction;
pub mod model;
pub mod rootfind;
pub mod symmetry;

pub use model::{binomial, ModelError, ModelKind, ModelParams, MultiIndex, ParitySector};
