//! Weighted sum-rate maximization for rate-splitting downlink transmission.
//!
//! A base station with `n_tx` antennas serves `k_users` single-antenna users.
//! Every user decodes a shared multicast stream; on top of that, each user's
//! unicast message is split into a private part (beamformed individually) and
//! a common part (folded into the multicast stream and recovered after
//! successive interference cancellation). The optimization variables are the
//! multicast precoder, the private precoders, and the common-rate split.
//!
//! The crate provides:
//!
//! - channel generators (clustered multipath and deterministic two-user
//!   phase-ramp models) — [`channel`]
//! - analog precoder designs for hybrid arrays with quantized phase shifters,
//!   plus the fully-digital identity mode — [`analog`]
//! - exact rate/feasibility evaluation of candidate solutions — [`rates`]
//! - the successive convex relaxation solver that lifts precoders to
//!   positive-semidefinite matrices and linearizes bilinear terms — [`falcon`]
//!   driving the per-iteration convex subproblem in [`subproblem`]
//! - a WMMSE block-coordinate baseline — [`wmmse`]
//! - small-instance brute-force oracles for validation — [`oracle`]
//! - batch experiment drivers behind the `falcon` CLI — [`harness`]
//!
//! All rates are in bits/s/Hz; powers are in milliwatts unless a name says
//! otherwise.

pub mod analog;
pub mod channel;
pub mod error;
#[allow(clippy::module_inception)]
pub mod falcon;
pub mod harness;
pub mod ipm;
pub mod oracle;
pub mod rates;
pub mod subproblem;
pub mod wmmse;

pub use analog::{AnalogMode, AnalogPrecoder, Codebook, EffectiveChannels, PhaseShiftSet};
pub use channel::{dbm_to_mw, ChannelSet};
pub use error::Error;
pub use falcon::{run_falcon, FalconConfig, RsMode, RsSolution, RunStatus};
pub use rates::ProblemParams;
pub use wmmse::{init_point, run_wmmse, WmmseInit, WmmseInitMethod};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Dense complex vector.
pub type CVector = nalgebra::DVector<C64>;

/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;

/// Largest supported user count. Solver working-set sizes grow like
/// `k_users * n_tx^2`, and the dense fallback path grows cubically; the cap
/// keeps worst-case solves well under a second instead of silently degrading.
pub const MAX_USERS: usize = 16;
