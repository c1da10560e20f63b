//! Restoration of a static scene from a sequence of frames distorted by
//! atmospheric turbulence.
//!
//! The scene `u` and per-frame deformations `Φ_i` are estimated
//! alternately: optical flow registers `u` onto each frame, then a
//! Bregman-iterated forward–backward scheme with a nonlocal TV prior
//! re-fits `u`. [`sim`] produces synthetic sequences with known
//! deformations for testing.

// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod flow;
pub mod image;
pub mod manifest;
pub mod metrics;
pub mod nltv;
pub mod pgm;
pub mod sim;
pub mod solver;
pub mod warp;

pub use error::{Error, Result};
pub use flow::{estimate_flow, FlowEstimator, FlowParams};
pub use image::{temporal_mean, FrameSequence, Image};
pub use manifest::RunManifest;
pub use nltv::{compute_weights, nltv_energy, nltv_prox, NlGraph, NlParams};
pub use pgm::{load_pgm, load_sequence_dir, save_pgm, save_sequence_dir, BitDepth};
pub use sim::{generate_sequence, SimMode, SimParams};
pub use solver::{
    frame_quality_check, restore, restore_with_flows, sliding_window_restore, Restoration,
    RestoreReport, SolverConfig,
};
pub use warp::{apply_adjoint, apply_warp, fidelity_gradient, FlowField};
