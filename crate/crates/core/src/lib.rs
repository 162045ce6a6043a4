//! Guided diffusion bridges on Riemannian manifolds.
//!
//! Bridges of a Brownian motion with drift are simulated by developing a
//! driving Wiener path onto the frame bundle while a heat-kernel guiding term
//! pulls the process towards its conditioning point. The likelihood ratio
//! between the guided process and the true bridge is available in closed form,
//! which makes the guided process usable inside Metropolis–Hastings
//! (preconditioned Crank–Nicolson on the driving noise) and inside a
//! data-augmentation Gibbs sampler for drift parameters.
//!
//! Two model manifolds are supported: the flat torus (with its embedding in
//! ℝ³ as a diffeomorphic image) and the Poincaré disk.

// Negated comparisons are how NaN gets rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod bridge_mcmc;
pub mod dual;
mod error;
pub mod frame_bundle;
pub mod geometry;
pub mod guided;
pub mod heat_kernel;
pub mod io;
pub mod quadrature;

pub use error::{Error, Result};

pub use bayes::{
    forward_simulate, gibbs, path_integrals, theta_update, GibbsConfig, Observations,
    PosteriorSample,
};
pub use bridge_mcmc::{
    pcn_step, run_chain, BridgeProblem, ChainConfig, ChainState, ChainStats, IterationRecord,
};
pub use frame_bundle::{antidevelop, develop, DriverPath, FramePoint, HorizontalPath};
pub use geometry::{Chart, Diffeomorphism, TorusEmbedding};
pub use guided::{
    guided_drift, pushforward_guided, reanchor, simulate_guided, time_grid,
    transition_density_estimate, FieldBasis, GuidedSolution, TimeChange, VectorFieldSpec,
};
pub use heat_kernel::{GuidingBackend, GuidingFunction};

/// Point or tangent vector in chart coordinates.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix (frames, metrics, Gram matrices).
pub type Matrix = nalgebra::DMatrix<f64>;
