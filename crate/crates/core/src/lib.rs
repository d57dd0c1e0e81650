//! Model-error-aware Bayesian inverse problems.
//!
//! This crate provides the numerical machinery for studying how the choice of
//! observation operator interacts with model error in linear-Gaussian Bayesian
//! inverse problems:
//!
//! * [`gaussian`] — matrix-weighted norms, SPD matrix algebra, Gaussian
//!   measures, linear-Gaussian conditioning, closed-form Gaussian KL,
//!   and Moore–Penrose pseudoinverses.
//! * [`misfit`] — the four misfit families (best, approximate, enhanced
//!   noise, joint), lifted misfits, finite-grid posteriors for brute-force
//!   verification, and the joint linear-Gaussian posterior.
//! * [`bounds`] — Monte-Carlo and closed-form estimation of the L¹ quantities
//!   that drive certified KL bounds between posterior pairs, and the
//!   structured reports those bounds are assembled into.
//! * [`pde`] — a space-time finite element discretisation of an
//!   advection-diffusion initial boundary value problem on the unit square,
//!   with a Matérn temporal prior and a Gaussian-random-field initial
//!   condition.
//! * [`obs`] — pointwise and PDE-residual observation operators, synthetic
//!   data generation, posterior computation, and projection diagnostics.
//!
//! The crate is `no_std` (with `alloc`); all floating-point transcendentals
//! go through [`libm`] so results are bit-reproducible across platforms.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bounds;
pub mod error;
pub mod experiment;
pub mod fmath;
pub mod gaussian;
pub mod linalg;
pub mod misfit;
pub mod obs;
pub mod pde;
pub mod rng;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
