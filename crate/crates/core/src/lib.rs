//! Ground-truth finite-difference solvers, a POD/Galerkin reduced-order baseline and an
//! iterated V-block convolutional surrogate for elliptic PDEs whose coefficients are random
//! and highly varying.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: node-centred fields on the unit square, five-point operators, stencils.
//! * [`problem`]: the PDE families (Poisson, Helmholtz, Darcy) and their sources.
//! * [`datagen`]: random coefficient samplers, sources, solved datasets and their file format.
//! * [`linsolve`]: Jacobi-preconditioned CG, MINRES, restarted GMRES and dense LU.
//! * [`pod`]: snapshot SVD, Galerkin projection and error curves.
//! * [`tape`]: a small reverse-mode autodiff engine over `(batch, channel, height, width)` arrays.
//! * [`ivnet`]: the iterated V-block network built on the tape.
//! * [`trainer`]: H1-augmented loss, AdamW, plateau scheduling and the training loop.
//! * [`evalsuite`]: error metrics, UQ statistics and the inverse-task transform.

pub mod datagen;
pub mod error;
pub mod evalsuite;
pub mod grid;
pub mod ivnet;
pub mod kv;
pub mod linsolve;
pub mod pod;
pub mod problem;
pub mod rng;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
