//! Skeleton-based human action recognition.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`skeleton_io`] reads raw benchmark files (or generates synthetic ones)
//!    into a canonical line-delimited JSON format.
//! 2. [`preprocess`] normalizes skeletons for position, view and body size,
//!    resamples every sequence to a fixed length and builds the category and
//!    temporal-chunk targets used as training-only side information.
//! 3. [`dae`] trains a stack of denoising autoencoders whose hidden layer also
//!    has to reconstruct the category and chunk targets, then encodes every
//!    frame into a feature vector.
//! 4. [`registration`] computes one phantom template per class and warps
//!    feature sequences onto it with windowed (non-monotone) frame matching,
//!    with classic DTW available as a baseline.
//! 5. [`ftp`] summarizes warped sequences with a Fourier temporal pyramid and
//!    [`classify`] scores them with one-vs-all linear SVMs.
//!
//! [`pipeline`] ties the stages together behind the evaluation protocols and
//! the `skelact` command line tool.

pub mod classify;
pub mod dae;
pub mod error;
pub mod ftp;
pub mod linalg;
pub mod pipeline;
pub mod preprocess;
pub mod registration;
pub mod rng;
pub mod skeleton_io;

pub use error::{Error, Result};
