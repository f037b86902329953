//! Discovery of slow collective variables in high-dimensional time series.
//!
//! The crate fits linear encoders (PCA, TICA with kinetic-map scaling, and
//! TCCA from the half-weighted Koopman matrix) and a nonlinear time-lagged
//! autoencoder to time series, then validates the encodings by canonical
//! correlation against reference signals and by Markov-state-model implied
//! timescale convergence.
//!
//! Module map:
//! - [`numerics`]: symmetric eigendecomposition, SVD, PSD matrix powers
//! - [`stats`]: lagged pairs, covariance estimation, whitening
//! - [`linear`]: PCA / TICA / TCCA closed forms
//! - [`neural`]: the time-lagged autoencoder and its training loop
//! - [`datagen`]: HMM benchmark generators and reference timescales
//! - [`msm`]: k-means discretization and implied timescales
//! - [`evaluation`]: CCA scoring and the repeated benchmark protocol
//! - [`model`], [`io`]: shared model interface, file formats

pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod linear;
pub mod model;
pub mod msm;
pub mod neural;
pub mod numerics;
pub mod seeds;
pub mod stats;

pub use error::{Error, ErrorKind, Result};
pub use model::{AnyModel, Model};
pub use stats::TimeSeries;
