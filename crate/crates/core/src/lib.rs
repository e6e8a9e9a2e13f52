//! Twin-beam photocount statistics, photon-number reconstruction and
//! nonclassicality quantification.
//!
//! - [`photostats`]: multimode twin-beam photon-number distributions, the
//!   on-off detector-array response and synthetic photocount histograms.
//! - [`reconstruct`]: expectation-maximization inversion of the detector
//!   response and the six-parameter Gaussian twin-beam fit.
//! - [`nonclassicality`]: intensity moments, moment and probability
//!   nonclassicality witnesses, s-ordering transforms and Lee depths.
//! - [`ann`]: training data, a small ReLU/softmax perceptron, ADAM training
//!   and depth classification.
//! - [`pipeline`]: end-to-end benchmark, series export and run manifests.
//! - [`io`]: distribution files (CSV, JSON) and parameter files (TOML).

pub mod ann;
pub mod error;
pub mod io;
pub mod nonclassicality;
pub mod numerics;
pub mod photostats;
pub mod pipeline;
pub mod reconstruct;
pub mod rng;

pub use error::{Error, Result};
