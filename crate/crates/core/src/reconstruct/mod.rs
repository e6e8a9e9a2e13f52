//! Photon-number reconstruction from photocount histograms and the Gaussian
//! twin-beam fit.

mod em;
mod fit;
pub mod simplex;

pub use em::{em_iterate, log_likelihood, EmConfig, EmInit, EmResult, EM_FLOOR, LIKELIHOOD_SLACK};
pub use fit::{fit_twin_beam, FitConfig, FitResult, MEAN_BOUNDS, MODE_BOUNDS};
