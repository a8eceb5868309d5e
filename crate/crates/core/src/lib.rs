//! Functional ARMA time series: simulation, dimension reduction by functional
//! principal components, vector ARMA prediction of the scores, and the error
//! bounds that connect the vector predictor to the functional one.

pub mod error;
pub mod fnspace;
pub mod fpca;
pub mod hsop;
pub mod linalg;
pub mod farma;
pub mod varma;
pub mod forecast;
pub mod ingest;
pub mod io;

pub use error::{Error, Result};
