//! Spatiotemporal graph forecasting for station-based air quality series.
//!
//! The toolkit combines three ingredients: an adaptively learned station
//! graph (a slow attribute-driven component fused with a short-term
//! convolutional one), stacked spatio-temporal blocks pairing multi-head
//! temporal attention with Chebyshev graph convolution, and an auxiliary
//! regression head predicting local spatial-autocorrelation (Moran) fields
//! of the forecast targets. Everything runs on a small f64 reverse-mode
//! autodiff engine; no external tensor library is involved.
//!
//! Entry points:
//! - [`tensor`]: dense tensors plus the differentiation tape.
//! - [`graph`]: Laplacians, spectral scaling, Chebyshev filters.
//! - [`adaptive`]: macro/micro graph learning and fusion.
//! - [`model`]: the forecasting network and checkpoint format.
//! - [`moran`]: spatial weights and local Moran statistics.
//! - [`data`]: CSV ingestion, normalization, windowing, synthetic data.
//! - [`train`]: loss assembly, RMSprop, training loop, metrics, baselines.
//! - [`cli`]: the `aircast` command line surface.

pub mod adaptive;
pub mod cli;
pub mod config;
pub mod data;
pub mod geo;
pub mod graph;
pub mod model;
pub mod moran;
pub mod oracle;
pub mod tensor;
pub mod timefmt;
pub mod train;

mod error;

pub use error::{Error, Result};
