//! Lymphocyte infiltration profiling at tumor margins.
//!
//! The pipeline turns annotated tissue regions and lymphocyte masks into
//! density-versus-distance curves:
//!
//! 1. [`slide`]: slide geometry, region labels, annotation rasterization.
//! 2. [`stain`]: DAB lymphocyte masks from IHC images by color deconvolution.
//! 3. [`distance`]: exact signed Euclidean distance to the tumor margin.
//! 4. [`profile`]: lymphocyte pixel density per 10 µm distance bin and the
//!    fixed ±2 mm comparison window.
//! 5. [`matching`]: z-normalized, band-constrained DTW ranking of curves.
//! 6. [`metrics`]: object-level Dice for segmentation evaluation.
//! 7. [`synth`]: synthetic slides with analytically known curves.

pub mod cli;
pub mod components;
pub mod distance;
pub mod error;
pub mod grid;
pub mod io;
pub mod matching;
pub mod metrics;
pub mod plot;
pub mod profile;
pub mod rng;
pub mod slide;
pub mod stain;
pub mod synth;

pub use error::{Error, Result};
pub use grid::Grid;
