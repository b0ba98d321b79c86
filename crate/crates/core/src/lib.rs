//! Spatial risk-terrain modeling on fishnet grids.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] and [`grid`] build the fishnet over a study area and turn
//!   point layers into the `agg_` / `NN_` / `ed_` feature families.
//! * [`weights`] builds the k-nearest-neighbor weights matrix, spatial lags and
//!   the eigenvalue spectrum used for log-determinants.
//! * [`autocorr`] computes global and local Moran's I with permutation and
//!   analytical inference.
//! * [`glm`], [`forest`] and [`spatial_econ`] are the four predictive models.
//! * [`eval`] has the metrics, cross-validation and importance rankings.
//! * [`synth`] generates synthetic cities, [`io`] reads and writes every file
//!   format the pipeline exchanges.

pub mod autocorr;
pub mod coef;
pub mod error;
pub mod eval;
pub mod forest;
pub mod geometry;
pub mod glm;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod spatial_econ;
pub mod synth;
pub mod weights;

pub use autocorr::{ClusterLabel, GlobalMoranResult, LocalMoranResult};
pub use coef::Coefficient;
pub use error::{Error, Result};
pub use eval::{CvReport, MetricSet};
pub use forest::{Forest, ForestParams, Tree};
pub use geometry::{Boundary, Point, Polygon, Ring};
pub use glm::PoissonFit;
pub use grid::{Cell, FeatureMatrix, Fishnet, PointLayer};
pub use spatial_econ::{ManskiFit, SdemFit, SpatialDesign};
pub use weights::{NeighborGraph, SpatialWeights, Spectrum};
