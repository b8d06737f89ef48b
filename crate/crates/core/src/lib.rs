//! Simulation and numerical verification for long-range dependent linear
//! processes with values in `L²(𝕐)`.
//!
//! The process is `X_n(r) = Σ_{j≥0} (j+1)^{d(r)−1} ε_{n−j}(r)` on a weighted
//! grid. The library simulates it, estimates its autocovariance operators, and
//! evaluates the two fluctuation limits: a Gaussian limit with covariance `Σ`
//! when `d < 1/4`, and a double Wiener–Itô (Rosenblatt) limit when
//! `1/4 < d < 1/2`.
//!
//! Numerical code is generic over [`Real`]; the `f64` aliases below cover the
//! usual case.

pub mod defaults;
pub mod error;
pub mod estimator;
pub mod gaussian_limit;
pub mod grid;
pub mod harness;
pub mod lift;
pub mod model;
pub mod process;
pub mod quadrature;
pub mod rng;
pub mod rosenblatt;
pub mod scalar;
pub mod special;
pub mod stats;

pub use error::{LrdError, Result};
pub use grid::{GridFunction, GridSpace, KernelOnGrid};
pub use harness::{run, ExperimentConfig, RunReport, Task};
pub use model::{InnovationLaw, InnovationModel, MemoryProfile, Regime};
pub use process::{PathSimulator, ProcessConfig, SamplePath, StationaryGaussian};
pub use scalar::Real;

pub type GridSpaceF64 = GridSpace<f64>;
pub type KernelF64 = KernelOnGrid<f64>;
pub type GridFunctionF64 = GridFunction<f64>;
pub type MemoryProfileF64 = MemoryProfile<f64>;
pub type InnovationModelF64 = InnovationModel<f64>;
pub type SamplePathF64 = SamplePath<f64>;
pub type PathSimulatorF64 = PathSimulator<f64>;
pub type ProcessConfigF64 = ProcessConfig<f64>;
pub type StationaryGaussianF64 = StationaryGaussian<f64>;
pub type RosenblattKernelSpecF64 = rosenblatt::RosenblattKernelSpec<f64>;
pub type RosenblattSamplerF64 = rosenblatt::RosenblattSampler<f64>;
