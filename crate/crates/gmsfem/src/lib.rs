//! Generalized multiscale finite element solver for 2D high-contrast
//! elliptic problems, with snapshot spaces built from full harmonic,
//! randomized-boundary, or skin-layer spectral local solves.
//!
//! The pipeline mirrors the usual offline/online split:
//!
//! 1. [`grid`] builds the nested coarse/fine structured grids and the
//!    per-coarse-node neighborhoods with their oversampled regions.
//! 2. [`snapshot`] solves local problems on the oversampled regions and
//!    restricts them to the target neighborhoods.
//! 3. [`spectral`] reduces each snapshot set through a local generalized
//!    eigenproblem, keeping the modes with the smallest eigenvalues.
//! 4. [`coarse`] multiplies the selected modes by a partition of unity
//!    ([`pou`]), assembles and solves the global coarse problem, and
//!    measures errors against the fine-scale reference ([`assembly`]).
//! 5. [`adaptive`] enriches local spaces where residual indicators are
//!    large, using a handful of extra randomized snapshots per node.
//! 6. [`analysis`] empirically certifies the deterministic randomized
//!    approximation bound on desk-scale neighborhoods.
//!
//! All numerical kernels are generic over the scalar type through
//! [`scalar::Real`]; concrete `f64` aliases for the main types live at the
//! crate root. The [`experiment`] module drives the study tables exposed by
//! the `gmsfem` binary.

pub mod adaptive;
pub mod analysis;
pub mod assembly;
pub mod coarse;
pub mod config;
pub mod error;
pub mod experiment;
pub mod field;
pub mod grid;
pub mod linalg;
pub mod pou;
pub mod snapshot;
pub mod spectral;

pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{real, Real};

// Concrete double-precision aliases; the CLI and test suites work in f64.
pub type CoefficientField64 = field::CoefficientField<f64>;
pub type SparseOperator64 = assembly::SparseOperator<f64>;
pub type FineSolution64 = assembly::FineSolution<f64>;
pub type PartitionOfUnity64 = pou::PartitionOfUnity<f64>;
pub type SnapshotSet64 = snapshot::SnapshotSet<f64>;
pub type OfflineBasis64 = spectral::OfflineBasis<f64>;
pub type CoarseSpace64 = coarse::CoarseSpace<f64>;
pub type CoarseSolution64 = coarse::CoarseSolution<f64>;
pub type ErrorReport64 = coarse::ErrorReport<f64>;
pub type BoundCertificate64 = analysis::BoundCertificate<f64>;

// Single-precision variants of the heavy value types.
pub type CoefficientField32 = field::CoefficientField<f32>;
pub type SnapshotSet32 = snapshot::SnapshotSet<f32>;
pub type OfflineBasis32 = spectral::OfflineBasis<f32>;
