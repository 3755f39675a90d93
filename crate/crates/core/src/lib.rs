//! Sparse low-rank canonical tensor approximation of multivariate functions
//! from scattered samples.
//!
//! A model is a sum of rank-one terms in a tensor product of univariate
//! orthonormal bases. Terms are added greedily; each is computed by
//! alternating least squares where the per-dimension problems may be
//! ℓ1-regularised (Lasso path with leave-one-out selection), and all term
//! coefficients are re-fitted after every addition. The final rank is chosen
//! by k-fold cross-validation.
//!
//! ```
//! use splr_core::bases::{Interval, TensorBasis, UnivariateBasis};
//! use splr_core::bench::BenchmarkFunction;
//! use splr_core::greedy::{select_rank, GreedyConfig};
//!
//! let f = BenchmarkFunction::Checkerboard;
//! let basis = TensorBasis::isotropic(
//!     UnivariateBasis::piecewise_legendre(0, 6, Interval::unit()).unwrap(),
//!     2,
//! )
//! .unwrap();
//! let samples = f.sample(120, 7).unwrap();
//! let z = samples.evaluations().unwrap().to_vec();
//! let cfg = GreedyConfig { max_rank: 3, ..GreedyConfig::default() };
//! let fit = select_rank(&samples, &z, &basis, &cfg, 7).unwrap();
//! assert!(fit.selected_rank <= 3);
//! ```

pub mod bases;
pub mod bench;
pub mod greedy;
pub mod linalg;
pub mod solvers;
pub mod tensor;

pub use bases::{BasisKind, Interval, TensorBasis, UnivariateBasis};
pub use bench::{BenchmarkFunction, SampleSet};
pub use greedy::{greedy_fit, select_rank, AlsConfig, AlsRegularization, GreedyConfig, UpdateMode};
pub use linalg::{DenseMatrix, DenseVector};
pub use tensor::{CanonicalModel, RankOneTerm};
