//! Nonnegative/binary matrix factorization (NBMF) of image datasets.
//!
//! `V ~ W H` with a nonnegative basis `W` and a binary coefficient matrix `H`.
//! `W` is updated by projected gradient descent; every column of `H` is a
//! small QUBO minimised by a software annealer. A multiplicative-update NMF
//! baseline and a nearest-neighbour classifier over the learned codes sit on
//! top.
//!
//! ```
//! use nbmf_core::dataset::{gen_synthetic, SyntheticParams};
//! use nbmf_core::nbmf::{nbmf_fit, NbmfConfig};
//! use nbmf_core::solver::{AnnealConfig, Backend};
//!
//! let data = gen_synthetic(&SyntheticParams { n: 16, m: 10, k: 3, density: 0.5, seed: 1 }).unwrap();
//! let cfg = NbmfConfig {
//!     k: 3,
//!     anneal: AnnealConfig::with_backend(Backend::Exhaustive),
//!     ..NbmfConfig::default()
//! };
//! let model = nbmf_fit(data.dataset.matrix(), &cfg).unwrap();
//! assert!(model.final_rmse().unwrap() < 0.1);
//! ```

pub mod classify;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod nbmf;
pub mod nmf;
pub mod qubo;
pub mod solver;

pub use error::{Error, Result};
pub use linalg::{BinaryMatrix, Matrix};
