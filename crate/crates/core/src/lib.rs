//! Nonparametric information estimators for ensembles of 1D field profiles.
//!
//! The crate estimates mutual information (KSG), relative entropy to the
//! nearest Gaussian and differential entropy directly from samples, using
//! exact max-norm neighbor searches. A classical thermal sine-Gordon sampler
//! provides ground-truth ensembles, and the [`analysis`] module runs the
//! volume, boundary-area, separation, effective-mass and non-Gaussianity
//! scans on top of them.
//!
//! ```
//! use fieldinfo::ensemble::{Meta, Partition, PhaseEnsemble};
//! use fieldinfo::estimators::ksg_mutual_information;
//!
//! // three pixels; pixel 1 copies pixel 0 up to a small perturbation
//! let rows: Vec<Vec<f64>> = (0..400)
//!     .map(|i| {
//!         let x = (i as f64 * 0.618_033_988_7).fract();
//!         let y = (i as f64 * 0.414_213_562_3).fract();
//!         vec![x, x + 0.05 * y, y]
//!     })
//!     .collect();
//! let ens = PhaseEnsemble::new(rows, vec![0.0, 1.0, 2.0], Meta::default()).unwrap();
//! let linked = ens.build_cloud(&Partition::new([0], [1]).unwrap()).unwrap();
//! let unrelated = ens.build_cloud(&Partition::new([0], [2]).unwrap()).unwrap();
//! assert!(ksg_mutual_information(&linked, 2).unwrap() > ksg_mutual_information(&unrelated, 2).unwrap());
//! ```

pub mod analysis;
pub mod ensemble;
pub mod error;
pub mod estimators;
pub mod fringe;
pub mod io;
pub mod knn;
pub mod lsq;
pub mod resampling;
pub mod sgsim;
pub mod special;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book;
