//! The guide's chapters, compiled as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/ensembles.md")]
pub mod ensembles {}
#[doc = include_str!("../../../book/src/estimators.md")]
pub mod estimators {}
#[doc = include_str!("../../../book/src/jackknife.md")]
pub mod jackknife {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/scans.md")]
pub mod scans {}
#[doc = include_str!("../../../book/src/fringes.md")]
pub mod fringes {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
