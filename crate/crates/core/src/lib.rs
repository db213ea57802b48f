//! Panel regressions with interactive fixed effects whose slopes follow latent
//! group patterns that may change at an unknown break date.
//!
//! The estimation path runs nuclear-norm regularized regression ([`nnr`]),
//! factor refinement ([`factors`]), break dating ([`breakpoint`]), sequential
//! testing K-means per regime ([`stk`]) and post-classification interactive
//! fixed effects fits ([`ife`]). [`pipeline::estimate`] chains them; [`mc`]
//! holds the simulation designs and the replication harness.

pub mod breakpoint;
pub mod error;
pub mod factors;
pub mod ife;
pub mod linalg;
pub mod mc;
pub mod nnr;
pub mod pipeline;
pub mod stk;

pub use error::{Error, Result};
pub use linalg::{CoefSet, Mat, PanelData, SvdTriple};
