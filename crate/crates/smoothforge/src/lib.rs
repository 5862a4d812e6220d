//! smoothforge: compile generalized additive model formulas into
//! Gibbs-sampler-ready model code plus data dumps, sample conjugate Gaussian
//! models internally, and post-process posterior draws into summaries,
//! effective degrees of freedom, predictions, and credible bands.

pub mod basis;
pub mod data;
pub mod error;
pub mod formula;
pub mod assemble;
pub mod codegen;
pub mod dump;
pub mod numfmt;
pub mod posterior;
pub mod prefit_io;
pub mod sampler;

pub use error::Error;
