//! Workbench plumbing around [`nfmimo_core`]: dataset files, checkpoint
//! files, the training loop, and the estimator evaluation sweep. The
//! `nfmimo` binary is a thin argument parser over these modules.
//!
//! Everything here is deterministic given the seeds recorded in the dataset
//! manifest and training config: regenerating, retraining, or re-evaluating
//! reproduces output files byte for byte.

pub mod checkpoint;
pub mod corr;
pub mod dataset;
pub mod evaluate;
pub mod profiles;
pub mod train;
