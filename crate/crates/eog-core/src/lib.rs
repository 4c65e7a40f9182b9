//! Single-cycle, ten-class electrooculography (EOG) classification.
//!
//! The crate covers the whole path from a two-channel recording to a
//! latency-scored prediction:
//!
//! * [`synthgen`] produces labeled synthetic trials with a ground-truth
//!   placement log,
//! * [`dsp`] smooths, high-pass filters (zero phase) and detrends,
//! * [`segment`] finds polarity-aware peaks and cuts 280-sample cycles,
//! * [`features`] turns each cycle into 26 statistical and gradient features
//!   and hosts the correlation / PCA / LDA analyses,
//! * [`dataset`] balances classes with SMOTE, validates the synthetic rows
//!   with Welch t-tests, splits and standardizes,
//! * [`neural`] holds from-scratch dense and 1-D convolutional networks and
//!   the three-stage cascade,
//! * [`evalbench`] scores models (confusion metrics, CI, FoM, k-fold) and
//!   times end-to-end inference,
//! * [`pipeline`] glues the stages into trainable, benchmarkable models.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod class;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod evalbench;
pub mod features;
pub mod neural;
pub mod pipeline;
pub mod rng;
pub mod segment;
pub mod synthgen;

pub use class::EyeClass;
pub use error::{Error, Result};
