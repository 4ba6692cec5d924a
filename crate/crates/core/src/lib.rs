//! Weakly supervised action recognition and temporal detection over untrimmed
//! descriptor sequences.
//!
//! A video is a sequence of per-frame descriptors labelled only at the video
//! level. Clip proposals are scored by a linear classifier, and a selection
//! module (top-k pooling or learned attention) decides which clips speak for
//! the video. The attention weights double as a temporal detector at test time.
//!
//! Per-video work is data parallel (rayon, `parallel` feature); reductions are
//! performed in a fixed order so results are bitwise independent of the
//! thread count.

pub mod corpus;
pub mod error;
pub mod inference;
pub mod model;
pub mod numeric;
pub mod par;
pub mod proposals;
pub mod training;

pub use error::{Error, Result};
