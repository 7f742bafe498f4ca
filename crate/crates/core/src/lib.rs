//! Survey-free environment recognition and learned network handover.
//!
//! The crate builds a personalized fingerprint library from passively
//! collected signals ([`fpcore`]), matches live windows against it with a
//! learned, adaptively filtered DTW ([`filters`], [`align`]), and trains a
//! switch policy with PPO on a composite feedback-augmented reward
//! ([`policy`], [`cloudedge`]). [`simworld`] provides deterministic
//! trajectories and the threshold baseline; [`pipeline`] ties everything
//! into the simulate / train / evaluate workflow.

pub mod align;
pub mod cloudedge;
pub mod error;
pub mod filters;
pub mod fpcore;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod simworld;
pub mod tensorio;

pub use error::{Error, Result};
