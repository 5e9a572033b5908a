//! Multimodal refractive-power classification from EOG and eye-tracking data.
//!
//! The pipeline runs: dataset loading ([`datamodel`]) → EOG filtering
//! ([`sigproc`]) and eye-tracking cleaning ([`gazeproc`]) → trigger-relative
//! fusion ([`fusion`]) → a from-scratch LSTM classifier ([`nn`]) → the
//! subject-dependent and leave-one-subject-out protocols ([`evalharness`])
//! and nonparametric tests ([`stats`]). [`synthgen`] produces synthetic
//! sessions with known class structure.

pub mod datamodel;
pub mod error;
pub mod evalharness;
pub mod fusion;
pub mod gazeproc;
pub mod nn;
pub mod sigproc;
pub mod stats;
pub mod synthgen;

pub use datamodel::{DiopterClass, N_CLASSES};
pub use error::{Error, Result};
