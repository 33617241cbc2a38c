//! Imperfect-supervision training for real-world image de-weathering.
//!
//! A multi-frame label constructor is trained first against the imperfect
//! clean labels; its input-consistent pseudo-labels then supervise a
//! single-frame de-weathering network at the image level, while the original
//! labels contribute only feature-level (contrastive) and distribution-level
//! (sliced Wasserstein) guidance.
//!
//! Everything runs on a small `f64` reverse-mode autodiff engine ([`tensor`])
//! over procedurally generated weather scenes ([`datagen`]).

pub mod datagen;
pub mod error;
pub mod gradsuite;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
