//! Bias-rectified knowledge distillation.
//!
//! A frozen teacher's predictions are split into right knowledge (argmax
//! equals the label) and biased knowledge. Right knowledge is distilled as
//! is; biased predictions are first rectified so the true class outranks
//! the teacher's wrong pick, then distilled with a weight `γ = e/E` that
//! grows over training:
//!
//! ```text
//! L_all = (1 − γ) · (L_CE + L_easy) + γ · L_hard
//! ```
//!
//! The crate also carries the pieces needed to run and check this at desk
//! scale: closed-form gradients, small ReLU networks, Gaussian-blob
//! datasets, and a two-class analysis of the student optimum.

pub mod analysis;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod partition;
pub mod rectify;
pub mod rng;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
pub use numerics::{GradientVector, LogitVector, OneHotLabel, ProbVector};
pub use schedule::{DistillMode, EpochSchedule, LossBreakdown};
