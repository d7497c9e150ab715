//! PhaseCond: a multi-phase attention model for extractive question answering.
//!
//! Passages and questions are embedded, encoded with BiLSTMs, passed through a
//! configurable path of question-passage attention, self attention and fusion
//! layers, and read out by a multi-hop answer pointer. Everything runs on a
//! small reverse-mode autodiff engine in [`tensor`].

pub mod answer_pointer;
pub mod conductor;
pub mod config;
pub mod encoders;
mod error;
pub mod features;
pub mod fusion;
pub mod gradsuite;
pub mod params;
pub mod qp_attention;
pub mod self_attention;
pub mod squad;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
