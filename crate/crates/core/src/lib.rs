//! Video sky replacement.
//!
//! Each frame goes through four stages: a soft sky matte ([`matting`]), the
//! frame-to-frame motion of the sky ([`motion`]), a warped view of a tileable
//! sky template ([`skybox`]) and a harmonized composite ([`blending`]).
//! [`pipeline`] wires them together over numbered image sequences.

pub mod blending;
pub mod config;
pub mod error;
pub mod imaging;
pub mod matting;
pub mod motion;
pub mod pipeline;
pub mod skybox;

pub use error::{Error, Result};
