//! Motion-sensor password inference pipeline.
//!
//! The crate is organized as a chain: [`simwatch`] synthesizes labeled
//! 6-axis IMU episodes, [`frontend`] detects and extracts password-entry
//! segments from them under an adaptive sensing budget, and [`seqmodels`]
//! plus [`trainer`] infer the entered PIN or pattern from the extracted
//! motion. [`numerics`] is the shared dense-math kernel and [`passwords`]
//! the label space. Everything is 64-bit and bit-reproducible for a fixed
//! seed.

pub mod frontend;
pub mod numerics;
pub mod passwords;
pub mod seqmodels;
pub mod simwatch;
pub mod trainer;
