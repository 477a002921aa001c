//! Cross-sensor iris recognition: eye images to binary iris codes,
//! Hamming-similarity matching, and biometric evaluation of labeled
//! comparison sets. Includes a synthetic two-sensor dataset generator.

pub mod cli;
pub mod encoder;
pub mod evaluation;
pub mod iso_image;
pub mod matcher;
pub mod pipeline;
pub mod segmentation;
pub mod sigset;
pub mod synth;
