//! Mask-based monaural source separation.
//!
//! The crate is organized bottom-up:
//!
//! - [`signal`]: waveforms, WAV I/O, seeded randomness and synthetic sources
//! - [`transforms`]: the sqrt-Hann STFT pair and the learnable real basis
//! - [`masking`]: mask application, mixture consistency, oracle binary masks
//! - [`objectives`]: SI-SDR, negative SNR and permutation-invariant losses
//! - [`autograd`]: a small reverse-mode tape, gradient checking and Adam
//! - [`nets`]: the TDCN++ masking network, its iterative variant and training
//! - [`datagen`]: event detection, clip extraction and mixture manifests
//! - [`harness`]: experiment configs, evaluation reports and window sweeps

pub mod signal;
pub mod transforms;
pub mod masking;
pub mod objectives;
pub mod autograd;
pub mod nets;
pub mod datagen;
pub mod harness;
