//! Infrared/visible image fusion with a heterogeneous dual-discriminator GAN.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`tensor`]), the generator and discriminator networks ([`nn`]), the
//! training objectives ([`loss`]), Adam and the alternating training loop
//! ([`optim`], [`train`]), fusion-quality metrics ([`metrics`]) and file
//! formats ([`io`]).

pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
