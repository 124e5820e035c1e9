//! Likelihood-free posterior estimation for black-box simulators.
//!
//! A conditional Gaussian-mixture density `q(θ | x)` is fitted to
//! `(θ, x)` pairs drawn from a proposal prior and a simulator, then
//! evaluated at the observed statistics `x_r` to recover a posterior over
//! the simulator parameters. The features feeding the mixture head are
//! either quasi-Monte-Carlo random Fourier features or a small tanh
//! network.
//!
//! The crate is `no_std` and only needs an allocator. File formats, the
//! experiment harness and the command-line tool live in the `simpost`
//! crate.
//!
//! ```
//! use simpost_core::mixture::GaussianMixture;
//!
//! let m = GaussianMixture::diagonal(&[1.0], &[vec![0.0]], &[vec![1.0]]).unwrap();
//! assert!((m.log_density(&[0.0]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
//! ```
#![no_std]
// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod abc;
pub mod error;
pub mod feature_maps;
pub mod linalg;
pub mod mixture;
pub mod mixture_density;
pub mod optim;
pub mod posterior;
pub mod quasi_random;
pub mod rng;
pub mod simulators;
pub mod special;
pub mod stats;

pub use error::{Error, ErrorKind, Result};
pub use feature_maps::{FeatureMap, KernelConfig, KernelFamily, NeuralFeatureMap, RffMap};
pub use mixture::GaussianMixture;
pub use mixture_density::{ConditionalDensity, MixtureHead, TrainerConfig, TrainingReport, TrainingSet};
pub use posterior::{PosteriorEstimate, PriorSpec, UniformBox};
pub use stats::{Standardizer, StatsSchema};
