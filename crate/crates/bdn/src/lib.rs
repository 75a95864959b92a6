//! Approximate Bayesian inference for small neural networks by Monte-Carlo
//! sampling of Bernoulli weight masks.
//!
//! The pieces, bottom to top:
//!
//! * [`tensor`] — dense row-major f64 tensors.
//! * [`rng`] — SplitMix64 streams; everything random in this crate is seeded.
//! * [`layers`] — dense / conv2d / maxpool / relu / softmax with forward,
//!   backward and cached intermediates.
//! * [`masks`] — Bernoulli masks on weights (or activations), the seed
//!   derivation that makes every MC pass reconstructable.
//! * [`train`] — L2-regularized SGD with fresh masks per minibatch, plus
//!   checkpoint files.
//! * [`inference`] — T stochastic forward passes and the predictive tensor.
//! * [`uncertainty`] — entropy, mutual information, per-class variance.
//! * [`eval`] — threshold-swept quality metrics, referral curves, convergence
//!   curves, a KS two-sample test.
//! * [`data`] — IDX images, the bundled digit corpus, synthetic sets, and
//!   out-of-distribution transforms.
//! * [`report`] — CSV / JSON / SVG artifacts.
//! * [`experiment`] — the train / eval / report entry points the `bdn` binary
//!   and the examples call into.
//!
//! Runnable walkthroughs live in `examples/`; start with
//! `cargo run --release --example synthetic_gaussians`.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod inference;
pub mod layers;
pub mod masks;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
pub use tensor::Tensor;
