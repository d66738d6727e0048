//! Secure semantic text communication over a simulated Rayleigh wiretap
//! channel: corpus handling, channel simulation, a Transformer codec with
//! reverse-mode differentiation, adversarial training, BLEU-style scoring
//! and an experiment harness.

pub mod autodiff;
pub mod channel;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod training;

pub use error::{Error, Result};
