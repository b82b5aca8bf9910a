//! Training a central conditional generator against a timeline of temporary,
//! privately hosted discriminators.
//!
//! The central generator never sees real data. Each online data center owns a
//! discriminator, samples label batches from its private label marginal, and
//! answers generated batches with the gradient of the generator loss with
//! respect to the fake samples. A reminding term keeps the generator consistent
//! on labels whose centers have gone offline.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod federation;
pub mod gan;
pub mod numeric;
pub mod rng;

pub use error::{Error, Result};
