//! Forum-sentiment driven stock price forecasting.
//!
//! The crate covers the whole pipeline: forum posts are scored for
//! sentiment ([`scorer`]), aggregated into daily sentiment indices
//! ([`index`]), validated against price changes with ADF and Granger tests
//! ([`stats`]), and fed together with technical indicators into a stacked
//! bidirectional LSTM with highway carry gates ([`net`]) that forecasts the
//! next-day close. [`eval`] holds metrics and the experiment/ablation
//! harness; [`synth`] generates coupled synthetic forums and markets used to
//! check all of the above end to end.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod index;
pub mod net;
pub mod report;
pub mod rng;
pub mod scorer;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
