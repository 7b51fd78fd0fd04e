//! Recurrent return forecasters (S-RNN, LSTM, GRU) trained on monthly OHLCV
//! features, threshold-based portfolios built from their one-month-ahead
//! forecasts, and the risk-return frontiers traced by varying the threshold.
//!
//! The crate is organised bottom-up:
//!
//! * [`market_data`] turns daily Yahoo-style CSVs into a monthly feature panel,
//!   chronological splits and 36-month sliding windows.
//! * [`rnn`] holds the recurrent cells, full backpropagation through time,
//!   ADAM, training with early stopping, grid search and checkpoints.
//! * [`evaluation`] scores forecasts (hit ratio, threshold-conditional accuracy).
//! * [`portfolio`] selects threshold-based portfolios and backtests them with
//!   monthly equal-weight rebalancing.
//! * [`frontier`] fits cubic risk-return frontiers and inverts them for a
//!   target risk or return.
//!
//! Every random draw flows from a single 64-bit seed through [`rng`].

pub mod evaluation;
pub mod fixture;
pub mod forecast;
pub mod frontier;
pub mod market_data;
pub mod portfolio;
pub mod rng;
pub mod rnn;
pub mod stats;
