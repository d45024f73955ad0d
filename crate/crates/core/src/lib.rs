//! Bit-level CAN data-field prediction for intrusion detection.
//!
//! Each arbitration ID gets its own LSTM model that reads the last ten raw
//! 64-bit data fields and predicts the next one. The L2 prediction error is
//! scored against a Gaussian fitted on training errors, and the one-sided
//! p-value is the anomaly score. No knowledge of the signal encoding inside
//! the data field is needed.

pub mod can_log;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod lstm;
pub mod eval;
pub mod scorer;
pub mod simulator;
