//! Discrete-event simulator of a TPC-granular multi-tenant GPU scheduler:
//! spatial quotas with stealing, kernel atomization, online latency
//! prediction, right-sizing and frequency scaling, plus baseline sharing
//! policies to compare against.

pub mod atomizer;
pub mod baselines;
pub mod device;
pub mod error;
pub mod ids;
pub mod metrics;
pub mod power_manager;
pub mod predictor;
pub mod presets;
pub mod rightsizer;
pub mod scenario;
pub mod scheduler;
pub mod sim;
pub mod time;
pub mod workload;

pub use error::{Error, Result};
pub use time::Nanos;
