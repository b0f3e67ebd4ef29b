//! Online per-operator latency prediction.
//!
//! Operators are identified by their launch queue and their ordinal within
//! the current batch. Each operator keeps an EWMA per execution config
//! (TPC count, frequency, block count).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::StreamId;
use crate::metrics::percentile;
use crate::time::Nanos;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OperatorKey {
    pub queue: StreamId,
    pub ordinal: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExecConfig {
    pub tpcs: u32,
    pub mhz: u32,
    pub blocks: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Exact,
    Scaled,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub ewma_ns: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub beta: f64,
    /// Multiple of the atom duration assumed for never-seen operators.
    pub unknown_factor: f64,
    pub mispredict_threshold_us: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            beta: 0.25,
            unknown_factor: 10.0,
            mispredict_threshold_us: 50.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct QueueStore {
    ops: HashMap<u32, BTreeMap<ExecConfig, Sample>>,
}

/// One prediction paired with the latency that followed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLogEntry {
    pub queue: StreamId,
    pub ordinal: u32,
    pub batch: u64,
    pub tpcs: u32,
    pub mhz: u32,
    pub blocks: u32,
    pub predicted_us: f64,
    pub actual_us: f64,
    pub confidence: Confidence,
}

impl PredictionLogEntry {
    pub fn abs_error_us(&self) -> f64 {
        (self.predicted_us - self.actual_us).abs()
    }
}

#[derive(Debug, Clone)]
pub struct Predictor {
    cfg: PredictorConfig,
    unknown: Nanos,
    f_max: u32,
    stores: HashMap<StreamId, QueueStore>,
    ordinals: HashMap<StreamId, u32>,
}

impl Predictor {
    pub fn new(cfg: PredictorConfig, atom_duration: Nanos, f_max: u32) -> Self {
        let unknown = Nanos::from_secs_f64(atom_duration.as_secs_f64() * cfg.unknown_factor);
        Predictor {
            cfg,
            unknown,
            f_max,
            stores: HashMap::new(),
            ordinals: HashMap::new(),
        }
    }

    pub fn default_unknown_duration(&self) -> Nanos {
        self.unknown
    }

    /// Returns the key of the next kernel in `queue` and advances the ordinal.
    pub fn next_key(&mut self, queue: StreamId) -> OperatorKey {
        let ord = self.ordinals.entry(queue).or_insert(0);
        let key = OperatorKey { queue, ordinal: *ord };
        *ord += 1;
        key
    }

    /// A sync ends the batch; the next kernel is ordinal 0.
    pub fn batch_boundary(&mut self, queue: StreamId) {
        self.ordinals.insert(queue, 0);
    }

    pub fn is_known(&self, key: OperatorKey) -> bool {
        self.samples(key).is_some_and(|m| !m.is_empty())
    }

    pub fn samples(&self, key: OperatorKey) -> Option<&BTreeMap<ExecConfig, Sample>> {
        self.stores.get(&key.queue)?.ops.get(&key.ordinal)
    }

    pub fn predict(&self, key: OperatorKey, cfg: ExecConfig) -> (Nanos, Confidence) {
        let Some(map) = self.samples(key).filter(|m| !m.is_empty()) else {
            return (self.unknown, Confidence::Unknown);
        };
        if let Some(s) = map.get(&cfg) {
            return (Nanos(s.ewma_ns.round() as u64), Confidence::Exact);
        }
        let (rec, s) = map
            .iter()
            .min_by_key(|(c, _)| {
                (
                    c.mhz != cfg.mhz,
                    c.tpcs != cfg.tpcs,
                    c.blocks != cfg.blocks,
                    c.tpcs.abs_diff(cfg.tpcs),
                    c.blocks.abs_diff(cfg.blocks),
                    c.mhz.abs_diff(cfg.mhz),
                )
            })
            .expect("non-empty");
        (Nanos(scale(s.ewma_ns, rec, &cfg).round() as u64), Confidence::Scaled)
    }

    pub fn record(&mut self, key: OperatorKey, cfg: ExecConfig, observed: Nanos) {
        if observed == Nanos::ZERO {
            return;
        }
        let beta = self.cfg.beta;
        let sample = observed.0 as f64;
        self.stores
            .entry(key.queue)
            .or_default()
            .ops
            .entry(key.ordinal)
            .or_default()
            .entry(cfg)
            .and_modify(|s| {
                s.ewma_ns = (1.0 - beta) * s.ewma_ns + beta * sample;
                s.count += 1;
            })
            .or_insert(Sample {
                ewma_ns: sample,
                count: 1,
            });
    }

    pub fn f_max(&self) -> u32 {
        self.f_max
    }
}

/// Linear in TPCs and blocks, first-order (fully sensitive) in frequency.
fn scale(ewma: f64, rec: &ExecConfig, q: &ExecConfig) -> f64 {
    ewma * (rec.tpcs as f64 / q.tpcs.max(1) as f64) * (q.blocks as f64 / rec.blocks.max(1) as f64)
        * (rec.mhz as f64 / q.mhz.max(1) as f64)
}

/// Accuracy summary over a prediction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub predictions: usize,
    pub misprediction_rate: f64,
    pub p99_abs_error_us: f64,
    pub mean_abs_error_us: f64,
}

/// Fraction of predictions off by more than `threshold_us`, plus the P99
/// absolute error.
pub fn misprediction_rate<'a, I>(log: I, threshold_us: f64) -> Result<Accuracy>
where
    I: IntoIterator<Item = &'a PredictionLogEntry>,
{
    let errors: Vec<f64> = log.into_iter().map(PredictionLogEntry::abs_error_us).collect();
    if errors.is_empty() {
        return Err(Error::Undefined("empty prediction log".into()));
    }
    let bad = errors.iter().filter(|&&e| e > threshold_us).count();
    Ok(Accuracy {
        predictions: errors.len(),
        misprediction_rate: bad as f64 / errors.len() as f64,
        p99_abs_error_us: percentile(&errors, 99.0)?,
        mean_abs_error_us: errors.iter().sum::<f64>() / errors.len() as f64,
    })
}
