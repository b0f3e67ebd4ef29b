//! Sensitivity-driven frequency selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DvfsConfig {
    pub enabled: bool,
    /// Tolerated fractional slowdown (0.1 = 10%).
    pub dvfs_slip_k: f64,
    /// Aggregate sensitivities at or below this select the lowest frequency.
    pub s_floor: f64,
    /// Absolute change in `s` between consecutive estimates that confirms a kernel.
    pub confirm_tolerance: f64,
}

impl Default for DvfsConfig {
    fn default() -> Self {
        DvfsConfig {
            enabled: false,
            dvfs_slip_k: 0.1,
            s_floor: 1e-6,
            confirm_tolerance: 0.05,
        }
    }
}

/// `s = (lat_fth / lat_fmax - 1) / (f_max / f_th - 1)`, clamped to `[0, 1]`.
pub fn sensitivity(lat_fth: f64, lat_fmax: f64, f_th: u32, f_max: u32) -> Result<f64> {
    if !(lat_fth > 0.0 && lat_fmax > 0.0) {
        return Err(Error::Validation("latencies must be positive".into()));
    }
    if f_th >= f_max || f_th == 0 {
        return Err(Error::Validation(format!("probe frequency {f_th} must be below {f_max}")));
    }
    let slowdown = lat_fth / lat_fmax - 1.0;
    Ok((slowdown / (f_max as f64 / f_th as f64 - 1.0)).clamp(0.0, 1.0))
}

/// `S = sum(w * s)` over `(w, s)` pairs; weights are normalized here.
pub fn aggregate(records: &[(f64, f64)]) -> Result<f64> {
    let total: f64 = records.iter().map(|r| r.0).sum();
    if records.is_empty() || total <= 0.0 {
        return Err(Error::Undefined("no sensitivity records to aggregate".into()));
    }
    Ok(records.iter().map(|(w, s)| w / total * s.clamp(0.0, 1.0)).sum::<f64>().clamp(0.0, 1.0))
}

/// Unsnapped target `f_max / (1 + k / S)`.
pub fn raw_frequency(s_agg: f64, slip_k: f64, f_max: u32) -> f64 {
    f_max as f64 / (1.0 + slip_k / s_agg)
}

/// Picks the lowest supported frequency at or above the raw target.
pub fn select_frequency(s_agg: f64, slip_k: f64, supported: &[u32], s_floor: f64) -> Result<u32> {
    let (Some(&f_min), Some(&f_max)) = (supported.first(), supported.last()) else {
        return Err(Error::Config("frequency table is empty".into()));
    };
    if s_agg <= s_floor {
        return Ok(f_min);
    }
    let raw = raw_frequency(s_agg, slip_k, f_max);
    Ok(supported
        .iter()
        .copied()
        .find(|&f| f as f64 >= raw - 1e-9)
        .unwrap_or(f_max))
}

/// Single clock domain: the most demanding tenant wins.
pub fn arbitrate(finals: &[u32], last: u32) -> u32 {
    finals.iter().copied().max().unwrap_or(last)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Unseen,
    Probing,
    Confirmed,
}

/// Learning state of one operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub phase: Phase,
    pub s: f64,
    /// Latency per block at the maximum frequency.
    pub baseline_ns: Option<f64>,
    last_estimate: Option<f64>,
}

impl Default for SensitivityRecord {
    fn default() -> Self {
        SensitivityRecord {
            phase: Phase::Unseen,
            s: 1.0,
            baseline_ns: None,
            last_estimate: None,
        }
    }
}

/// One observation of an operator: per-block latency and the frequency it ran at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub per_block_ns: f64,
    pub f_mhz: u32,
}

/// Advances an operator's learning state. Unseen kernels need `f_max`; the
/// returned frequency is what this kernel would tolerate alone.
pub fn learning_step(
    rec: &mut SensitivityRecord,
    obs: Observation,
    cfg: &DvfsConfig,
    supported: &[u32],
) -> Result<u32> {
    let f_max = *supported
        .last()
        .ok_or_else(|| Error::Config("frequency table is empty".into()))?;
    if obs.f_mhz == f_max {
        // Baseline samples refresh the reference latency.
        let b = rec.baseline_ns.get_or_insert(obs.per_block_ns);
        *b = obs.per_block_ns.min(*b);
        if rec.phase == Phase::Unseen {
            rec.phase = Phase::Probing;
            rec.s = 1.0;
        }
    } else if let Some(base) = rec.baseline_ns {
        let est = sensitivity(obs.per_block_ns, base, obs.f_mhz, f_max).unwrap_or(rec.s);
        if let Some(prev) = rec.last_estimate {
            if (est - prev).abs() <= cfg.confirm_tolerance {
                rec.phase = Phase::Confirmed;
            }
        }
        rec.last_estimate = Some(est);
        rec.s = est;
    } else {
        return Ok(f_max);
    }
    select_frequency(rec.s, cfg.dvfs_slip_k, supported, cfg.s_floor)
}

/// Per-app power-manager state.
#[derive(Debug, Clone)]
pub struct AppDvfs<K: Ord> {
    pub records: BTreeMap<K, SensitivityRecord>,
    /// f_max-equivalent runtime of each operator over the last full batch.
    pub weights: BTreeMap<K, f64>,
    pub plan: Option<u32>,
}

impl<K: Ord> Default for AppDvfs<K> {
    fn default() -> Self {
        AppDvfs {
            records: BTreeMap::new(),
            weights: BTreeMap::new(),
            plan: None,
        }
    }
}

impl<K: Ord + Clone> AppDvfs<K> {
    /// Recomputes this app's target frequency from its records and weights.
    /// Any unseen operator forces the maximum frequency.
    pub fn replan(&mut self, cfg: &DvfsConfig, supported: &[u32]) -> Result<Option<u32>> {
        let f_max = *supported.last().ok_or_else(|| Error::Config("empty table".into()))?;
        if self.weights.is_empty() {
            self.plan = None;
            return Ok(None);
        }
        let mut pairs = Vec::with_capacity(self.weights.len());
        for (k, w) in &self.weights {
            match self.records.get(k) {
                Some(r) if r.phase != Phase::Unseen => pairs.push((*w, r.s)),
                _ => {
                    self.plan = Some(f_max);
                    return Ok(self.plan);
                }
            }
        }
        let s_agg = aggregate(&pairs).unwrap_or(1.0);
        self.plan = Some(select_frequency(s_agg, cfg.dvfs_slip_k, supported, cfg.s_floor)?);
        Ok(self.plan)
    }

    pub fn aggregate_sensitivity(&self) -> Option<f64> {
        let pairs: Vec<_> = self
            .weights
            .iter()
            .filter_map(|(k, w)| self.records.get(k).map(|r| (*w, r.s)))
            .collect();
        aggregate(&pairs).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensitivity_examples() {
        assert!((sensitivity(200.0, 100.0, 500, 1000).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(sensitivity(100.0, 100.0, 500, 1000).unwrap(), 0.0);
        assert!((sensitivity(110.0, 100.0, 800, 1000).unwrap() - 0.4).abs() < 1e-12);
        assert!(sensitivity(0.0, 100.0, 800, 1000).is_err());
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[(0.3, 1.0), (0.7, 1.0)]).unwrap(), 1.0);
        assert_eq!(aggregate(&[(0.5, 1.0), (0.5, 0.0)]).unwrap(), 0.5);
        assert_eq!(aggregate(&[(1.0, 0.3)]).unwrap(), 0.3);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn select_examples() {
        let table: Vec<u32> = (100..=1000).step_by(10).collect();
        assert_eq!(select_frequency(1.0, 0.1, &table, 1e-6).unwrap(), 910);
        assert_eq!(select_frequency(0.5, 0.1, &table, 1e-6).unwrap(), 840);
        assert_eq!(select_frequency(0.0, 0.1, &table, 1e-6).unwrap(), 100);
        assert!(select_frequency(1.0, 0.1, &[], 1e-6).is_err());
    }

    #[test]
    fn arbitrate_takes_max() {
        assert_eq!(arbitrate(&[700], 1000), 700);
        assert_eq!(arbitrate(&[1000, 300], 500), 1000);
        assert_eq!(arbitrate(&[], 500), 500);
    }

    #[test]
    fn learning_progression() {
        let table: Vec<u32> = (100..=1000).step_by(10).collect();
        let cfg = DvfsConfig::default();
        let mut rec = SensitivityRecord::default();
        // Memory-bound kernel: latency never changes.
        let f = learning_step(&mut rec, Observation { per_block_ns: 100.0, f_mhz: 1000 }, &cfg, &table).unwrap();
        assert_eq!(rec.phase, Phase::Probing);
        assert_eq!(f, 910);
        let f2 = learning_step(&mut rec, Observation { per_block_ns: 100.0, f_mhz: f }, &cfg, &table).unwrap();
        assert!(f2 < f);
        assert_eq!(rec.phase, Phase::Probing);
        learning_step(&mut rec, Observation { per_block_ns: 100.0, f_mhz: f2 }, &cfg, &table).unwrap();
        assert_eq!(rec.phase, Phase::Confirmed);
    }
}
