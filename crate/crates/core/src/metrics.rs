//! Run metrics: latency percentiles, SLO attainment, goodput, utilization,
//! capacity and energy savings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::Accuracy;
use crate::rightsizer::{weighted_r_squared, FitSample};
use crate::scheduler::{DvfsAppSummary, RightsizeRecord};
use crate::time::Nanos;
use crate::workload::{PriorityClass, Slo};

/// Nearest-rank percentile: the smallest sample with at least `p`% of the
/// samples at or below it.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Undefined("percentile of an empty sample set".into()));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Validation(format!("percentile {p} outside (0, 100]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// `1 - rightsized / baseline` over time-integrated allocated TPCs.
pub fn capacity_savings(rightsized_tpc_ns: u128, baseline_tpc_ns: u128) -> Result<f64> {
    if baseline_tpc_ns == 0 {
        return Err(Error::Undefined("baseline allocation integral is zero".into()));
    }
    Ok(1.0 - rightsized_tpc_ns as f64 / baseline_tpc_ns as f64)
}

/// `1 - E_dvfs / E_maxfreq`.
pub fn energy_savings(dvfs_j: f64, maxfreq_j: f64) -> Result<f64> {
    if !(maxfreq_j > 0.0) {
        return Err(Error::Undefined("baseline energy is zero".into()));
    }
    Ok(1.0 - dvfs_j / maxfreq_j)
}

/// One finished or unfinished request as seen by the metrics layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestLog {
    pub app: u32,
    pub id: u64,
    pub arrival_ns: u64,
    /// `None` while the request was still open at the horizon.
    pub completed_ns: Option<u64>,
}

impl RequestLog {
    pub fn latency(&self) -> Option<Nanos> {
        self.completed_ns.map(|c| Nanos(c - self.arrival_ns))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppReport {
    pub name: String,
    pub class: PriorityClass,
    pub quota: u32,
    pub slo: Option<Slo>,
    pub submitted: u64,
    pub completed: u64,
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub mean_ms: Option<f64>,
    pub throughput_rps: f64,
    /// Throughput divided by `normalizer_rps`.
    pub normalized_throughput: Option<f64>,
    pub normalizer: Option<String>,
    pub normalizer_rps: Option<f64>,
    pub goodput_rps: f64,
    pub slo_attainment: Option<f64>,
    /// Fraction of all busy TPC-time spent on this app.
    pub tpc_time_share: f64,
    pub allocated_tpc_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub total_tpcs: u32,
    pub elapsed_ms: f64,
    pub utilization: f64,
    pub allocated_tpc_ms: f64,
    pub energy_j: f64,
    pub blocks_executed: u64,
    pub frequency_switch_requests: u64,
    /// Fraction of elapsed time spent at each frequency.
    pub frequency_residency: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RightsizingReport {
    pub weighted_r_squared: Option<f64>,
    pub kernels: Vec<RightsizeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean SLO attainment over HP apps.
    pub slo_attainment: Option<f64>,
    /// Mean of per-app normalized throughput.
    pub aggregate_normalized_throughput: Option<f64>,
    pub total_throughput_rps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub policy: String,
    pub seed: u64,
    pub horizon_ms: f64,
    pub warmup_ms: f64,
    pub apps: Vec<AppReport>,
    pub device: DeviceReport,
    pub summary: Summary,
    pub predictor: Option<Accuracy>,
    pub rightsizing: Option<RightsizingReport>,
    pub dvfs: Vec<DvfsAppSummary>,
}

impl RunReport {
    pub fn app(&self, name: &str) -> Option<&AppReport> {
        self.apps.iter().find(|a| a.name == name)
    }

    /// Canonical serialization; identical runs give identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per-app inputs to [`app_report`].
pub struct AppInput<'a> {
    pub name: &'a str,
    pub class: PriorityClass,
    pub quota: u32,
    pub slo: Option<&'a Slo>,
    pub requests: &'a [RequestLog],
    pub active_tpc_ns: u128,
    pub allocated_tpc_ns: u128,
    /// Throughput of the same app alone on the device, when available.
    pub alone_rps: Option<f64>,
}

/// Stats over requests that arrived in `[warmup, horizon)`. Open requests
/// already older than a latency SLO count as violations.
pub fn app_report(input: &AppInput, warmup: Nanos, horizon: Nanos, total_active_tpc_ns: u128) -> AppReport {
    let window = (horizon - warmup.min(horizon)).as_secs_f64();
    let measured: Vec<&RequestLog> = input
        .requests
        .iter()
        .filter(|r| r.arrival_ns >= warmup.0 && r.arrival_ns < horizon.0)
        .collect();
    let latencies: Vec<f64> = measured.iter().filter_map(|r| r.latency()).map(Nanos::as_millis_f64).collect();
    let completed = latencies.len() as u64;
    let rate = |n: u64| if window > 0.0 { n as f64 / window } else { 0.0 };
    let throughput = rate(completed);
    let pct = |p| percentile(&latencies, p).ok();

    let (goodput, slo_attainment) = match input.slo {
        Some(&Slo::LatencyMs(slo)) => {
            let ok = latencies.iter().filter(|&&l| l <= slo).count() as u64;
            let overdue = measured
                .iter()
                .filter(|r| r.completed_ns.is_none() && Nanos(horizon.0 - r.arrival_ns).as_millis_f64() > slo)
                .count() as u64;
            let judged = completed + overdue;
            let att = if judged > 0 { Some(ok as f64 / judged as f64) } else { None };
            (rate(ok), att)
        }
        Some(Slo::Throughput(target)) => {
            let att = input
                .alone_rps
                .filter(|&r| r > 0.0)
                .map(|r| ((throughput / r) / target).min(1.0));
            (throughput, att)
        }
        None => (throughput, None),
    };
    let normalized = input.alone_rps.filter(|&r| r > 0.0).map(|r| throughput / r);

    AppReport {
        name: input.name.to_string(),
        class: input.class,
        quota: input.quota,
        slo: input.slo.cloned(),
        submitted: measured.len() as u64,
        completed,
        p50_ms: pct(50.0),
        p95_ms: pct(95.0),
        p99_ms: pct(99.0),
        mean_ms: (!latencies.is_empty()).then(|| latencies.iter().sum::<f64>() / latencies.len() as f64),
        throughput_rps: throughput,
        normalized_throughput: normalized,
        normalizer: normalized.map(|_| "alone-run".to_string()),
        normalizer_rps: input.alone_rps,
        goodput_rps: goodput,
        slo_attainment,
        tpc_time_share: if total_active_tpc_ns > 0 {
            input.active_tpc_ns as f64 / total_active_tpc_ns as f64
        } else {
            0.0
        },
        allocated_tpc_ms: input.allocated_tpc_ns as f64 / 1e6,
    }
}

pub fn summarize(apps: &[AppReport]) -> Summary {
    let hp: Vec<f64> = apps
        .iter()
        .filter(|a| a.class == PriorityClass::Hp)
        .filter_map(|a| a.slo_attainment)
        .collect();
    let norm: Vec<f64> = apps.iter().filter_map(|a| a.normalized_throughput).collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Summary {
        slo_attainment: mean(&hp),
        aggregate_normalized_throughput: if norm.len() == apps.len() { mean(&norm) } else { None },
        total_throughput_rps: apps.iter().map(|a| a.throughput_rps).sum(),
    }
}

/// Execution-time-weighted R² over operators with at least two distinct
/// TPC counts observed.
pub fn rightsizing_r_squared(records: &[RightsizeRecord]) -> Option<f64> {
    let samples: Vec<FitSample> = records
        .iter()
        .filter_map(|r| {
            let fit = r.fit.filter(|f| f.valid)?;
            // Fits are in nanoseconds, recorded points in microseconds.
            let points: Vec<(u32, f64)> = r.points.iter().map(|&(t, l)| (t, l * 1e3)).collect();
            let weight = points.iter().map(|p| p.1).sum();
            Some(FitSample { fit, points, weight })
        })
        .collect();
    weighted_r_squared(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.0);
        assert_eq!(percentile(&[7.0; 100], 1.0).unwrap(), 7.0);
        assert_eq!(percentile(&[7.0; 100], 99.9).unwrap(), 7.0);
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0).unwrap(), 990.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 1000.0);
        assert!(percentile(&[], 50.0).is_err());
    }

    #[test]
    fn savings() {
        assert_eq!(capacity_savings(100, 100).unwrap(), 0.0);
        assert_eq!(capacity_savings(50, 100).unwrap(), 0.5);
        assert!(capacity_savings(1, 0).is_err());
        assert_eq!(energy_savings(10.0, 10.0).unwrap(), 0.0);
        assert!(energy_savings(1.0, 0.0).is_err());
    }

    fn req(arrival_ms: u64, latency_ms: Option<u64>) -> RequestLog {
        RequestLog {
            app: 0,
            id: 0,
            arrival_ns: Nanos::from_millis(arrival_ms).0,
            completed_ns: latency_ms.map(|l| Nanos::from_millis(arrival_ms + l).0),
        }
    }

    #[test]
    fn slo_and_goodput() {
        let slo = Slo::LatencyMs(10.0);
        let reqs = [req(0, Some(5)), req(100, Some(20)), req(200, Some(8)), req(990, None), req(900, None)];
        let input = AppInput {
            name: "a",
            class: PriorityClass::Hp,
            quota: 1,
            slo: Some(&slo),
            requests: &reqs,
            active_tpc_ns: 1,
            allocated_tpc_ns: 0,
            alone_rps: Some(3.0),
        };
        let r = app_report(&input, Nanos::ZERO, Nanos::from_secs(1), 4);
        assert_eq!(r.completed, 3);
        assert_eq!(r.submitted, 5);
        // The request from 900ms is 100ms old at the horizon: a violation.
        // The one from 990ms is only 10ms old and not judged yet.
        assert_eq!(r.slo_attainment, Some(0.5));
        assert_eq!(r.goodput_rps, 2.0);
        assert_eq!(r.throughput_rps, 3.0);
        assert_eq!(r.normalized_throughput, Some(1.0));
        assert!(r.goodput_rps <= r.throughput_rps);
        assert_eq!(r.tpc_time_share, 0.25);
    }

    #[test]
    fn warmup_excludes_early_requests() {
        let reqs = [req(0, Some(50)), req(600, Some(5))];
        let input = AppInput {
            name: "be",
            class: PriorityClass::Be,
            quota: 0,
            slo: None,
            requests: &reqs,
            active_tpc_ns: 0,
            allocated_tpc_ns: 0,
            alone_rps: None,
        };
        let r = app_report(&input, Nanos::from_millis(500), Nanos::from_secs(1), 0);
        assert_eq!(r.completed, 1);
        assert_eq!(r.p99_ms, Some(5.0));
        assert_eq!(r.throughput_rps, 2.0);
        assert_eq!(r.slo_attainment, None);
    }

    #[test]
    fn throughput_slo_attainment() {
        let slo = Slo::Throughput(0.5);
        let reqs = [req(0, Some(1)), req(10, Some(1))];
        let input = AppInput {
            name: "t",
            class: PriorityClass::Hp,
            quota: 0,
            slo: Some(&slo),
            requests: &reqs,
            active_tpc_ns: 0,
            allocated_tpc_ns: 0,
            alone_rps: Some(8.0),
        };
        let r = app_report(&input, Nanos::ZERO, Nanos::from_secs(1), 0);
        assert_eq!(r.slo_attainment, Some(0.5));
    }
}
