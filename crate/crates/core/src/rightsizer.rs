//! Hardware right-sizing with the two-point `l(t) = m/t + b` model.

use serde::{Deserialize, Serialize};

use crate::device::wave_count;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RightsizerConfig {
    pub enabled: bool,
    pub slip_k: f64,
    /// The one-TPC probe only runs when the launch queue is shallower than this.
    pub probe_depth_limit: usize,
}

impl Default for RightsizerConfig {
    fn default() -> Self {
        RightsizerConfig {
            enabled: false,
            slip_k: 1.1,
            probe_depth_limit: 1,
        }
    }
}

/// Fitted scaling curve in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub m: f64,
    pub b: f64,
    pub l1: f64,
    pub lt: f64,
    pub t_probe: u32,
    pub valid: bool,
}

impl ScalingFit {
    pub fn latency(&self, t: u32) -> f64 {
        self.m / t as f64 + self.b
    }
}

/// Solves `l1 = m + b`, `lT = m/T + b`.
pub fn fit_scaling(l1: f64, lt: f64, t: u32) -> ScalingFit {
    let tf = t as f64;
    let (m, b) = if t >= 2 {
        let m = (l1 - lt) / (1.0 - 1.0 / tf);
        (m, l1 - m)
    } else {
        (0.0, l1)
    };
    let valid = t >= 2 && l1 > 0.0 && lt > 0.0 && l1 >= lt && b >= -1e-9 * l1;
    ScalingFit {
        m,
        b: if valid { b.max(0.0) } else { b },
        l1,
        lt,
        t_probe: t,
        valid,
    }
}

/// Upper bound on the TPCs a kernel can keep busy.
pub fn filter_cap(total_blocks: u32, occupancy_per_tpc: u32, total_tpcs: u32) -> u32 {
    total_blocks
        .div_ceil(occupancy_per_tpc.max(1))
        .clamp(1, total_tpcs.max(1))
}

/// Smallest TPC count whose modelled latency stays within `slip_k` times the
/// latency at `min(t_alloc, cap)`.
pub fn choose_tpcs(fit: &ScalingFit, t_alloc: u32, slip_k: f64, cap: u32) -> u32 {
    let full = t_alloc.min(cap).max(1);
    if !fit.valid {
        return full;
    }
    let budget = slip_k * fit.latency(full);
    if fit.m <= 0.0 {
        return 1;
    }
    if budget <= fit.b {
        return full;
    }
    let mut t = (fit.m / (budget - fit.b)).ceil().max(1.0) as u32;
    // Guard against rounding at the boundary.
    while t > 1 && fit.latency(t - 1) <= budget {
        t -= 1;
    }
    while t < full && fit.latency(t) > budget {
        t += 1;
    }
    t.clamp(1, full)
}

/// Raises `t` until the kernel's block-wave count is within `slip_k` of the
/// count at `full`. The linear fit cannot see wave quantization, so a `t`
/// that meets the modelled budget can still add a whole wave.
pub fn wave_guard(t: u32, full: u32, total_blocks: u32, occupancy_per_tpc: u32, slip_k: f64) -> u32 {
    let full = full.max(1);
    let occ = occupancy_per_tpc.max(1) as u64;
    let allowed = (slip_k * wave_count(total_blocks, full, occupancy_per_tpc.max(1)) as f64 + 1e-9).floor().max(1.0) as u64;
    let need = (total_blocks as u64).div_ceil(occ * allowed) as u32;
    t.max(need).clamp(1, full)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDecision {
    UseFull,
    ProbeOneTpc,
    UseFit,
}

/// What the right-sizer knows about one operator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProbeState {
    pub full_observed: bool,
    pub has_fit: bool,
}

/// Observable context for deciding when the one-TPC probe may run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeContext {
    pub queue_depth: usize,
    pub best_effort: bool,
    /// True when recent request latency is under half the SLO.
    pub slo_headroom_2x: bool,
}

pub fn probe_policy(state: &ProbeState, ctx: &ProbeContext, probe_depth_limit: usize) -> ProbeDecision {
    if state.has_fit {
        ProbeDecision::UseFit
    } else if !state.full_observed {
        ProbeDecision::UseFull
    } else if ctx.queue_depth < probe_depth_limit && (ctx.best_effort || ctx.slo_headroom_2x) {
        ProbeDecision::ProbeOneTpc
    } else {
        ProbeDecision::UseFull
    }
}

/// Coefficient of determination of `fit` over `(t, latency)` observations.
pub fn r_squared(fit: &ScalingFit, points: &[(u32, f64)]) -> Option<f64> {
    let mut ts: Vec<u32> = points.iter().map(|p| p.0).collect();
    ts.sort_unstable();
    ts.dedup();
    if ts.len() < 2 {
        return None;
    }
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - fit.latency(p.0)).powi(2)).sum();
    if ss_tot <= f64::EPSILON * mean * mean {
        // Flat observations: perfect if the model is flat too.
        return Some(if ss_res <= 1e-12 * mean * mean { 1.0 } else { 0.0 });
    }
    Some(1.0 - ss_res / ss_tot)
}

/// One kernel's fit and the observations it is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSample {
    pub fit: ScalingFit,
    pub points: Vec<(u32, f64)>,
    /// Total execution time used as the weight.
    pub weight: f64,
}

/// Execution-time-weighted average of per-kernel R²; kernels with fewer than
/// two distinct TPC counts are skipped.
pub fn weighted_r_squared(samples: &[FitSample]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        if let Some(r2) = r_squared(&s.fit, &s.points) {
            num += s.weight * r2;
            den += s.weight;
        }
    }
    (den > 0.0).then(|| num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_examples() {
        let f = fit_scaling(100.0, 50.0, 2);
        assert!(f.valid);
        assert!((f.m - 100.0).abs() < 1e-12 && f.b.abs() < 1e-12);

        let flat = fit_scaling(7.0, 7.0, 54);
        assert!(flat.valid);
        assert_eq!(flat.m, 0.0);
        assert_eq!(flat.b, 7.0);

        assert!(!fit_scaling(10.0, 20.0, 4).valid);
    }

    #[test]
    fn perfectly_parallel_recovers_mass() {
        let l1 = 100.0;
        let l54 = 100.0 / 54.0;
        let f = fit_scaling(l1, l54, 54);
        assert!((f.m - 100.0).abs() < 1e-9);
        assert!(f.b.abs() < 1e-9);
    }

    #[test]
    fn wave_guard_keeps_wave_count() {
        // 432 blocks at occupancy 2: four waves on 54 TPCs, five on 50.
        assert_eq!(wave_guard(50, 54, 432, 2, 1.1), 54);
        // 540 blocks at occupancy 1: ten waves on 54, eleven allowed.
        assert_eq!(wave_guard(50, 54, 540, 1, 1.1), 50);
        assert_eq!(wave_guard(40, 54, 540, 1, 1.1), 50);
        assert_eq!(wave_guard(3, 4, 8, 2, 1.1), 4);
        assert_eq!(wave_guard(1, 1, 1, 1, 1.0), 1);
    }

    #[test]
    fn filter_cap_examples() {
        assert_eq!(filter_cap(64, 4, 54), 16);
        assert_eq!(filter_cap(1, 8, 54), 1);
        assert_eq!(filter_cap(10_000, 4, 54), 54);
    }

    #[test]
    fn choose_examples() {
        let mk = |m: f64, b: f64| ScalingFit {
            m,
            b,
            l1: m + b,
            lt: m / 54.0 + b,
            t_probe: 54,
            valid: true,
        };
        assert_eq!(choose_tpcs(&mk(100.0, 0.0), 54, 1.1, 54), 50);
        assert_eq!(choose_tpcs(&mk(90.0, 10.0), 54, 1.1, 54), 32);
        assert_eq!(choose_tpcs(&mk(0.0, 10.0), 54, 1.1, 54), 1);
        let invalid = fit_scaling(1.0, 2.0, 54);
        assert_eq!(choose_tpcs(&invalid, 54, 1.1, 20), 20);
    }

    #[test]
    fn probe_policy_cases() {
        let ctx = ProbeContext {
            queue_depth: 0,
            best_effort: true,
            slo_headroom_2x: false,
        };
        assert_eq!(probe_policy(&ProbeState::default(), &ctx, 1), ProbeDecision::UseFull);
        let warm = ProbeState {
            full_observed: true,
            has_fit: false,
        };
        assert_eq!(probe_policy(&warm, &ctx, 1), ProbeDecision::ProbeOneTpc);
        let busy = ProbeContext { queue_depth: 3, ..ctx };
        assert_eq!(probe_policy(&warm, &busy, 1), ProbeDecision::UseFull);
        let fitted = ProbeState {
            full_observed: true,
            has_fit: true,
        };
        assert_eq!(probe_policy(&fitted, &ctx, 1), ProbeDecision::UseFit);
    }

    #[test]
    fn r_squared_exact_and_noisy() {
        let f = fit_scaling(100.0, 10.0, 10);
        let pts: Vec<_> = [1, 2, 5, 10].iter().map(|&t| (t, f.latency(t))).collect();
        assert!((r_squared(&f, &pts).unwrap() - 1.0).abs() < 1e-12);

        let flat = fit_scaling(5.0, 5.0, 10);
        let noisy = vec![(1, 5.05), (2, 4.95), (10, 5.0)];
        assert!(r_squared(&flat, &noisy).unwrap().is_finite());
        assert_eq!(r_squared(&flat, &[(3, 5.0)]), None);
    }
}
