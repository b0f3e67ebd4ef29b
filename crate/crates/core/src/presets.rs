//! Built-in scenario bundles. Each bundle is a list of labelled scenarios
//! over one workload.

use crate::baselines::PolicyKind;
use crate::device::{DeviceProfile, DeviceSpec, DeviceTopology, FrequencyTable, PowerModel};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::workload::{AppSpec, Arrival, Dist, ModelSource, PriorityClass, Slo, SynthParams};

pub const NAMES: [&str; 6] = ["fig7", "inf-inf", "inf-train", "rightsize-inf", "rightsize-mixed", "dvfs"];

#[derive(Debug, Clone)]
pub struct Bundle {
    pub name: &'static str,
    pub description: &'static str,
    pub runs: Vec<(String, Scenario)>,
}

pub fn preset(name: &str) -> Result<Bundle> {
    match name {
        "fig7" => Ok(fig7()),
        "inf-inf" => Ok(inf_inf()),
        "inf-train" => Ok(inf_train()),
        "rightsize-inf" => Ok(rightsize_inf()),
        "rightsize-mixed" => Ok(rightsize_mixed()),
        "dvfs" => Ok(dvfs()),
        other => Err(Error::Validation(format!(
            "unknown preset '{other}' (available: {})",
            NAMES.join(", ")
        ))),
    }
}

/// A model whose every layer has the same shape.
pub fn uniform_model(layers: u32, blocks: u32, block_us: f64, sensitivity: f64, occupancy: u32) -> ModelSource {
    ModelSource::Synth(SynthParams {
        layers,
        blocks: Dist::Const(blocks as f64),
        block_us: Dist::Const(block_us),
        sensitivity: Dist::Const(sensitivity),
        occupancy: Dist::Const(occupancy as f64),
        seed: 0,
        blocks_scale: None,
    })
}

pub fn hp(name: &str, quota: u32, slo_ms: f64, rate_rps: f64, model: ModelSource) -> AppSpec {
    AppSpec {
        name: name.into(),
        priority: PriorityClass::Hp,
        tpc_quota: quota,
        slo: Some(Slo::LatencyMs(slo_ms)),
        arrival: Arrival::Poisson { rate_rps, seed: None },
        model,
        mig_gpcs: None,
    }
}

pub fn be(name: &str, quota: u32, model: ModelSource) -> AppSpec {
    AppSpec {
        name: name.into(),
        priority: PriorityClass::Be,
        tpc_quota: quota,
        slo: None,
        arrival: Arrival::ClosedLoop,
        model,
        mig_gpcs: None,
    }
}

pub fn base(name: &str, horizon_ms: f64, warmup_ms: f64, apps: Vec<AppSpec>) -> Scenario {
    Scenario {
        name: name.into(),
        device: DeviceSpec::default(),
        policy: PolicyKind::FullSystem,
        seed: 1,
        horizon_ms,
        warmup_ms,
        trace: None,
        check_invariants: false,
        scheduler: Default::default(),
        atomizer: Default::default(),
        rightsizer: Default::default(),
        dvfs: Default::default(),
        predictor: Default::default(),
        baseline: Default::default(),
        apps,
    }
}

fn with(s: &Scenario, label: &str, f: impl FnOnce(&mut Scenario)) -> (String, Scenario) {
    let mut s = s.clone();
    f(&mut s);
    s.name = format!("{}/{label}", s.name);
    (label.to_string(), s)
}

/// One HP app that idles often and a closed-loop BE app with long kernels,
/// under increasingly complete mechanisms.
pub fn fig7() -> Bundle {
    let s = base(
        "fig7",
        20000.0,
        500.0,
        vec![
            hp("hp-a", 18, 20.0, 60.0, uniform_model(8, 144, 500.0, 1.0, 4)),
            hp("hp-b", 18, 20.0, 10.0, uniform_model(8, 144, 500.0, 1.0, 4)),
            AppSpec {
                arrival: Arrival::Poisson { rate_rps: 65.0, seed: None },
                ..be("be", 18, uniform_model(4, 432, 1000.0, 1.0, 4))
            },
        ],
    );
    Bundle {
        name: "fig7",
        description: "HP inference next to BE training: MPS, TPC scheduling, + stealing, + atomization",
        runs: vec![
            with(&s, "mps", |s| s.policy = PolicyKind::MpsLike),
            with(&s, "scheduling", |s| {
                s.scheduler.stealing = false;
                s.atomizer.enabled = false;
            }),
            with(&s, "stealing", |s| s.atomizer.enabled = false),
            with(&s, "atomization", |_| {}),
        ],
    }
}

/// Seven GPCs of eight TPCs so MIG can express a 4/7 + 3/7 split.
pub fn seven_gpc_device() -> DeviceSpec {
    DeviceSpec::Inline(DeviceProfile {
        name: "a100-7gpc".into(),
        topology: DeviceTopology {
            gpc_count: 7,
            tpcs_per_gpc: 8,
            sms_per_tpc: 2,
        },
        frequency: FrequencyTable::Stepped {
            min_mhz: 210,
            max_mhz: 1410,
            step_mhz: 15,
        },
        switch_latency_ms: 50.0,
        power: PowerModel {
            p_static_w: 60.0,
            p_tpc_w: 6.3,
            alpha: 2.0,
        },
    })
}

/// Two HP inference apps split 75/25 plus a BE app, under every policy.
pub fn inf_inf() -> Bundle {
    let mut a = hp("hp-a", 42, 25.0, 30.0, uniform_model(6, 336, 400.0, 1.0, 4));
    a.mig_gpcs = Some(vec![0, 1, 2, 3]);
    let mut b = hp("hp-b", 14, 15.0, 40.0, uniform_model(4, 112, 400.0, 1.0, 4));
    b.mig_gpcs = Some(vec![4, 5, 6]);
    let c = be("be", 0, uniform_model(4, 896, 1000.0, 1.0, 4));
    let mut s = base("inf-inf", 4000.0, 500.0, vec![a, b, c]);
    s.device = seven_gpc_device();
    Bundle {
        name: "inf-inf",
        description: "inference stacking: two HP apps (75/25) and a BE app",
        runs: PolicyKind::ALL
            .into_iter()
            .map(|p| with(&s, p.as_str(), |s| s.policy = p))
            .collect(),
    }
}

/// One HP inference app next to closed-loop BE training.
pub fn inf_train() -> Bundle {
    let s = base(
        "inf-train",
        4000.0,
        500.0,
        vec![
            hp("hp", 36, 20.0, 60.0, uniform_model(10, 288, 400.0, 1.0, 4)),
            be("train", 18, uniform_model(6, 1296, 1500.0, 1.0, 4)),
        ],
    );
    Bundle {
        name: "inf-train",
        description: "hybrid inference/training stacking under every policy",
        runs: PolicyKind::ALL
            .into_iter()
            .filter(|&p| p != PolicyKind::MigLike)
            .map(|p| with(&s, p.as_str(), |s| s.policy = p))
            .collect(),
    }
}

/// Layer mix patterned on inference kernels: a few wide GEMM-like kernels,
/// attention-like kernels with moderate grids and narrow element-wise ones.
fn inference_layers() -> ModelSource {
    ModelSource::Synth(SynthParams {
        layers: 24,
        blocks: Dist::Kind(crate::workload::DistKind::Choice(vec![8.0, 24.0, 96.0, 540.0, 1080.0])),
        block_us: Dist::Kind(crate::workload::DistKind::Uniform([20.0, 60.0])),
        sensitivity: Dist::Const(1.0),
        occupancy: Dist::Const(1.0),
        seed: 7,
        blocks_scale: None,
    })
}

/// A lone HP inference app with and without right-sizing.
pub fn rightsize_inf() -> Bundle {
    let s = base(
        "rightsize-inf",
        3000.0,
        1000.0,
        vec![hp("hp", 54, 50.0, 40.0, inference_layers())],
    );
    Bundle {
        name: "rightsize-inf",
        description: "synthetic inference with right-sizing off and on (slip 1.1)",
        runs: vec![
            with(&s, "baseline", |_| {}),
            with(&s, "rightsized", |s| s.rightsizer.enabled = true),
        ],
    }
}

/// Flat kernels (few blocks) interleaved with kernels that scale.
fn mixed_layers() -> ModelSource {
    ModelSource::Synth(SynthParams {
        layers: 16,
        blocks: Dist::Kind(crate::workload::DistKind::Choice(vec![4.0, 16.0, 64.0, 864.0])),
        block_us: Dist::Kind(crate::workload::DistKind::Uniform([100.0, 400.0])),
        sensitivity: Dist::Const(1.0),
        occupancy: Dist::Const(4.0),
        seed: 11,
        blocks_scale: None,
    })
}

pub fn rightsize_mixed() -> Bundle {
    let s = base(
        "rightsize-mixed",
        3000.0,
        1000.0,
        vec![
            hp("hp", 36, 80.0, 30.0, mixed_layers()),
            be("be", 18, mixed_layers()),
        ],
    );
    Bundle {
        name: "rightsize-mixed",
        description: "flat and scalable kernels with right-sizing off and on",
        runs: vec![
            with(&s, "baseline", |_| {}),
            with(&s, "rightsized", |s| s.rightsizer.enabled = true),
        ],
    }
}

/// Memory-bound and compute-bound kernels at fixed open-loop load.
pub fn dvfs() -> Bundle {
    let model = ModelSource::Synth(SynthParams {
        layers: 12,
        blocks: Dist::Const(216.0),
        block_us: Dist::Const(300.0),
        sensitivity: Dist::Kind(crate::workload::DistKind::Choice(vec![0.0, 0.2, 0.5, 1.0])),
        occupancy: Dist::Const(4.0),
        seed: 3,
        blocks_scale: None,
    });
    let s = base("dvfs", 6000.0, 2000.0, vec![hp("hp", 54, 100.0, 30.0, model)]);
    Bundle {
        name: "dvfs",
        description: "mixed-sensitivity inference at f_max and under frequency scaling",
        runs: vec![
            with(&s, "max-frequency", |_| {}),
            with(&s, "dvfs", |s| s.dvfs.enabled = true),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in NAMES {
            let b = preset(name).unwrap();
            assert!(!b.runs.is_empty());
            for (_, s) in &b.runs {
                s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.name));
            }
        }
        assert!(preset("nope").is_err());
    }
}
