//! Scenario files: device, apps, policy and knobs for one simulation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::atomizer::AtomizerConfig;
use crate::baselines::{BaselineConfig, PolicyKind};
use crate::device::{DeviceProfile, DeviceSpec};
use crate::error::{Error, Result};
use crate::power_manager::DvfsConfig;
use crate::predictor::PredictorConfig;
use crate::rightsizer::RightsizerConfig;
use crate::scheduler::{FullSystemConfig, SchedulerConfig};
use crate::time::Nanos;
use crate::workload::{AppSpec, Arrival, ModelSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub device: DeviceSpec,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default)]
    pub seed: u64,
    pub horizon_ms: f64,
    /// Requests arriving before this are excluded from the statistics.
    #[serde(default)]
    pub warmup_ms: f64,
    /// Line-delimited trace for apps whose model is `trace`.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    /// Check device and throttle invariants after every event.
    #[serde(default)]
    pub check_invariants: bool,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub atomizer: AtomizerConfig,
    #[serde(default)]
    pub rightsizer: RightsizerConfig,
    #[serde(default)]
    pub dvfs: DvfsConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    pub apps: Vec<AppSpec>,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_policy() -> PolicyKind {
    PolicyKind::FullSystem
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(s)
    }

    /// Reads a scenario; a relative trace path is resolved against the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut s = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let (Some(t), Some(dir)) = (&s.trace, path.parent()) {
            if t.is_relative() {
                s.trace = Some(dir.join(t));
            }
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn horizon(&self) -> Nanos {
        Nanos::from_millis_f64(self.horizon_ms)
    }

    pub fn warmup(&self) -> Nanos {
        Nanos::from_millis_f64(self.warmup_ms)
    }

    pub fn profile(&self) -> Result<DeviceProfile> {
        self.device.resolve()
    }

    pub fn full_system_config(&self) -> FullSystemConfig {
        FullSystemConfig {
            scheduler: self.scheduler.clone(),
            atomizer: self.atomizer.clone(),
            rightsizer: self.rightsizer.clone(),
            dvfs: self.dvfs.clone(),
            predictor: self.predictor.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let profile = self.profile()?;
        let total = profile.topology.total_tpcs();
        if !(self.horizon_ms > 0.0 && self.horizon_ms.is_finite()) {
            return Err(Error::Validation("horizon_ms must be positive".into()));
        }
        if !(self.warmup_ms >= 0.0 && self.warmup_ms < self.horizon_ms) {
            return Err(Error::Validation("warmup_ms must be in [0, horizon_ms)".into()));
        }
        if self.apps.is_empty() {
            return Err(Error::Validation("a scenario needs at least one app".into()));
        }
        self.scheduler.validate()?;
        self.atomizer.validate()?;
        if !(self.rightsizer.slip_k >= 1.0) {
            return Err(Error::Validation("rightsizer.slip_k must be at least 1".into()));
        }
        if !(self.dvfs.dvfs_slip_k > 0.0) {
            return Err(Error::Validation("dvfs.dvfs_slip_k must be positive".into()));
        }
        if !(self.predictor.beta > 0.0 && self.predictor.beta <= 1.0) {
            return Err(Error::Validation("predictor.beta must be in (0, 1]".into()));
        }
        if !(self.baseline.time_slice_ms > 0.0) {
            return Err(Error::Validation("baseline.time_slice_ms must be positive".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for app in &self.apps {
            app.validate()?;
            if !names.insert(app.name.as_str()) {
                return Err(Error::Validation(format!("duplicate app name '{}'", app.name)));
            }
            if matches!(app.model, ModelSource::Trace) && self.trace.is_none() {
                return Err(Error::Validation(format!("app '{}' uses a trace but none is configured", app.name)));
            }
        }
        let quota: u64 = self.apps.iter().map(|a| a.tpc_quota as u64).sum();
        if quota > total as u64 {
            return Err(Error::Validation(format!("quotas sum to {quota} but the device has {total} TPCs")));
        }
        Ok(())
    }

    /// The same scenario with only `app` on the device, owning all of it.
    pub fn alone(&self, app: usize, policy: PolicyKind) -> Result<Scenario> {
        let total = self.profile()?.topology.total_tpcs();
        let mut s = self.clone();
        let mut a = self.apps[app].clone();
        a.tpc_quota = total;
        s.apps = vec![a];
        s.policy = policy;
        s.name = format!("{}/alone-{}", self.name, self.apps[app].name);
        Ok(s)
    }

    /// Arrival seed of an app: its own, or one derived from the scenario
    /// seed and its name so that alone-runs see the same arrivals.
    pub fn arrival_seed(&self, app: &AppSpec) -> u64 {
        match app.arrival {
            Arrival::Poisson { seed: Some(s), .. } => s,
            _ => derive_seed(self.seed, &app.name),
        }
    }
}

fn derive_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, folded into the scenario seed by splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
horizon_ms = 100

[[apps]]
name = "hp"
priority = "hp"
tpc_quota = 54
slo = { latency_ms = 10.0 }
arrival = { type = "poisson", rate_rps = 100.0 }
model = { synth = { layers = 2, blocks = 64, block_us = 100.0 } }
"#;

    #[test]
    fn minimal_parses_and_validates() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        s.validate().unwrap();
        assert_eq!(s.policy, PolicyKind::FullSystem);
        assert_eq!(s.apps[0].tpc_quota, 54);
        let back = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_oversubscribed_quotas() {
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.apps[0].tpc_quota = 55;
        assert!(matches!(s.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_hp_without_slo() {
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.apps[0].slo = None;
        assert!(matches!(s.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("bogus = 1\n{MINIMAL}");
        assert!(matches!(Scenario::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn derived_seeds_depend_on_name() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
    }
}
