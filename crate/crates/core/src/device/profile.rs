use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DeviceTopology, FrequencyDomain, PowerModel};
use crate::error::{Error, Result};
use crate::time::Nanos;

/// Structured device description: topology, clock table and power constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub name: String,
    pub topology: DeviceTopology,
    pub frequency: FrequencyTable,
    #[serde(default = "default_switch_ms")]
    pub switch_latency_ms: f64,
    #[serde(default)]
    pub power: PowerModel,
}

fn default_switch_ms() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum FrequencyTable {
    List { supported_mhz: Vec<u32> },
    Stepped { min_mhz: u32, max_mhz: u32, step_mhz: u32 },
}

/// Either a built-in profile name or an inline profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceSpec {
    Named(String),
    Inline(DeviceProfile),
}

impl Default for DeviceSpec {
    fn default() -> Self {
        DeviceSpec::Named("a100-like".into())
    }
}

impl DeviceSpec {
    pub fn resolve(&self) -> Result<DeviceProfile> {
        match self {
            DeviceSpec::Named(name) => DeviceProfile::builtin(name),
            DeviceSpec::Inline(p) => {
                p.validate()?;
                Ok(p.clone())
            }
        }
    }
}

impl DeviceProfile {
    pub const BUILTIN: [&'static str; 2] = ["a100-like", "h100-like"];

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "a100-like" => Ok(DeviceProfile {
                name: name.into(),
                topology: DeviceTopology::a100_like(),
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
            }),
            "h100-like" => Ok(DeviceProfile {
                name: name.into(),
                topology: DeviceTopology::h100_like(),
                frequency: FrequencyTable::Stepped {
                    min_mhz: 210,
                    max_mhz: 1980,
                    step_mhz: 15,
                },
                switch_latency_ms: 50.0,
                power: PowerModel {
                    p_static_w: 80.0,
                    p_tpc_w: 8.6,
                    alpha: 2.0,
                },
            }),
            other => Err(Error::Config(format!(
                "unknown device profile '{other}' (built-ins: {})",
                Self::BUILTIN.join(", ")
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let profile: DeviceProfile =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.power.validate()?;
        self.frequency_domain()?;
        if !(self.switch_latency_ms >= 0.0) {
            return Err(Error::Config("switch latency must be non-negative".into()));
        }
        Ok(())
    }

    pub fn frequency_domain(&self) -> Result<FrequencyDomain> {
        let latency = Nanos::from_millis_f64(self.switch_latency_ms);
        match &self.frequency {
            FrequencyTable::List { supported_mhz } => FrequencyDomain::new(supported_mhz.clone(), latency),
            FrequencyTable::Stepped {
                min_mhz,
                max_mhz,
                step_mhz,
            } => FrequencyDomain::stepped(*min_mhz, *max_mhz, *step_mhz, latency),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve() {
        for name in DeviceProfile::BUILTIN {
            let p = DeviceProfile::builtin(name).unwrap();
            p.validate().unwrap();
        }
        let a = DeviceProfile::builtin("a100-like").unwrap();
        let f = a.frequency_domain().unwrap();
        assert_eq!(f.f_max(), 1410);
        assert_eq!(f.f_min(), 210);
        assert!(DeviceProfile::builtin("tpu").is_err());
    }

    #[test]
    fn parses_inline_toml() {
        let text = r#"
            name = "seven-gpc"
            switch_latency_ms = 50
            [topology]
            gpc_count = 7
            tpcs_per_gpc = 8
            sms_per_tpc = 2
            [frequency]
            supported_mhz = [705, 1005, 1410]
            [power]
            p_static_w = 50.0
            p_tpc_w = 5.0
        "#;
        let p: DeviceProfile = toml::from_str(text).unwrap();
        p.validate().unwrap();
        assert_eq!(p.topology.total_tpcs(), 56);
        assert_eq!(p.power.alpha, 2.0);
        assert_eq!(p.frequency_domain().unwrap().supported_mhz(), &[705, 1005, 1410]);
    }
}
