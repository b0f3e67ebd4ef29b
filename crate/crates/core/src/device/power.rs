use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::Nanos;

/// Affine power draw: a static floor plus a per-active-TPC dynamic term that
/// scales with `(f / f_max)^alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub p_static_w: f64,
    pub p_tpc_w: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    2.0
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel {
            p_static_w: 50.0,
            p_tpc_w: 5.0,
            alpha: default_alpha(),
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<()> {
        if self.p_static_w < 0.0 || self.p_tpc_w < 0.0 || self.alpha < 0.0 {
            return Err(Error::Config(format!("power model must be non-negative: {self:?}")));
        }
        Ok(())
    }

    /// Instantaneous power in watts.
    pub fn power_w(&self, active_tpcs: u32, f_mhz: u32, f_max_mhz: u32) -> f64 {
        let ratio = f_mhz as f64 / f_max_mhz as f64;
        self.p_static_w + self.p_tpc_w * active_tpcs as f64 * ratio.powf(self.alpha)
    }

    /// Energy in joules drawn over `interval` at a constant operating point.
    pub fn energy_j(&self, interval: Nanos, active_tpcs: u32, f_mhz: u32, f_max_mhz: u32) -> f64 {
        self.power_w(active_tpcs, f_mhz, f_max_mhz) * interval.as_secs_f64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_examples() {
        let p = PowerModel {
            p_static_w: 50.0,
            p_tpc_w: 5.0,
            alpha: 2.0,
        };
        let sec = Nanos::from_secs(1);
        assert_eq!(p.energy_j(sec, 0, 1000, 1000), 50.0);
        assert_eq!(p.energy_j(sec, 10, 1000, 1000), 100.0);
        assert_eq!(p.energy_j(sec, 10, 500, 1000), 62.5);
        assert_eq!(p.energy_j(Nanos::ZERO, 10, 500, 1000), 0.0);
    }

    #[test]
    fn monotone_in_frequency_and_tpcs() {
        let p = PowerModel::default();
        let mut last = 0.0;
        for f in [100, 400, 700, 1000] {
            let w = p.power_w(8, f, 1000);
            assert!(w >= last);
            last = w;
        }
        assert!(p.power_w(9, 700, 1000) >= p.power_w(8, 700, 1000));
    }
}
