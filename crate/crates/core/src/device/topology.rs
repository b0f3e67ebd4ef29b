use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical layout of the simulated GPU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceTopology {
    pub gpc_count: u32,
    pub tpcs_per_gpc: u32,
    pub sms_per_tpc: u32,
}

impl DeviceTopology {
    /// 54 TPCs, 108 SMs.
    pub fn a100_like() -> Self {
        DeviceTopology {
            gpc_count: 6,
            tpcs_per_gpc: 9,
            sms_per_tpc: 2,
        }
    }

    /// 8 GPCs of 9 TPCs, 2 SMs each.
    pub fn h100_like() -> Self {
        DeviceTopology {
            gpc_count: 8,
            tpcs_per_gpc: 9,
            sms_per_tpc: 2,
        }
    }

    pub fn total_tpcs(&self) -> u32 {
        self.gpc_count * self.tpcs_per_gpc
    }

    pub fn total_sms(&self) -> u32 {
        self.total_tpcs() * self.sms_per_tpc
    }

    /// GPC that a TPC belongs to. TPC ids are contiguous within a GPC.
    pub fn gpc_of(&self, tpc: u32) -> u32 {
        tpc / self.tpcs_per_gpc
    }

    pub fn validate(&self) -> Result<()> {
        if self.gpc_count == 0 || self.tpcs_per_gpc == 0 || self.sms_per_tpc == 0 {
            return Err(Error::Config(format!(
                "topology counts must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}
