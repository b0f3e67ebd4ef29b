use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::Nanos;

/// Ground-truth cost description of one kernel launch.
///
/// Only the device engine reads these fields. Schedulers see the observable
/// [`KernelShape`] and completion timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimKernelSpec {
    /// Product of the grid dimensions.
    pub total_blocks: u32,
    pub block_duration_at_fmax: Nanos,
    /// Fractional latency response to a fractional frequency drop, in `[0, 1]`.
    pub sensitivity: f64,
    /// Blocks of this kernel one TPC runs concurrently.
    pub occupancy_per_tpc: u32,
    /// Charged once per block when the kernel runs atomized.
    pub prelude_overhead: Nanos,
}

impl SimKernelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_blocks == 0 {
            return Err(Error::Validation("kernel must have at least one block".into()));
        }
        if self.occupancy_per_tpc == 0 {
            return Err(Error::Config("occupancy_per_tpc must be at least 1".into()));
        }
        if self.block_duration_at_fmax == Nanos::ZERO {
            return Err(Error::Validation("block duration must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sensitivity) {
            return Err(Error::Validation(format!(
                "sensitivity {} outside [0, 1]",
                self.sensitivity
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> KernelShape {
        KernelShape {
            total_blocks: self.total_blocks,
            occupancy_per_tpc: self.occupancy_per_tpc,
        }
    }
}

/// The part of a kernel launch that a scheduler may observe: the launch
/// geometry and the occupancy the driver reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelShape {
    pub total_blocks: u32,
    pub occupancy_per_tpc: u32,
}

/// First-order frequency scaling of a block duration:
/// `d0 * (1 + s * (f_max / f - 1))`, rounded to the nearest nanosecond.
pub fn scaled_block_duration(d0: Nanos, sensitivity: f64, f_max_mhz: u32, f_mhz: u32) -> Nanos {
    if f_mhz == f_max_mhz || sensitivity == 0.0 {
        return d0;
    }
    let factor = 1.0 + sensitivity * (f_max_mhz as f64 / f_mhz as f64 - 1.0);
    Nanos((d0.0 as f64 * factor).round() as u64)
}

/// Number of block waves a kernel needs on `tpcs` TPCs.
pub fn wave_count(total_blocks: u32, tpcs: u32, occupancy_per_tpc: u32) -> u64 {
    let wave = tpcs as u64 * occupancy_per_tpc as u64;
    (total_blocks as u64).div_ceil(wave)
}
