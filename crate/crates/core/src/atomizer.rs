//! Kernel atomization: splitting a launch into contiguous block ranges.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::Nanos;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtomizerConfig {
    pub enabled: bool,
    pub atom_duration_ms: f64,
    /// Kernels predicted shorter than this many atom durations run whole.
    pub disable_factor: f64,
    /// Extra time each block of an atomized launch spends in the range check.
    pub prelude_us: f64,
}

impl Default for AtomizerConfig {
    fn default() -> Self {
        AtomizerConfig {
            enabled: true,
            atom_duration_ms: 1.0,
            disable_factor: 2.0,
            prelude_us: 0.5,
        }
    }
}

impl AtomizerConfig {
    pub fn atom_duration(&self) -> Nanos {
        Nanos::from_millis_f64(self.atom_duration_ms)
    }

    pub fn prelude(&self) -> Nanos {
        Nanos::from_micros_f64(self.prelude_us)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.atom_duration_ms > 0.0 && self.atom_duration_ms.is_finite()) {
            return Err(Error::Validation("atom_duration_ms must be positive".into()));
        }
        if !(self.disable_factor >= 0.0) {
            return Err(Error::Validation("disable_factor must be non-negative".into()));
        }
        if !(self.prelude_us >= 0.0 && self.prelude_us.is_finite()) {
            return Err(Error::Validation("prelude_us must be non-negative".into()));
        }
        Ok(())
    }
}

/// Splits `[0, total_blocks)` into `ceil(predicted / atom_duration)` even,
/// contiguous ranges, capped so no atom holds fewer than `min_blocks_per_atom`
/// blocks. Larger atoms come first.
pub fn plan_atoms(
    total_blocks: u32,
    predicted: Nanos,
    atom_duration: Nanos,
    min_blocks_per_atom: u32,
) -> Vec<Range<u32>> {
    if total_blocks == 0 {
        return Vec::new();
    }
    let wanted = if atom_duration == Nanos::ZERO {
        1
    } else {
        predicted.0.div_ceil(atom_duration.0).max(1)
    };
    let max_atoms = (total_blocks / min_blocks_per_atom.max(1)).max(1) as u64;
    let count = wanted.min(max_atoms) as u32;
    even_split(total_blocks, count)
}

/// `count` contiguous ranges over `[0, n)` whose sizes differ by at most one.
pub fn even_split(n: u32, count: u32) -> Vec<Range<u32>> {
    let count = count.clamp(1, n.max(1));
    let base = n / count;
    let extra = n % count;
    let mut lo = 0;
    (0..count)
        .map(|i| {
            let size = base + u32::from(i < extra);
            let r = lo..lo + size;
            lo += size;
            r
        })
        .collect()
}

/// Short kernels and single-block kernels are not worth splitting.
pub fn should_atomize(predicted: Nanos, total_blocks: u32, atom_duration: Nanos, disable_factor: f64) -> bool {
    if total_blocks <= 1 {
        return false;
    }
    predicted.0 as f64 >= disable_factor * atom_duration.0 as f64
}

/// Coarsens `base` so that, for a kernel predicted to take `predicted`, every
/// atom covers at least one full wave (`wave_size` blocks).
pub fn effective_atom_duration(base: Nanos, predicted: Nanos, total_blocks: u32, wave_size: u32) -> Nanos {
    let max_atoms = (total_blocks / wave_size.max(1)).max(1) as u64;
    let floor = Nanos(predicted.0.div_ceil(max_atoms));
    base.max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(r: &[Range<u32>]) -> Vec<u32> {
        r.iter().map(|a| a.end - a.start).collect()
    }

    #[test]
    fn ten_atoms_of_sixty_four() {
        let atoms = plan_atoms(64, Nanos::from_millis(10), Nanos::from_millis(1), 1);
        assert_eq!(sizes(&atoms), vec![7, 7, 7, 7, 6, 6, 6, 6, 6, 6]);
        assert_eq!(atoms.last().unwrap().end, 64);
    }

    #[test]
    fn short_kernel_is_one_atom() {
        assert_eq!(plan_atoms(64, Nanos::from_micros(500), Nanos::from_millis(1), 1), vec![0..64]);
    }

    #[test]
    fn capped_at_block_count() {
        assert_eq!(
            plan_atoms(3, Nanos::from_millis(100), Nanos::from_millis(1), 1),
            vec![0..1, 1..2, 2..3]
        );
    }

    #[test]
    fn should_atomize_cases() {
        let ms = Nanos::from_millis(1);
        assert!(!should_atomize(Nanos::from_micros(100), 64, ms, 2.0));
        assert!(should_atomize(Nanos::from_millis(10), 64, ms, 2.0));
        assert!(!should_atomize(Nanos::from_millis(10), 1, ms, 2.0));
    }

    #[test]
    fn wave_floor_coarsens() {
        let ms = Nanos::from_millis(1);
        let pred = Nanos::from_millis(10);
        let d = effective_atom_duration(ms, pred, 64, 32);
        assert_eq!(plan_atoms(64, pred, d, 32), vec![0..32, 32..64]);

        let d = effective_atom_duration(ms, pred, 8, 32);
        assert_eq!(plan_atoms(8, pred, d, 32).len(), 1);

        let pred = Nanos::from_secs(1);
        let d = effective_atom_duration(ms, pred, 10_000, 100);
        assert!(plan_atoms(10_000, pred, d, 100).len() <= 100);
    }
}
