use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dist::Dist;
use crate::device::SimKernelSpec;
use crate::error::{Error, Result};
use crate::time::Nanos;

/// Observable geometry plus ground-truth cost of one kernel in a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDesc {
    pub grid: [u32; 3],
    pub block_us: f64,
    pub sensitivity: f64,
    pub occupancy: u32,
}

impl KernelDesc {
    pub fn total_blocks(&self) -> u32 {
        self.grid.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.contains(&0) {
            return Err(Error::Validation(format!("grid {:?} has a zero dimension", self.grid)));
        }
        if !(self.block_us > 0.0 && self.block_us.is_finite()) {
            return Err(Error::Validation(format!("block duration {}us must be positive", self.block_us)));
        }
        if !(0.0..=1.0).contains(&self.sensitivity) {
            return Err(Error::Validation(format!("sensitivity {} outside [0, 1]", self.sensitivity)));
        }
        if self.occupancy == 0 {
            return Err(Error::Validation("occupancy must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_spec(&self, prelude_overhead: Nanos) -> SimKernelSpec {
        SimKernelSpec {
            total_blocks: self.total_blocks(),
            block_duration_at_fmax: Nanos::from_micros_f64(self.block_us).max(Nanos(1)),
            sensitivity: self.sensitivity,
            occupancy_per_tpc: self.occupancy,
            prelude_overhead,
        }
    }
}

/// Parameters of a synthetic layered model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub layers: u32,
    pub blocks: Dist,
    pub block_us: Dist,
    #[serde(default = "default_sensitivity")]
    pub sensitivity: Dist,
    #[serde(default = "default_occupancy")]
    pub occupancy: Dist,
    #[serde(default)]
    pub seed: u64,
    /// Per-request multiplier on block counts (sequence-length style
    /// variability). The kernel sequence and ordinals stay fixed.
    #[serde(default)]
    pub blocks_scale: Option<Dist>,
}

fn default_sensitivity() -> Dist {
    Dist::Const(1.0)
}

fn default_occupancy() -> Dist {
    Dist::Const(4.0)
}

/// A request template: the kernel sequence every request of a model runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTemplate {
    pub kernels: Vec<KernelDesc>,
    #[serde(default)]
    pub blocks_scale: Option<Dist>,
    #[serde(default)]
    pub seed: u64,
}

impl ModelTemplate {
    pub fn fixed(kernels: Vec<KernelDesc>) -> Self {
        ModelTemplate {
            kernels,
            blocks_scale: None,
            seed: 0,
        }
    }

    /// Kernels for the `index`-th request.
    pub fn instantiate(&self, index: u64) -> Vec<KernelDesc> {
        let Some(scale) = &self.blocks_scale else {
            return self.kernels.clone();
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let f = scale.sample(&mut rng);
        self.kernels
            .iter()
            .map(|k| {
                let n = ((k.total_blocks() as f64 * f).round() as u32).max(1);
                KernelDesc {
                    grid: [n, 1, 1],
                    ..k.clone()
                }
            })
            .collect()
    }

    /// Sum of one-TPC-wave-free work, i.e. blocks times block time, in µs.
    pub fn block_work_us(&self) -> f64 {
        self.kernels.iter().map(|k| k.total_blocks() as f64 * k.block_us).sum()
    }
}

/// Draws a layered model deterministically from `seed`.
pub fn synth_model(p: &SynthParams) -> Result<ModelTemplate> {
    if p.layers == 0 {
        return Err(Error::Validation("a model needs at least one layer".into()));
    }
    p.blocks.validate("blocks", 1.0, u32::MAX as f64)?;
    p.block_us.validate("block_us", f64::MIN_POSITIVE, 1e9)?;
    p.sensitivity.validate("sensitivity", 0.0, 1.0)?;
    p.occupancy.validate("occupancy", 1.0, 1024.0)?;
    if let Some(s) = &p.blocks_scale {
        s.validate("blocks_scale", f64::MIN_POSITIVE, 1e6)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let kernels = (0..p.layers)
        .map(|_| {
            let blocks = p.blocks.sample(&mut rng).round().max(1.0) as u32;
            let block_us = p.block_us.sample(&mut rng);
            let sensitivity = p.sensitivity.sample(&mut rng).clamp(0.0, 1.0);
            let occupancy = p.occupancy.sample(&mut rng).round().max(1.0) as u32;
            KernelDesc {
                grid: [blocks, 1, 1],
                block_us,
                sensitivity,
                occupancy,
            }
        })
        .collect();
    Ok(ModelTemplate {
        kernels,
        blocks_scale: p.blocks_scale.clone(),
        seed: p.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(layers: u32, blocks: Dist, seed: u64) -> SynthParams {
        SynthParams {
            layers,
            blocks,
            block_us: Dist::Const(1000.0),
            sensitivity: Dist::Const(0.0),
            occupancy: Dist::Const(4.0),
            seed,
            blocks_scale: None,
        }
    }

    #[test]
    fn single_kernel_model() {
        let m = synth_model(&params(1, Dist::Const(1.0), 0)).unwrap();
        assert_eq!(m.kernels.len(), 1);
        assert_eq!(m.kernels[0].total_blocks(), 1);
    }

    #[test]
    fn seeded_and_stable() {
        let p = params(50, Dist::uniform_int(8, 512), 7);
        let a = synth_model(&p).unwrap();
        assert_eq!(a, synth_model(&p).unwrap());
        assert_eq!(a.kernels.len(), 50);
        assert!(a.kernels.iter().all(|k| (8..=512).contains(&k.total_blocks())));
        assert_eq!(a.instantiate(0), a.instantiate(99));
        assert_ne!(a, synth_model(&params(50, Dist::uniform_int(8, 512), 8)).unwrap());
    }

    #[test]
    fn rejects_degenerate() {
        let mut p = params(3, Dist::Const(4.0), 0);
        p.block_us = Dist::uniform(-5.0, 1.0);
        assert!(matches!(synth_model(&p), Err(Error::Validation(_))));
        assert!(synth_model(&params(0, Dist::Const(4.0), 0)).is_err());
    }

    #[test]
    fn variability_keeps_sequence_length() {
        let mut p = params(5, Dist::Const(100.0), 3);
        p.blocks_scale = Some(Dist::uniform(0.5, 2.0));
        let m = synth_model(&p).unwrap();
        let a = m.instantiate(1);
        assert_eq!(a.len(), 5);
        assert_eq!(a, m.instantiate(1));
        assert_ne!(a, m.instantiate(2));
    }
}
