use serde::{Deserialize, Serialize};

use super::synth::SynthParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityClass {
    Hp,
    Be,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Slo {
    /// Request latency constraint.
    LatencyMs(f64),
    /// Fraction of alone-run throughput to sustain.
    Throughput(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Arrival {
    Poisson {
        rate_rps: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    ClosedLoop,
    /// Arrival times come from the trace.
    Trace,
}

/// Where an app's request template comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    Synth(SynthParams),
    /// Requests for this app from the scenario's trace file.
    Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub name: String,
    pub priority: PriorityClass,
    #[serde(default)]
    pub tpc_quota: u32,
    #[serde(default)]
    pub slo: Option<Slo>,
    pub arrival: Arrival,
    pub model: ModelSource,
    /// MIG partition as GPC indices; apps without one do not run under MIG.
    #[serde(default)]
    pub mig_gpcs: Option<Vec<u32>>,
}

impl AppSpec {
    pub fn is_hp(&self) -> bool {
        self.priority == PriorityClass::Hp
    }

    pub fn latency_slo_ms(&self) -> Option<f64> {
        match self.slo {
            Some(Slo::LatencyMs(ms)) => Some(ms),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.priority, &self.slo) {
            (PriorityClass::Hp, None) => {
                return Err(Error::Validation(format!("HP app '{}' has no SLO", self.name)))
            }
            (PriorityClass::Be, Some(_)) => {
                return Err(Error::Validation(format!("BE app '{}' must not carry an SLO", self.name)))
            }
            _ => {}
        }
        match self.slo {
            Some(Slo::LatencyMs(ms)) if !(ms > 0.0) => {
                return Err(Error::Validation(format!("app '{}': latency SLO must be positive", self.name)))
            }
            Some(Slo::Throughput(f)) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::Validation(format!(
                    "app '{}': throughput SLO must be in (0, 1]",
                    self.name
                )))
            }
            _ => {}
        }
        if let Arrival::Poisson { rate_rps, .. } = self.arrival {
            if !(rate_rps > 0.0 && rate_rps.is_finite()) {
                return Err(Error::Validation(format!("app '{}': rate must be positive", self.name)));
            }
        }
        if matches!(self.arrival, Arrival::Trace) != matches!(self.model, ModelSource::Trace)
            && matches!(self.arrival, Arrival::Trace)
        {
            return Err(Error::Validation(format!(
                "app '{}': trace arrivals need a trace model",
                self.name
            )));
        }
        Ok(())
    }
}
