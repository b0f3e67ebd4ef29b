use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::Nanos;

/// Device-wide clock domain with a slow, replace-pending switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyDomain {
    supported_mhz: Vec<u32>,
    switch_latency: Nanos,
    current_mhz: u32,
    pending: Option<PendingSwitch>,
    generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingSwitch {
    pub target_mhz: u32,
    pub effective_at: Nanos,
    pub generation: u64,
}

/// Outcome of [`FrequencyDomain::request`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchRequest {
    /// Nothing to do; the clock already runs at (or is already heading to) the target.
    Unchanged { effective_at: Nanos },
    /// A new switch was scheduled and supersedes any earlier pending one.
    Scheduled(PendingSwitch),
}

impl SwitchRequest {
    pub fn effective_at(&self) -> Nanos {
        match self {
            SwitchRequest::Unchanged { effective_at } => *effective_at,
            SwitchRequest::Scheduled(p) => p.effective_at,
        }
    }
}

impl FrequencyDomain {
    pub const DEFAULT_SWITCH_LATENCY: Nanos = Nanos::from_millis(50);

    /// Builds a domain running at the highest supported frequency.
    pub fn new(mut supported_mhz: Vec<u32>, switch_latency: Nanos) -> Result<Self> {
        supported_mhz.sort_unstable();
        supported_mhz.dedup();
        let Some(&f_max) = supported_mhz.last() else {
            return Err(Error::Config("frequency table is empty".into()));
        };
        if supported_mhz[0] == 0 {
            return Err(Error::Config("frequencies must be positive".into()));
        }
        Ok(FrequencyDomain {
            supported_mhz,
            switch_latency,
            current_mhz: f_max,
            pending: None,
            generation: 0,
        })
    }

    /// `lo..=hi` in `step` MHz increments.
    pub fn stepped(lo: u32, hi: u32, step: u32, switch_latency: Nanos) -> Result<Self> {
        if step == 0 || lo > hi {
            return Err(Error::Config(format!("bad frequency range {lo}..{hi}/{step}")));
        }
        let mut table: Vec<u32> = (lo..=hi).step_by(step as usize).collect();
        if table.last() != Some(&hi) {
            table.push(hi);
        }
        Self::new(table, switch_latency)
    }

    pub fn supported_mhz(&self) -> &[u32] {
        &self.supported_mhz
    }

    pub fn f_max(&self) -> u32 {
        *self.supported_mhz.last().expect("non-empty table")
    }

    pub fn f_min(&self) -> u32 {
        self.supported_mhz[0]
    }

    pub fn current(&self) -> u32 {
        self.current_mhz
    }

    pub fn pending(&self) -> Option<PendingSwitch> {
        self.pending
    }

    pub fn switch_latency(&self) -> Nanos {
        self.switch_latency
    }

    pub fn is_supported(&self, f: u32) -> bool {
        self.supported_mhz.binary_search(&f).is_ok()
    }

    pub fn check(&self, f: u32) -> Result<()> {
        if self.is_supported(f) {
            Ok(())
        } else {
            Err(Error::Config(format!("unsupported frequency {f} MHz")))
        }
    }

    /// The frequency the clock will settle at once any pending switch lands.
    pub fn target(&self) -> u32 {
        self.pending.map_or(self.current_mhz, |p| p.target_mhz)
    }

    /// Requests a switch to `f`. A request for the frequency the clock is
    /// already running at cancels any pending switch and returns `now`.
    pub fn request(&mut self, f: u32, now: Nanos) -> Result<SwitchRequest> {
        self.check(f)?;
        if f == self.current_mhz {
            self.pending = None;
            return Ok(SwitchRequest::Unchanged { effective_at: now });
        }
        if let Some(p) = self.pending {
            if p.target_mhz == f {
                return Ok(SwitchRequest::Unchanged {
                    effective_at: p.effective_at,
                });
            }
        }
        self.generation += 1;
        let p = PendingSwitch {
            target_mhz: f,
            effective_at: now + self.switch_latency,
            generation: self.generation,
        };
        self.pending = Some(p);
        Ok(SwitchRequest::Scheduled(p))
    }

    /// Applies the pending switch if `generation` still names it. Returns
    /// true when the clock changed.
    pub fn apply(&mut self, generation: u64) -> bool {
        match self.pending {
            Some(p) if p.generation == generation => {
                self.current_mhz = p.target_mhz;
                self.pending = None;
                true
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domain() -> FrequencyDomain {
        FrequencyDomain::new(vec![500, 1000, 750], Nanos::from_millis(50)).unwrap()
    }

    #[test]
    fn starts_at_fmax_sorted() {
        let d = domain();
        assert_eq!(d.supported_mhz(), &[500, 750, 1000]);
        assert_eq!(d.current(), 1000);
        assert_eq!(d.f_min(), 500);
    }

    #[test]
    fn same_frequency_is_noop() {
        let mut d = domain();
        let r = d.request(1000, Nanos::from_millis(100)).unwrap();
        assert_eq!(r.effective_at(), Nanos::from_millis(100));
        assert!(d.pending().is_none());
    }

    #[test]
    fn switch_lands_after_latency() {
        let mut d = domain();
        let r = d.request(500, Nanos::from_millis(100)).unwrap();
        assert_eq!(r.effective_at(), Nanos::from_millis(150));
        let SwitchRequest::Scheduled(p) = r else {
            panic!("expected a scheduled switch")
        };
        assert!(d.apply(p.generation));
        assert_eq!(d.current(), 500);
    }

    #[test]
    fn newer_request_replaces_pending() {
        let mut d = domain();
        let first = d.request(500, Nanos::from_millis(100)).unwrap();
        let second = d.request(750, Nanos::from_millis(120)).unwrap();
        assert_eq!(second.effective_at(), Nanos::from_millis(170));
        let (SwitchRequest::Scheduled(a), SwitchRequest::Scheduled(b)) = (first, second) else {
            panic!("both should schedule")
        };
        assert!(!d.apply(a.generation));
        assert_eq!(d.current(), 1000);
        assert!(d.apply(b.generation));
        assert_eq!(d.current(), 750);
    }

    #[test]
    fn unsupported_frequency_is_config_error() {
        let mut d = domain();
        assert!(matches!(d.request(600, Nanos::ZERO), Err(Error::Config(_))));
        assert!(FrequencyDomain::new(vec![], Nanos::ZERO).is_err());
    }
}
