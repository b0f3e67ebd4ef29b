//! Simplified analogs of vendor sharing modes and priority schedulers. All of
//! them dispatch whole kernels; they differ only in where and when.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::device::{Device, Event};
use crate::error::{Error, Result};
use crate::ids::{AppId, StreamId, TpcId};
use crate::predictor::Confidence;
use crate::scheduler::{class_priority, Host, KernelPlan, PendingKernel, Placement, Policy, PRIORITY_BE};
use crate::time::Nanos;
use crate::workload::PriorityClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    FullSystem,
    MpsLike,
    MigLike,
    TimeSlice,
    PriorityOnly,
    ReefLike,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::FullSystem,
        PolicyKind::MpsLike,
        PolicyKind::MigLike,
        PolicyKind::TimeSlice,
        PolicyKind::PriorityOnly,
        PolicyKind::ReefLike,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::FullSystem => "full_system",
            PolicyKind::MpsLike => "mps_like",
            PolicyKind::MigLike => "mig_like",
            PolicyKind::TimeSlice => "time_slice",
            PolicyKind::PriorityOnly => "priority_only",
            PolicyKind::ReefLike => "reef_like",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown policy '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub time_slice_ms: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { time_slice_ms: 2.0 }
    }
}

fn whole_device(dev: &Device) -> Vec<TpcId> {
    (0..dev.total_tpcs()).collect()
}

fn placement(tpcs: Vec<TpcId>, priority: u8) -> Placement {
    Placement {
        tpcs,
        stolen: Vec::new(),
        priority,
        predicted: Nanos::ZERO,
        confidence: Confidence::Unknown,
    }
}

/// Every app shares every TPC; blocks compete in dispatch order.
#[derive(Debug, Default)]
pub struct MpsLike;

impl Policy for MpsLike {
    fn name(&self) -> &'static str {
        "mps_like"
    }

    fn stream_order(&self, host: &Host) -> Vec<StreamId> {
        host.streams.iter().map(|s| s.id).collect()
    }

    fn plan(&mut self, _host: &Host, dev: &Device, _s: StreamId, k: &PendingKernel) -> Result<Option<KernelPlan>> {
        Ok(Some(KernelPlan::whole(k.shape, dev.total_tpcs())))
    }

    fn place(&mut self, _host: &Host, dev: &Device, _s: StreamId, _b: &Range<u32>) -> Option<Placement> {
        Some(placement(whole_device(dev), PRIORITY_BE))
    }
}

/// Static GPC-aligned partitions; apps without one never run.
#[derive(Debug)]
pub struct MigLike {
    partitions: Vec<Option<Vec<TpcId>>>,
}

impl MigLike {
    pub fn new(host: &Host, dev: &Device) -> Result<Self> {
        let topo = dev.topology();
        let mut used = vec![false; topo.gpc_count as usize];
        let mut partitions = Vec::new();
        for app in &host.apps {
            let Some(gpcs) = &app.mig_gpcs else {
                partitions.push(None);
                continue;
            };
            if gpcs.is_empty() {
                return Err(Error::Validation(format!("app '{}': empty MIG partition", app.name)));
            }
            let mut tpcs = Vec::new();
            for &g in gpcs {
                if g >= topo.gpc_count {
                    return Err(Error::Validation(format!(
                        "app '{}': GPC {g} does not exist ({} GPCs)",
                        app.name, topo.gpc_count
                    )));
                }
                if std::mem::replace(&mut used[g as usize], true) {
                    return Err(Error::Validation(format!("GPC {g} assigned to two MIG partitions")));
                }
                tpcs.extend(g * topo.tpcs_per_gpc..(g + 1) * topo.tpcs_per_gpc);
            }
            partitions.push(Some(tpcs));
        }
        Ok(MigLike { partitions })
    }

    pub fn partition(&self, app: AppId) -> Option<&[TpcId]> {
        self.partitions[app.0 as usize].as_deref()
    }
}

impl Policy for MigLike {
    fn name(&self) -> &'static str {
        "mig_like"
    }

    fn may_dispatch(&self, host: &Host, _dev: &Device, s: StreamId) -> bool {
        host.stream(s).is_ok_and(|s| self.partitions[s.app.0 as usize].is_some())
    }

    fn plan(&mut self, host: &Host, _dev: &Device, s: StreamId, k: &PendingKernel) -> Result<Option<KernelPlan>> {
        let app = host.stream(s)?.app;
        Ok(self
            .partition(app)
            .map(|p| KernelPlan::whole(k.shape, p.len() as u32)))
    }

    fn place(&mut self, host: &Host, _dev: &Device, s: StreamId, _b: &Range<u32>) -> Option<Placement> {
        let app = host.stream(s).ok()?.app;
        Some(placement(self.partition(app)?.to_vec(), PRIORITY_BE))
    }
}

/// Round-robin exclusive windows. A window ends early when its owner runs
/// out of work; a lone busy app keeps the device.
#[derive(Debug)]
pub struct TimeSlice {
    window: Nanos,
    owner: Option<AppId>,
    epoch: u64,
    apps: usize,
}

impl TimeSlice {
    pub fn new(window: Nanos, host: &Host) -> Result<Self> {
        if window == Nanos::ZERO {
            return Err(Error::Validation("time slice window must be positive".into()));
        }
        Ok(TimeSlice {
            window,
            owner: None,
            epoch: 0,
            apps: host.apps.len(),
        })
    }

    pub fn owner(&self) -> Option<AppId> {
        self.owner
    }

    fn switch_to(&mut self, app: AppId, dev: &mut Device) {
        self.owner = Some(app);
        self.epoch += 1;
        for i in 0..self.apps as u32 {
            dev.set_gate(AppId(i), i == app.0);
        }
        dev.schedule(dev.now() + self.window, Event::TimeSliceBoundary { epoch: self.epoch });
    }

    /// Next busy app after the owner in round-robin order.
    fn next_busy(&self, host: &Host) -> Option<AppId> {
        let start = self.owner.map_or(0, |o| o.0 + 1);
        (0..self.apps as u32)
            .map(|i| AppId((start + i) % self.apps as u32))
            .find(|&a| Some(a) != self.owner && host.app_is_busy(a))
    }
}

impl Policy for TimeSlice {
    fn name(&self) -> &'static str {
        "time_slice"
    }

    fn may_dispatch(&self, host: &Host, _dev: &Device, s: StreamId) -> bool {
        host.stream(s).is_ok_and(|s| Some(s.app) == self.owner)
    }

    fn plan(&mut self, _host: &Host, dev: &Device, _s: StreamId, k: &PendingKernel) -> Result<Option<KernelPlan>> {
        Ok(Some(KernelPlan::whole(k.shape, dev.total_tpcs())))
    }

    fn place(&mut self, _host: &Host, dev: &Device, _s: StreamId, _b: &Range<u32>) -> Option<Placement> {
        Some(placement(whole_device(dev), PRIORITY_BE))
    }

    fn on_timer(&mut self, host: &Host, dev: &mut Device, epoch: u64) -> Result<()> {
        if epoch != self.epoch {
            return Ok(());
        }
        match self.next_busy(host) {
            Some(next) => self.switch_to(next, dev),
            None => {
                if let Some(o) = self.owner.filter(|&o| host.app_is_busy(o)) {
                    self.epoch += 1;
                    let _ = o;
                    dev.schedule(dev.now() + self.window, Event::TimeSliceBoundary { epoch: self.epoch });
                }
            }
        }
        Ok(())
    }

    fn after_cycle(&mut self, host: &Host, dev: &mut Device) -> Result<()> {
        let owner_idle = self.owner.is_none_or(|o| !host.app_is_busy(o));
        if owner_idle {
            if let Some(next) = self.next_busy(host) {
                self.switch_to(next, dev);
            }
        }
        Ok(())
    }
}

/// HP kernels dispatch first and run at higher stream priority. With
/// `gate_be`, BE launches wait while any HP app has work anywhere.
#[derive(Debug)]
pub struct PriorityOnly {
    gate_be: bool,
}

impl PriorityOnly {
    pub fn priority_only() -> Self {
        PriorityOnly { gate_be: false }
    }

    pub fn reef_like() -> Self {
        PriorityOnly { gate_be: true }
    }
}

impl Policy for PriorityOnly {
    fn name(&self) -> &'static str {
        if self.gate_be {
            "reef_like"
        } else {
            "priority_only"
        }
    }

    fn may_dispatch(&self, host: &Host, _dev: &Device, s: StreamId) -> bool {
        if !self.gate_be {
            return true;
        }
        let Ok(stream) = host.stream(s) else { return false };
        host.app(stream.app).class == PriorityClass::Hp
            || !host
                .apps
                .iter()
                .any(|a| a.class == PriorityClass::Hp && host.app_is_busy(a.id))
    }

    fn plan(&mut self, _host: &Host, dev: &Device, _s: StreamId, k: &PendingKernel) -> Result<Option<KernelPlan>> {
        Ok(Some(KernelPlan::whole(k.shape, dev.total_tpcs())))
    }

    fn place(&mut self, host: &Host, dev: &Device, s: StreamId, _b: &Range<u32>) -> Option<Placement> {
        let app = host.stream(s).ok()?.app;
        Some(placement(whole_device(dev), class_priority(host.app(app).class)))
    }
}
