//! Host-side scheduling state shared by every policy: launch queues, in-flight
//! kernels, outstanding atoms and request bookkeeping. Policies decide how a
//! kernel is planned and where each atom goes; [`Host::dispatch_cycle`] drives
//! them.

mod full_system;
mod ledger;

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use full_system::{FullSystem, FullSystemConfig, RightsizeDecision, RightsizeRecord};
pub use ledger::{TpcLedger, TpcState};

use crate::device::{AtomCompletion, AtomLaunch, Device, KernelShape};
use crate::error::{Error, Result};
use crate::ids::{AppId, AtomId, KernelHandle, RequestId, StreamId, TpcId};
use crate::power_manager::Phase;
use crate::predictor::{Accuracy, Confidence, OperatorKey, PredictionLogEntry};
use crate::time::Nanos;
use crate::workload::PriorityClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub max_outstanding_atoms: usize,
    pub steal_horizon_ms: f64,
    pub stealing: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            max_outstanding_atoms: 2,
            steal_horizon_ms: 0.0,
            stealing: true,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outstanding_atoms == 0 {
            return Err(Error::Validation("max_outstanding_atoms must be at least 1".into()));
        }
        if !(self.steal_horizon_ms >= 0.0) {
            return Err(Error::Validation("steal_horizon_ms must be non-negative".into()));
        }
        Ok(())
    }

    pub fn steal_horizon(&self) -> Nanos {
        Nanos::from_millis_f64(self.steal_horizon_ms)
    }
}

/// A kernel waiting in a launch queue. Only observable fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingKernel {
    pub request: RequestId,
    pub handle: KernelHandle,
    pub shape: KernelShape,
    pub key: OperatorKey,
    pub batch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LaunchItem {
    Kernel(PendingKernel),
    Sync { request: RequestId },
}

/// How a policy decided to run one kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPlan {
    /// TPCs each atom asks for.
    pub tpcs: u32,
    pub ranges: VecDeque<Range<u32>>,
    pub atomized: bool,
    pub allow_steal: bool,
}

impl KernelPlan {
    pub fn whole(shape: KernelShape, tpcs: u32) -> Self {
        KernelPlan {
            tpcs,
            ranges: VecDeque::from([0..shape.total_blocks]),
            atomized: false,
            allow_steal: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InFlight {
    pub kernel: PendingKernel,
    pub plan: KernelPlan,
    pub outstanding: BTreeSet<AtomId>,
}

#[derive(Debug, Clone)]
pub struct Stream {
    pub id: StreamId,
    pub app: AppId,
    pub queue: VecDeque<LaunchItem>,
    pub inflight: Option<InFlight>,
    ordinal: u32,
    batch: u64,
}

impl Stream {
    /// Work not yet on the device: queued items or undispatched atoms.
    pub fn has_pending(&self) -> bool {
        !self.queue.is_empty() || self.inflight.as_ref().is_some_and(|f| !f.plan.ranges.is_empty())
    }

    /// Requests queued behind the one at the head.
    pub fn queued_requests(&self) -> usize {
        self.queue
            .iter()
            .filter(|i| matches!(i, LaunchItem::Sync { .. }))
            .count()
            .saturating_sub(1)
    }
}

/// Static description of an app as the scheduler sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct AppInfo {
    pub id: AppId,
    pub name: String,
    pub class: PriorityClass,
    pub quota: u32,
    pub latency_slo: Option<Nanos>,
    pub mig_gpcs: Option<Vec<u32>>,
}

/// Book-keeping for one dispatched atom.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomMeta {
    pub id: AtomId,
    pub app: AppId,
    pub stream: StreamId,
    pub request: RequestId,
    pub key: OperatorKey,
    pub batch: u64,
    pub shape: KernelShape,
    pub blocks: Range<u32>,
    pub tpcs: Vec<TpcId>,
    pub stolen: Vec<TpcId>,
    pub priority: u8,
    pub atomized: bool,
    pub predicted: Nanos,
    pub confidence: Confidence,
    pub dispatched_at: Nanos,
}

impl AtomMeta {
    pub fn block_count(&self) -> u32 {
        self.blocks.end - self.blocks.start
    }

    pub fn whole_kernel(&self) -> bool {
        self.block_count() == self.shape.total_blocks
    }
}

/// Where and how urgently an atom runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub tpcs: Vec<TpcId>,
    pub stolen: Vec<TpcId>,
    pub priority: u8,
    pub predicted: Nanos,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub app: AppId,
    pub id: RequestId,
    pub arrival: Nanos,
    pub completed: Nanos,
}

impl RequestRecord {
    pub fn latency(&self) -> Nanos {
        self.completed - self.arrival
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenRequest {
    pub app: AppId,
    pub stream: StreamId,
    pub arrival: Nanos,
}

/// What a policy adds to the run report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyExtras {
    pub prediction_log: Vec<PredictionLogEntry>,
    pub rightsizing: Vec<RightsizeRecord>,
    pub dvfs: Vec<DvfsAppSummary>,
    pub frequency_requests: u64,
    pub accuracy: Option<Accuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvfsAppSummary {
    pub app: AppId,
    pub aggregate_sensitivity: Option<f64>,
    pub f_final_mhz: Option<u32>,
    pub operators: usize,
    pub confirmed: usize,
    pub phases: Vec<Phase>,
}

pub const PRIORITY_STOLEN: u8 = 0;
pub const PRIORITY_BE: u8 = 1;
pub const PRIORITY_HP: u8 = 2;

pub fn class_priority(class: PriorityClass) -> u8 {
    match class {
        PriorityClass::Hp => PRIORITY_HP,
        PriorityClass::Be => PRIORITY_BE,
    }
}

/// Decision hooks of a sharing policy.
pub trait Policy {
    fn name(&self) -> &'static str;

    fn start(&mut self, _host: &Host, _dev: &mut Device) -> Result<()> {
        Ok(())
    }

    /// Called after `app` submitted a request.
    fn on_submit(&mut self, _host: &Host, _dev: &mut Device, _app: AppId) -> Result<()> {
        Ok(())
    }

    /// Streams in the order they are offered dispatch slots.
    fn stream_order(&self, host: &Host) -> Vec<StreamId> {
        host.priority_order()
    }

    /// Whether `stream` may start or continue dispatching now.
    fn may_dispatch(&self, _host: &Host, _dev: &Device, _stream: StreamId) -> bool {
        true
    }

    /// Plans the head kernel of `stream`; `None` defers it.
    fn plan(&mut self, host: &Host, dev: &Device, stream: StreamId, kernel: &PendingKernel) -> Result<Option<KernelPlan>>;

    /// Chooses TPCs for the next atom; `None` defers it.
    fn place(&mut self, host: &Host, dev: &Device, stream: StreamId, blocks: &Range<u32>) -> Option<Placement>;

    fn on_dispatch(&mut self, _host: &Host, _dev: &Device, _atom: &AtomMeta) {}

    fn on_atom_complete(
        &mut self,
        _host: &Host,
        _dev: &mut Device,
        _done: &AtomCompletion,
        _meta: &AtomMeta,
    ) -> Result<()> {
        Ok(())
    }

    /// A stream passed a sync point.
    fn on_sync(&mut self, _host: &Host, _dev: &mut Device, _stream: StreamId) -> Result<()> {
        Ok(())
    }

    fn on_timer(&mut self, _host: &Host, _dev: &mut Device, _epoch: u64) -> Result<()> {
        Ok(())
    }

    /// Runs after every dispatch cycle, once the device state is settled.
    fn after_cycle(&mut self, _host: &Host, _dev: &mut Device) -> Result<()> {
        Ok(())
    }

    fn extras(&self) -> PolicyExtras {
        PolicyExtras::default()
    }
}

#[derive(Debug)]
pub struct Host {
    pub cfg: SchedulerConfig,
    pub apps: Vec<AppInfo>,
    pub streams: Vec<Stream>,
    pub atoms: HashMap<AtomId, AtomMeta>,
    pub open: HashMap<RequestId, OpenRequest>,
    pub completed: Vec<RequestRecord>,
    pub last_submit: Vec<Option<Nanos>>,
    released: Vec<(AppId, RequestId)>,
    next_atom: u64,
    next_request: u64,
    now: Nanos,
}

impl Host {
    pub fn new(cfg: SchedulerConfig, apps: Vec<AppInfo>) -> Result<Self> {
        cfg.validate()?;
        let n = apps.len();
        Ok(Host {
            cfg,
            apps,
            streams: Vec::new(),
            atoms: HashMap::new(),
            open: HashMap::new(),
            completed: Vec::new(),
            last_submit: vec![None; n],
            released: Vec::new(),
            next_atom: 0,
            next_request: 0,
            now: Nanos::ZERO,
        })
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn set_now(&mut self, now: Nanos) {
        self.now = now;
    }

    /// Creates a stream (and its launch queue) for `app`.
    pub fn create_stream(&mut self, app: AppId) -> StreamId {
        let id = StreamId(self.streams.len() as u32);
        self.streams.push(Stream {
            id,
            app,
            queue: VecDeque::new(),
            inflight: None,
            ordinal: 0,
            batch: 0,
        });
        id
    }

    pub fn stream(&self, id: StreamId) -> Result<&Stream> {
        self.streams.get(id.0 as usize).ok_or(Error::UnknownStream(id.0))
    }

    fn stream_mut(&mut self, id: StreamId) -> Result<&mut Stream> {
        self.streams.get_mut(id.0 as usize).ok_or(Error::UnknownStream(id.0))
    }

    pub fn app(&self, id: AppId) -> &AppInfo {
        &self.apps[id.0 as usize]
    }

    pub fn streams_of(&self, app: AppId) -> impl Iterator<Item = &Stream> {
        self.streams.iter().filter(move |s| s.app == app)
    }

    /// True while the app has work not yet handed to the device.
    pub fn app_has_pending(&self, app: AppId) -> bool {
        self.streams_of(app).any(Stream::has_pending)
    }

    /// True while the app has pending work or atoms on the device.
    pub fn app_is_busy(&self, app: AppId) -> bool {
        self.streams_of(app)
            .any(|s| s.has_pending() || s.inflight.as_ref().is_some_and(|f| !f.outstanding.is_empty()))
    }

    /// Appends one kernel launch to a stream's queue. No device interaction.
    pub fn submit(&mut self, stream: StreamId, request: RequestId, handle: KernelHandle, shape: KernelShape) -> Result<()> {
        let s = self.stream_mut(stream)?;
        let key = OperatorKey {
            queue: stream,
            ordinal: s.ordinal,
        };
        s.ordinal += 1;
        let batch = s.batch;
        s.queue.push_back(LaunchItem::Kernel(PendingKernel {
            request,
            handle,
            shape,
            key,
            batch,
        }));
        Ok(())
    }

    /// Appends a sync; it marks a batch boundary and closes `request`.
    pub fn submit_sync(&mut self, stream: StreamId, request: RequestId) -> Result<()> {
        let s = self.stream_mut(stream)?;
        s.queue.push_back(LaunchItem::Sync { request });
        s.ordinal = 0;
        s.batch += 1;
        Ok(())
    }

    /// Opens a request: the kernels and the closing sync are submitted by the
    /// caller.
    pub fn open_request(&mut self, app: AppId, stream: StreamId, arrival: Nanos) -> RequestId {
        let id = RequestId(self.next_request);
        self.next_request += 1;
        self.open.insert(id, OpenRequest { app, stream, arrival });
        self.last_submit[app.0 as usize] = Some(arrival);
        id
    }

    /// Requests completed since the last call.
    pub fn take_released(&mut self) -> Vec<(AppId, RequestId)> {
        std::mem::take(&mut self.released)
    }

    /// HP before BE, then app id, then stream id.
    pub fn priority_order(&self) -> Vec<StreamId> {
        let mut ids: Vec<StreamId> = self.streams.iter().map(|s| s.id).collect();
        ids.sort_by_key(|id| {
            let s = &self.streams[id.0 as usize];
            (self.apps[s.app.0 as usize].class, s.app, s.id)
        });
        ids
    }

    /// Releases requests whose stream has reached its sync marker.
    pub fn release_ready(&mut self, policy: &mut dyn Policy, dev: &mut Device) -> Result<()> {
        for idx in 0..self.streams.len() {
            while self.streams[idx].inflight.is_none() {
                let Some(LaunchItem::Sync { request }) = self.streams[idx].queue.front().cloned() else { break };
                self.streams[idx].queue.pop_front();
                self.release(request)?;
                policy.on_sync(self, dev, self.streams[idx].id)?;
            }
        }
        Ok(())
    }

    /// Offers every stream dispatch slots until nothing more can go out.
    pub fn dispatch_cycle(&mut self, policy: &mut dyn Policy, dev: &mut Device) -> Result<()> {
        for sid in policy.stream_order(self) {
            self.dispatch_stream(sid, policy, dev)?;
        }
        policy.after_cycle(self, dev)
    }

    fn dispatch_stream(&mut self, sid: StreamId, policy: &mut dyn Policy, dev: &mut Device) -> Result<()> {
        loop {
            let idx = sid.0 as usize;
            if self.streams[idx].inflight.is_none() {
                match self.streams[idx].queue.front().cloned() {
                    None => return Ok(()),
                    Some(LaunchItem::Sync { request }) => {
                        self.streams[idx].queue.pop_front();
                        self.release(request)?;
                        policy.on_sync(self, dev, sid)?;
                        continue;
                    }
                    Some(LaunchItem::Kernel(k)) => {
                        if !policy.may_dispatch(self, dev, sid) {
                            return Ok(());
                        }
                        let Some(plan) = policy.plan(self, dev, sid, &k)? else {
                            return Ok(());
                        };
                        if plan.ranges.is_empty() || plan.tpcs == 0 {
                            return Err(Error::Invariant(format!("empty plan for stream {sid}")));
                        }
                        let s = &mut self.streams[idx];
                        s.queue.pop_front();
                        s.inflight = Some(InFlight {
                            kernel: k,
                            plan,
                            outstanding: BTreeSet::new(),
                        });
                    }
                }
            }
            let inflight = self.streams[idx].inflight.as_ref().expect("set above");
            if inflight.plan.ranges.is_empty() || inflight.outstanding.len() >= self.cfg.max_outstanding_atoms {
                return Ok(());
            }
            if !policy.may_dispatch(self, dev, sid) {
                return Ok(());
            }
            let range = inflight.plan.ranges.front().cloned().expect("non-empty");
            let Some(place) = policy.place(self, dev, sid, &range) else {
                return Ok(());
            };
            self.dispatch_atom(sid, place, policy, dev)?;
        }
    }

    fn dispatch_atom(&mut self, sid: StreamId, place: Placement, policy: &mut dyn Policy, dev: &mut Device) -> Result<()> {
        let id = AtomId(self.next_atom);
        self.next_atom += 1;
        let s = &mut self.streams[sid.0 as usize];
        let app = s.app;
        let inflight = s.inflight.as_mut().expect("dispatching an in-flight kernel");
        let blocks = inflight.plan.ranges.pop_front().expect("range available");
        inflight.outstanding.insert(id);
        let meta = AtomMeta {
            id,
            app,
            stream: sid,
            request: inflight.kernel.request,
            key: inflight.kernel.key,
            batch: inflight.kernel.batch,
            shape: inflight.kernel.shape,
            blocks: blocks.clone(),
            tpcs: place.tpcs.clone(),
            stolen: place.stolen,
            priority: place.priority,
            atomized: inflight.plan.atomized,
            predicted: place.predicted,
            confidence: place.confidence,
            dispatched_at: self.now,
        };
        dev.dispatch(AtomLaunch {
            id,
            app,
            kernel: inflight.kernel.handle,
            blocks,
            tpcs: place.tpcs,
            priority: place.priority,
            atomized: inflight.plan.atomized,
        })?;
        policy.on_dispatch(self, dev, &meta);
        self.atoms.insert(id, meta);
        Ok(())
    }

    fn release(&mut self, request: RequestId) -> Result<()> {
        let open = self
            .open
            .remove(&request)
            .ok_or_else(|| Error::Invariant(format!("sync for unknown request {request}")))?;
        self.completed.push(RequestRecord {
            app: open.app,
            id: request,
            arrival: open.arrival,
            completed: self.now,
        });
        self.released.push((open.app, request));
        Ok(())
    }

    /// Retires a completed atom and lets the policy learn from it.
    pub fn on_atom_complete(&mut self, done: &AtomCompletion, policy: &mut dyn Policy, dev: &mut Device) -> Result<()> {
        let meta = self
            .atoms
            .remove(&done.id)
            .ok_or_else(|| Error::Invariant(format!("completion of unknown atom {}", done.id)))?;
        let s = &mut self.streams[meta.stream.0 as usize];
        let inflight = s
            .inflight
            .as_mut()
            .ok_or_else(|| Error::Invariant(format!("atom {} completed on an idle stream", done.id)))?;
        if !inflight.outstanding.remove(&done.id) {
            return Err(Error::Invariant(format!("atom {} not in its sync queue", done.id)));
        }
        if inflight.outstanding.is_empty() && inflight.plan.ranges.is_empty() {
            s.inflight = None;
        }
        policy.on_atom_complete(self, dev, done, &meta)
    }

    /// Checks the per-stream throttle.
    pub fn check_invariants(&self) -> Result<()> {
        for s in &self.streams {
            if let Some(f) = &s.inflight {
                if f.outstanding.len() > self.cfg.max_outstanding_atoms {
                    return Err(Error::Invariant(format!(
                        "stream {} has {} outstanding atoms",
                        s.id,
                        f.outstanding.len()
                    )));
                }
            }
        }
        Ok(())
    }
}
