//! The simulated GPU.
//!
//! The device owns the event queue and the clock, executes atoms at block
//! granularity on per-TPC slot pools, models the clock domain and integrates
//! power. It is the only component that reads [`SimKernelSpec`] cost fields.
//!
//! Slot admission on a TPC follows two rules:
//!
//! * An atom becomes *resident* on a TPC when its first block starts there.
//!   A freed slot goes to the highest-priority resident atom that still has
//!   waiting blocks (FIFO by dispatch order within a priority level). There is
//!   no preemption: a resident atom keeps draining until its block pool is
//!   exhausted.
//! * Only when no resident atom has waiting blocks is the highest-priority
//!   pending atom admitted.
//!
//! A kernel's occupancy is expressed as a fraction of a TPC (`1 / occupancy`
//! per block) so kernels with different occupancies can share a TPC.

mod events;
mod frequency;
mod kernel;
mod power;
mod profile;
mod topology;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;

pub use events::{Event, EventQueue};
pub use frequency::{FrequencyDomain, PendingSwitch, SwitchRequest};
pub use kernel::{scaled_block_duration, wave_count, KernelShape, SimKernelSpec};
pub use power::PowerModel;
pub use profile::{DeviceProfile, DeviceSpec, FrequencyTable};
pub use topology::DeviceTopology;

use crate::error::{Error, Result};
use crate::ids::{AppId, AtomId, KernelHandle, TpcId};
use crate::time::Nanos;

const SLOT_EPS: f64 = 1e-9;

/// One atom handed to the device.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomLaunch {
    pub id: AtomId,
    pub app: AppId,
    pub kernel: KernelHandle,
    /// Linearized block-index range `[lo, hi)`.
    pub blocks: Range<u32>,
    pub tpcs: Vec<TpcId>,
    /// Larger is more urgent.
    pub priority: u8,
    /// Charges the prelude overhead on every block.
    pub atomized: bool,
}

/// Completion record for an atom, as observable from the host.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomCompletion {
    pub id: AtomId,
    pub app: AppId,
    pub dispatched_at: Nanos,
    pub started_at: Nanos,
    pub completed_at: Nanos,
    /// Clock all blocks started under, or `None` if a switch landed mid-atom.
    pub frequency_mhz: Option<u32>,
    pub tpc_count: u32,
    pub block_count: u32,
}

impl AtomCompletion {
    /// Execution time from first block start to last block end.
    pub fn execution_time(&self) -> Nanos {
        self.completed_at - self.started_at
    }
}

#[derive(Debug)]
struct ActiveAtom {
    launch: AtomLaunch,
    seq: u64,
    slot_fraction: f64,
    block_latency_fmax: Nanos,
    sensitivity: f64,
    prelude: Nanos,
    next_block: u32,
    running: u32,
    completed: u32,
    dispatched_at: Nanos,
    first_start: Option<Nanos>,
    freq: Option<u32>,
    mixed_freq: bool,
}

impl ActiveAtom {
    fn has_waiting(&self) -> bool {
        self.next_block < self.launch.blocks.end
    }

    fn size(&self) -> u32 {
        self.launch.blocks.end - self.launch.blocks.start
    }

    fn rank(&self) -> (std::cmp::Reverse<u8>, u64) {
        (std::cmp::Reverse(self.launch.priority), self.seq)
    }
}

#[derive(Debug, Default)]
struct TpcState {
    /// Occupied fraction of the slot pool.
    used: f64,
    running_blocks: u32,
    /// Resident atoms and their running block counts on this TPC.
    resident: Vec<(AtomId, u32)>,
    pending: Vec<AtomId>,
    /// Incomplete atoms whose TPC set includes this TPC, per app.
    allocated: Vec<(AppId, u32)>,
    /// Running blocks per app.
    running_by_app: Vec<(AppId, u32)>,
}

#[derive(Debug)]
struct BlockGroup {
    atom: AtomId,
    members: Vec<(TpcId, u32)>,
}

/// Time-integrated device counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceStats {
    pub energy_j: f64,
    /// TPC-nanoseconds with at least one running block.
    pub active_tpc_ns: u128,
    /// TPC-nanoseconds covered by at least one dispatched, incomplete atom.
    pub allocated_tpc_ns: u128,
    pub app_active_tpc_ns: BTreeMap<AppId, u128>,
    pub app_allocated_tpc_ns: BTreeMap<AppId, u128>,
    pub frequency_residency: BTreeMap<u32, Nanos>,
    pub blocks_executed: u64,
    pub elapsed: Nanos,
}

/// Tracks how often each block of each kernel ran.
#[derive(Debug, Default, Clone)]
pub struct BlockAudit {
    counts: HashMap<KernelHandle, Vec<u32>>,
}

impl BlockAudit {
    pub fn counts(&self, kernel: KernelHandle) -> Option<&[u32]> {
        self.counts.get(&kernel).map(Vec::as_slice)
    }

    pub fn kernels(&self) -> impl Iterator<Item = (&KernelHandle, &Vec<u32>)> {
        self.counts.iter()
    }
}

/// Blocks started during one fill pass, grouped per atom.
#[derive(Default)]
struct StartBatch {
    order: Vec<AtomId>,
    members: HashMap<AtomId, Vec<(TpcId, u32)>>,
}

impl StartBatch {
    fn add(&mut self, atom: AtomId, tpc: TpcId) {
        let members = self.members.entry(atom).or_insert_with(|| {
            self.order.push(atom);
            Vec::new()
        });
        match members.last_mut() {
            Some((t, n)) if *t == tpc => *n += 1,
            _ => match members.iter_mut().find(|(t, _)| *t == tpc) {
                Some((_, n)) => *n += 1,
                None => members.push((tpc, 1)),
            },
        }
    }
}

pub struct Device {
    topology: DeviceTopology,
    freq: FrequencyDomain,
    power: PowerModel,
    kernels: Vec<SimKernelSpec>,
    queue: EventQueue<Event>,
    now: Nanos,
    last_update: Nanos,
    atoms: BTreeMap<AtomId, ActiveAtom>,
    tpcs: Vec<TpcState>,
    groups: HashMap<u64, BlockGroup>,
    next_group: u64,
    next_atom_seq: u64,
    gates_closed: BTreeSet<AppId>,
    active_tpcs: u32,
    allocated_tpcs: u32,
    app_active: BTreeMap<AppId, u32>,
    app_allocated: BTreeMap<AppId, u32>,
    stats: DeviceStats,
    audit: Option<BlockAudit>,
}

impl Device {
    pub fn new(topology: DeviceTopology, freq: FrequencyDomain, power: PowerModel) -> Result<Self> {
        topology.validate()?;
        power.validate()?;
        let n = topology.total_tpcs() as usize;
        Ok(Device {
            topology,
            freq,
            power,
            kernels: Vec::new(),
            queue: EventQueue::new(),
            now: Nanos::ZERO,
            last_update: Nanos::ZERO,
            atoms: BTreeMap::new(),
            tpcs: (0..n).map(|_| TpcState::default()).collect(),
            groups: HashMap::new(),
            next_group: 0,
            next_atom_seq: 0,
            gates_closed: BTreeSet::new(),
            active_tpcs: 0,
            allocated_tpcs: 0,
            app_active: BTreeMap::new(),
            app_allocated: BTreeMap::new(),
            stats: DeviceStats::default(),
            audit: None,
        })
    }

    pub fn from_profile(profile: &DeviceProfile) -> Result<Self> {
        profile.validate()?;
        Self::new(
            profile.topology.clone(),
            profile.frequency_domain()?,
            profile.power.clone(),
        )
    }

    /// Starts recording per-block execution counts.
    pub fn enable_block_audit(&mut self) {
        self.audit = Some(BlockAudit::default());
    }

    pub fn block_audit(&self) -> Option<&BlockAudit> {
        self.audit.as_ref()
    }

    pub fn topology(&self) -> &DeviceTopology {
        &self.topology
    }

    pub fn total_tpcs(&self) -> u32 {
        self.topology.total_tpcs()
    }

    pub fn frequency(&self) -> &FrequencyDomain {
        &self.freq
    }

    pub fn power_model(&self) -> &PowerModel {
        &self.power
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn stats(&self) -> &DeviceStats {
        &self.stats
    }

    /// Registers a ground-truth kernel and returns its opaque handle.
    pub fn register_kernel(&mut self, spec: SimKernelSpec) -> Result<KernelHandle> {
        spec.validate()?;
        let handle = KernelHandle(self.kernels.len() as u32);
        self.kernels.push(spec);
        Ok(handle)
    }

    pub fn kernel_shape(&self, handle: KernelHandle) -> Option<KernelShape> {
        self.kernels.get(handle.0 as usize).map(SimKernelSpec::shape)
    }

    /// Latency of one block of `spec` at frequency `f`.
    pub fn block_latency(&self, spec: &SimKernelSpec, f: u32) -> Result<Nanos> {
        self.freq.check(f)?;
        Ok(scaled_block_duration(
            spec.block_duration_at_fmax,
            spec.sensitivity,
            self.freq.f_max(),
            f,
        ))
    }

    /// Closed-form latency of a lone kernel: integer waves times block latency.
    pub fn reference_kernel_latency(&self, spec: &SimKernelSpec, tpcs: u32, f: u32) -> Result<Nanos> {
        if tpcs == 0 {
            return Err(Error::Config("reference latency needs at least one TPC".into()));
        }
        let tpcs = tpcs.min(self.total_tpcs());
        let block = self.block_latency(spec, f)?;
        Ok(block * wave_count(spec.total_blocks, tpcs, spec.occupancy_per_tpc))
    }

    pub fn schedule(&mut self, at: Nanos, event: Event) {
        debug_assert!(at >= self.now, "cannot schedule in the past");
        self.queue.push(at, event);
    }

    pub fn peek_time(&self) -> Option<Nanos> {
        self.queue.peek_time()
    }

    /// Pops the next event and advances the clock (and all integrals) to it.
    pub fn pop_event(&mut self) -> Option<(Nanos, Event)> {
        let (at, _, event) = self.queue.pop()?;
        self.advance_to(at);
        Some((at, event))
    }

    /// Integrates energy and utilization up to `t`.
    pub fn advance_to(&mut self, t: Nanos) {
        if t <= self.last_update {
            self.now = self.now.max(t);
            return;
        }
        let dt = t - self.last_update;
        let f = self.freq.current();
        self.stats.energy_j += self.power.energy_j(dt, self.active_tpcs, f, self.freq.f_max());
        self.stats.active_tpc_ns += self.active_tpcs as u128 * dt.0 as u128;
        self.stats.allocated_tpc_ns += self.allocated_tpcs as u128 * dt.0 as u128;
        for (app, n) in &self.app_active {
            *self.stats.app_active_tpc_ns.entry(*app).or_default() += *n as u128 * dt.0 as u128;
        }
        for (app, n) in &self.app_allocated {
            *self.stats.app_allocated_tpc_ns.entry(*app).or_default() += *n as u128 * dt.0 as u128;
        }
        *self.stats.frequency_residency.entry(f).or_default() += dt;
        self.stats.elapsed += dt;
        self.last_update = t;
        self.now = t;
    }

    /// Requests a clock change; the switch lands `switch_latency` later.
    pub fn request_frequency(&mut self, f: u32) -> Result<Nanos> {
        let req = self.freq.request(f, self.now)?;
        if let SwitchRequest::Scheduled(p) = req {
            self.queue.push(
                p.effective_at,
                Event::FrequencySwitchEffective {
                    generation: p.generation,
                },
            );
        }
        Ok(req.effective_at())
    }

    /// Handles a `FrequencySwitchEffective` event.
    pub fn apply_frequency_switch(&mut self, generation: u64) -> bool {
        self.freq.apply(generation)
    }

    /// Opens or closes the block-start gate for an app. Resident blocks keep
    /// running; no new block of a gated app starts.
    pub fn set_gate(&mut self, app: AppId, open: bool) {
        let changed = if open {
            self.gates_closed.remove(&app)
        } else {
            self.gates_closed.insert(app)
        };
        if changed && open {
            let mut batch = StartBatch::default();
            for p in 0..self.tpcs.len() as TpcId {
                while self.try_start_one(p, &mut batch) {}
            }
            self.flush(batch);
        }
    }

    pub fn gate_open(&self, app: AppId) -> bool {
        !self.gates_closed.contains(&app)
    }

    /// Number of dispatched, incomplete atoms.
    pub fn outstanding_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// True when the app has a dispatched atom that has not completed.
    pub fn app_has_outstanding(&self, app: AppId) -> bool {
        self.atoms.values().any(|a| a.launch.app == app)
    }

    pub fn running_blocks(&self, tpc: TpcId) -> u32 {
        self.tpcs[tpc as usize].running_blocks
    }

    /// Occupied fraction of a TPC's slot pool.
    pub fn tpc_load(&self, tpc: TpcId) -> f64 {
        self.tpcs[tpc as usize].used
    }

    pub fn active_tpcs(&self) -> u32 {
        self.active_tpcs
    }

    /// Places an atom on the device and starts as many of its blocks as the
    /// admission rules allow, filling TPCs breadth-first in block-index order.
    pub fn dispatch(&mut self, launch: AtomLaunch) -> Result<()> {
        let spec = self
            .kernels
            .get(launch.kernel.0 as usize)
            .ok_or_else(|| Error::Config(format!("unknown kernel handle {}", launch.kernel)))?;
        if launch.tpcs.is_empty() {
            return Err(Error::Config(format!("atom {} has an empty TPC set", launch.id)));
        }
        if launch.blocks.start >= launch.blocks.end || launch.blocks.end > spec.total_blocks {
            return Err(Error::Config(format!(
                "atom {} block range {:?} invalid for {} blocks",
                launch.id, launch.blocks, spec.total_blocks
            )));
        }
        if spec.occupancy_per_tpc == 0 {
            return Err(Error::Config("TPC has zero slots for this kernel".into()));
        }
        let mut seen = BTreeSet::new();
        for &p in &launch.tpcs {
            if p >= self.total_tpcs() {
                return Err(Error::Config(format!("TPC {p} out of range")));
            }
            if !seen.insert(p) {
                return Err(Error::Config(format!("TPC {p} listed twice in atom {}", launch.id)));
            }
        }
        if self.atoms.contains_key(&launch.id) {
            return Err(Error::Invariant(format!("atom {} dispatched twice", launch.id)));
        }

        let atom = ActiveAtom {
            seq: self.next_atom_seq,
            slot_fraction: 1.0 / spec.occupancy_per_tpc as f64,
            block_latency_fmax: spec.block_duration_at_fmax,
            sensitivity: spec.sensitivity,
            prelude: if launch.atomized {
                spec.prelude_overhead
            } else {
                Nanos::ZERO
            },
            next_block: launch.blocks.start,
            running: 0,
            completed: 0,
            dispatched_at: self.now,
            first_start: None,
            freq: None,
            mixed_freq: false,
            launch,
        };
        self.next_atom_seq += 1;
        let id = atom.launch.id;
        let app = atom.launch.app;
        let tpcs = atom.launch.tpcs.clone();
        self.atoms.insert(id, atom);
        for &p in &tpcs {
            let st = &mut self.tpcs[p as usize];
            st.pending.push(id);
            if bump(&mut st.allocated, app, 1) == 1 {
                *self.app_allocated.entry(app).or_default() += 1;
            }
            if st.allocated.iter().map(|(_, n)| n).sum::<u32>() == 1 {
                self.allocated_tpcs += 1;
            }
        }

        let mut batch = StartBatch::default();
        loop {
            let mut progress = false;
            for &p in &tpcs {
                progress |= self.try_start_one(p, &mut batch);
            }
            if !progress {
                break;
            }
        }
        self.flush(batch);
        Ok(())
    }

    /// Handles a `BlocksComplete` event. Returns the atom's completion record
    /// when its last block finished.
    pub fn complete_blocks(&mut self, group_id: u64) -> Result<Option<AtomCompletion>> {
        let group = self
            .groups
            .remove(&group_id)
            .ok_or_else(|| Error::Invariant(format!("unknown block group {group_id}")))?;
        let atom_id = group.atom;
        let (app, frac) = {
            let atom = self
                .atoms
                .get_mut(&atom_id)
                .ok_or_else(|| Error::Invariant(format!("completion for unknown atom {atom_id}")))?;
            let n: u32 = group.members.iter().map(|(_, n)| n).sum();
            atom.running -= n;
            atom.completed += n;
            (atom.launch.app, atom.slot_fraction)
        };
        for &(p, n) in &group.members {
            let st = &mut self.tpcs[p as usize];
            let entry = st
                .resident
                .iter_mut()
                .find(|(a, _)| *a == atom_id)
                .ok_or_else(|| Error::Invariant(format!("atom {atom_id} not resident on TPC {p}")))?;
            entry.1 -= n;
            st.running_blocks -= n;
            st.used -= frac * n as f64;
            if st.used < SLOT_EPS {
                st.used = 0.0;
            }
            if st.running_blocks == 0 {
                self.active_tpcs -= 1;
            }
            if bump(&mut st.running_by_app, app, -(n as i64)) == 0 {
                *self.app_active.get_mut(&app).expect("app tracked") -= 1;
            }
        }

        let done = {
            let atom = &self.atoms[&atom_id];
            atom.completed == atom.size()
        };
        let completion = if done {
            Some(self.retire(atom_id))
        } else {
            None
        };

        let mut batch = StartBatch::default();
        for &(p, _) in &group.members {
            while self.try_start_one(p, &mut batch) {}
            self.prune(p);
        }
        self.flush(batch);
        Ok(completion)
    }

    fn retire(&mut self, id: AtomId) -> AtomCompletion {
        let atom = self.atoms.remove(&id).expect("retiring a live atom");
        let app = atom.launch.app;
        for &p in &atom.launch.tpcs {
            let st = &mut self.tpcs[p as usize];
            st.pending.retain(|a| *a != id);
            st.resident.retain(|(a, _)| *a != id);
            if bump(&mut st.allocated, app, -1) == 0 {
                *self.app_allocated.get_mut(&app).expect("app tracked") -= 1;
            }
            if st.allocated.is_empty() {
                self.allocated_tpcs -= 1;
            }
        }
        AtomCompletion {
            id,
            app,
            dispatched_at: atom.dispatched_at,
            started_at: atom.first_start.expect("completed atom has started"),
            completed_at: self.now,
            frequency_mhz: if atom.mixed_freq { None } else { atom.freq },
            tpc_count: atom.launch.tpcs.len() as u32,
            block_count: atom.size(),
        }
    }

    /// Drops residency entries that no longer hold or want slots on `p`.
    fn prune(&mut self, p: TpcId) {
        let atoms = &self.atoms;
        self.tpcs[p as usize]
            .resident
            .retain(|(a, n)| *n > 0 || atoms.get(a).is_some_and(|x| x.has_waiting()));
    }

    fn select(&self, p: TpcId) -> Option<(AtomId, bool)> {
        let st = &self.tpcs[p as usize];
        let eligible = |id: &AtomId| {
            let a = &self.atoms[id];
            a.has_waiting() && !self.gates_closed.contains(&a.launch.app)
        };
        st.resident
            .iter()
            .map(|(id, _)| id)
            .filter(|id| eligible(id))
            .min_by_key(|id| self.atoms[id].rank())
            .map(|id| (*id, false))
            .or_else(|| {
                st.pending
                    .iter()
                    .filter(|id| eligible(id))
                    .min_by_key(|id| self.atoms[id].rank())
                    .map(|id| (*id, true))
            })
    }

    fn try_start_one(&mut self, p: TpcId, batch: &mut StartBatch) -> bool {
        let Some((id, from_pending)) = self.select(p) else {
            return false;
        };
        let frac = self.atoms[&id].slot_fraction;
        let st = &mut self.tpcs[p as usize];
        if st.used + frac > 1.0 + SLOT_EPS {
            return false;
        }
        if from_pending {
            st.pending.retain(|a| *a != id);
            st.resident.push((id, 0));
        }
        st.resident
            .iter_mut()
            .find(|(a, _)| *a == id)
            .expect("resident entry")
            .1 += 1;
        st.used += frac;
        st.running_blocks += 1;
        if st.running_blocks == 1 {
            self.active_tpcs += 1;
        }
        let atom = self.atoms.get_mut(&id).expect("selected atom");
        let app = atom.launch.app;
        if bump(&mut st.running_by_app, app, 1) == 1 {
            *self.app_active.entry(app).or_default() += 1;
        }
        let block = atom.next_block;
        atom.next_block += 1;
        atom.running += 1;
        if atom.first_start.is_none() {
            atom.first_start = Some(self.now);
        }
        let f = self.freq.current();
        match atom.freq {
            None => atom.freq = Some(f),
            Some(prev) if prev != f => atom.mixed_freq = true,
            _ => {}
        }
        if let Some(audit) = self.audit.as_mut() {
            let spec = &self.kernels[atom.launch.kernel.0 as usize];
            let counts = audit
                .counts
                .entry(atom.launch.kernel)
                .or_insert_with(|| vec![0; spec.total_blocks as usize]);
            counts[block as usize] += 1;
        }
        self.stats.blocks_executed += 1;
        batch.add(id, p);
        true
    }

    fn flush(&mut self, batch: StartBatch) {
        let StartBatch { order, mut members } = batch;
        let f = self.freq.current();
        let f_max = self.freq.f_max();
        for id in order {
            let atom = &self.atoms[&id];
            let latency = scaled_block_duration(atom.block_latency_fmax, atom.sensitivity, f_max, f) + atom.prelude;
            let gid = self.next_group;
            self.next_group += 1;
            self.groups.insert(
                gid,
                BlockGroup {
                    atom: id,
                    members: members.remove(&id).unwrap_or_default(),
                },
            );
            self.queue.push(self.now + latency, Event::BlocksComplete { group: gid });
        }
    }

    /// Checks slot conservation on every TPC.
    pub fn check_slot_invariants(&self) -> Result<()> {
        for (p, st) in self.tpcs.iter().enumerate() {
            let mut used = 0.0;
            let mut blocks = 0;
            for (id, n) in &st.resident {
                let atom = self
                    .atoms
                    .get(id)
                    .ok_or_else(|| Error::Invariant(format!("stale resident atom {id} on TPC {p}")))?;
                if !atom.launch.tpcs.contains(&(p as TpcId)) {
                    return Err(Error::Invariant(format!("atom {id} running outside its TPC set on {p}")));
                }
                used += atom.slot_fraction * *n as f64;
                blocks += n;
            }
            if used > 1.0 + SLOT_EPS || blocks != st.running_blocks {
                return Err(Error::Invariant(format!(
                    "TPC {p} over-subscribed: load {used}, blocks {blocks}/{}",
                    st.running_blocks
                )));
            }
        }
        Ok(())
    }
}

/// Adds `delta` to the counter for `app` and returns the new value; drops
/// the entry when it reaches zero.
fn bump(counts: &mut Vec<(AppId, u32)>, app: AppId, delta: i64) -> u32 {
    let idx = match counts.iter().position(|(a, _)| *a == app) {
        Some(i) => i,
        None => {
            counts.push((app, 0));
            counts.len() - 1
        }
    };
    let v = (counts[idx].1 as i64 + delta) as u32;
    if v == 0 {
        counts.swap_remove(idx);
    } else {
        counts[idx].1 = v;
    }
    v
}
