use std::collections::{BTreeMap, HashMap, VecDeque};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{
    class_priority, AtomMeta, DvfsAppSummary, Host, KernelPlan, PendingKernel, Placement, Policy, PolicyExtras,
    SchedulerConfig, PRIORITY_STOLEN,
};
use crate::atomizer::{effective_atom_duration, plan_atoms, should_atomize, AtomizerConfig};
use crate::device::{wave_count, AtomCompletion, Device};
use crate::error::Result;
use crate::ids::{AppId, StreamId, TpcId};
use crate::power_manager::{arbitrate, learning_step, AppDvfs, DvfsConfig, Observation, Phase};
use crate::predictor::{misprediction_rate, Confidence, ExecConfig, OperatorKey, PredictionLogEntry, Predictor, PredictorConfig};
use crate::rightsizer::{
    choose_tpcs, filter_cap, fit_scaling, probe_policy, ProbeContext, ProbeDecision, ProbeState, RightsizerConfig,
    ScalingFit, wave_guard,
};
use crate::scheduler::TpcLedger;
use crate::workload::PriorityClass;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FullSystemConfig {
    pub scheduler: SchedulerConfig,
    pub atomizer: AtomizerConfig,
    pub rightsizer: RightsizerConfig,
    pub dvfs: DvfsConfig,
    pub predictor: PredictorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RightsizeDecision {
    Off,
    Filter,
    Full,
    Probe,
    Fit,
}

/// Right-sizing outcome for one operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RightsizeRecord {
    pub queue: StreamId,
    pub ordinal: u32,
    pub cap: u32,
    pub t_alloc: u32,
    pub t_chosen: u32,
    pub decision: RightsizeDecision,
    pub executions: u64,
    pub fit: Option<ScalingFit>,
    /// Whole-kernel observations as `(tpcs, latency in µs)`.
    pub points: Vec<(u32, f64)>,
}

#[derive(Debug, Default)]
struct OperatorFit {
    full: Option<(u32, u32, f64)>,
    one: Option<(u32, f64)>,
    fit: Option<ScalingFit>,
}

#[derive(Debug, Default)]
struct BatchWeights {
    current: BTreeMap<OperatorKey, f64>,
    last: BTreeMap<OperatorKey, f64>,
}

pub struct FullSystem {
    cfg: FullSystemConfig,
    ledger: TpcLedger,
    predictor: Predictor,
    log: Vec<PredictionLogEntry>,
    fits: HashMap<OperatorKey, OperatorFit>,
    records: BTreeMap<OperatorKey, RightsizeRecord>,
    dvfs: Vec<AppDvfs<OperatorKey>>,
    weights: HashMap<StreamId, BatchWeights>,
    freq_requests: u64,
}

impl FullSystem {
    pub fn new(cfg: FullSystemConfig, host: &Host, dev: &Device) -> Result<Self> {
        cfg.scheduler.validate()?;
        let quotas: Vec<u32> = host.apps.iter().map(|a| a.quota).collect();
        let ledger = TpcLedger::new(dev.total_tpcs(), &quotas)?;
        let predictor = Predictor::new(cfg.predictor.clone(), cfg.atomizer.atom_duration(), dev.frequency().f_max());
        Ok(FullSystem {
            dvfs: host.apps.iter().map(|_| AppDvfs::default()).collect(),
            cfg,
            ledger,
            predictor,
            log: Vec::new(),
            fits: HashMap::new(),
            records: BTreeMap::new(),
            weights: HashMap::new(),
            freq_requests: 0,
        })
    }

    pub fn ledger(&self) -> &TpcLedger {
        &self.ledger
    }

    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    fn stealable(&self, host: &Host, app: AppId, want: usize) -> Vec<TpcId> {
        self.ledger.steal_tpcs(
            app,
            want,
            host.now(),
            self.cfg.scheduler.steal_horizon(),
            |o| host.app_has_pending(o),
            |o| host.last_submit[o.0 as usize],
        )
    }

    fn probe_context(&self, host: &Host, stream: StreamId, app: AppId) -> ProbeContext {
        let info = host.app(app);
        let headroom = match info.latency_slo {
            Some(slo) => host
                .completed
                .iter()
                .rev()
                .find(|r| r.app == app)
                .is_some_and(|r| r.latency() * 2 <= slo),
            None => false,
        };
        ProbeContext {
            queue_depth: host.stream(stream).map(|s| s.queued_requests()).unwrap_or(0),
            best_effort: info.class == PriorityClass::Be,
            slo_headroom_2x: headroom,
        }
    }

    fn apply_dvfs(&mut self, dev: &mut Device) -> Result<()> {
        if !self.cfg.dvfs.enabled {
            return Ok(());
        }
        let finals: Vec<u32> = self.dvfs.iter().filter_map(|d| d.plan).collect();
        if finals.is_empty() {
            return Ok(());
        }
        let target = arbitrate(&finals, dev.frequency().target());
        if target != dev.frequency().target() {
            dev.request_frequency(target)?;
            self.freq_requests += 1;
        }
        Ok(())
    }
}

impl Policy for FullSystem {
    fn name(&self) -> &'static str {
        "full_system"
    }

    fn on_submit(&mut self, _host: &Host, _dev: &mut Device, app: AppId) -> Result<()> {
        self.ledger.revoke_stolen(app);
        Ok(())
    }

    fn plan(&mut self, host: &Host, dev: &Device, stream: StreamId, k: &PendingKernel) -> Result<Option<KernelPlan>> {
        let app = host.stream(stream)?.app;
        let total = dev.total_tpcs();
        let n = k.shape.total_blocks;
        let occ = k.shape.occupancy_per_tpc;
        let cap = filter_cap(n, occ, total);
        let owned = self.ledger.owned(app).len() as u32;
        let known = self.predictor.is_known(k.key);
        // Cold kernels stay on owned TPCs, unless the app owns none.
        let steal_ok = self.cfg.scheduler.stealing && (known || owned == 0);
        let stealable = if steal_ok {
            self.stealable(host, app, total as usize).len() as u32
        } else {
            0
        };
        let t_alloc = owned + stealable;
        if t_alloc == 0 {
            return Ok(None);
        }

        let rs = &self.cfg.rightsizer;
        let (t, decision) = if !rs.enabled {
            (t_alloc, RightsizeDecision::Off)
        } else if cap < t_alloc {
            (cap, RightsizeDecision::Filter)
        } else {
            let fit = self.fits.get(&k.key);
            let state = ProbeState {
                full_observed: fit.is_some_and(|f| f.full.is_some()),
                has_fit: fit.is_some_and(|f| f.fit.is_some()),
            };
            let ctx = self.probe_context(host, stream, app);
            match probe_policy(&state, &ctx, rs.probe_depth_limit) {
                ProbeDecision::UseFull => (t_alloc, RightsizeDecision::Full),
                ProbeDecision::ProbeOneTpc if owned >= 1 => (1, RightsizeDecision::Probe),
                ProbeDecision::ProbeOneTpc => (t_alloc, RightsizeDecision::Full),
                ProbeDecision::UseFit => {
                    let f = fit.and_then(|f| f.fit).expect("fit present");
                    let t = choose_tpcs(&f, t_alloc, rs.slip_k, cap);
                    (wave_guard(t, t_alloc.min(cap), n, occ, rs.slip_k), RightsizeDecision::Fit)
                }
            }
        };
        let probe = decision == RightsizeDecision::Probe;

        let mhz = dev.frequency().current();
        let (pred, conf) = self.predictor.predict(k.key, ExecConfig { tpcs: t, mhz, blocks: n });
        let at = &self.cfg.atomizer;
        let atom_duration = at.atom_duration();
        let atomize = at.enabled
            && conf != Confidence::Unknown
            && !probe
            && should_atomize(pred, n, atom_duration, at.disable_factor);
        let ranges: VecDeque<Range<u32>> = if atomize {
            let wave = t.min(cap) * occ;
            let eff = effective_atom_duration(atom_duration, pred, n, wave);
            plan_atoms(n, pred, eff, wave).into()
        } else {
            VecDeque::from([0..n])
        };

        let rec = self.records.entry(k.key).or_insert_with(|| RightsizeRecord {
            queue: k.key.queue,
            ordinal: k.key.ordinal,
            cap,
            t_alloc,
            t_chosen: t,
            decision,
            executions: 0,
            fit: None,
            points: Vec::new(),
        });
        rec.cap = cap;
        rec.t_alloc = t_alloc;
        rec.t_chosen = t;
        rec.decision = decision;
        rec.executions += 1;

        if self.cfg.dvfs.enabled {
            let d = &mut self.dvfs[app.0 as usize];
            let unseen = d.records.get(&k.key).is_none_or(|r| r.phase == Phase::Unseen);
            if unseen {
                d.plan = Some(dev.frequency().f_max());
            }
        }

        Ok(Some(KernelPlan {
            tpcs: t,
            atomized: atomize,
            allow_steal: steal_ok && !probe,
            ranges,
        }))
    }

    fn place(&mut self, host: &Host, dev: &Device, stream: StreamId, blocks: &Range<u32>) -> Option<Placement> {
        let s = host.stream(stream).ok()?;
        let inflight = s.inflight.as_ref()?;
        let t = inflight.plan.tpcs as usize;
        let mut tpcs: Vec<TpcId> = self.ledger.owned_by_readiness(s.app).into_iter().take(t).collect();
        let stolen = if tpcs.len() < t && inflight.plan.allow_steal {
            self.stealable(host, s.app, t - tpcs.len())
        } else {
            Vec::new()
        };
        if tpcs.is_empty() && stolen.is_empty() {
            return None;
        }
        tpcs.extend_from_slice(&stolen);
        let priority = if stolen.is_empty() {
            class_priority(host.app(s.app).class)
        } else {
            PRIORITY_STOLEN
        };
        let (predicted, confidence) = self.predictor.predict(
            inflight.kernel.key,
            ExecConfig {
                tpcs: tpcs.len() as u32,
                mhz: dev.frequency().current(),
                blocks: blocks.end - blocks.start,
            },
        );
        Some(Placement {
            tpcs,
            stolen,
            priority,
            predicted,
            confidence,
        })
    }

    fn on_dispatch(&mut self, host: &Host, _dev: &Device, atom: &AtomMeta) {
        self.ledger
            .on_dispatch(atom.id, atom.app, &atom.tpcs, atom.predicted, atom.priority, host.now());
    }

    fn on_atom_complete(&mut self, host: &Host, dev: &mut Device, done: &AtomCompletion, meta: &AtomMeta) -> Result<()> {
        self.ledger.on_complete(meta.id, &meta.tpcs, host.now());
        let exec = done.execution_time();
        let tpcs = done.tpc_count;
        self.log.push(PredictionLogEntry {
            queue: meta.key.queue,
            ordinal: meta.key.ordinal,
            batch: meta.batch,
            tpcs,
            mhz: done.frequency_mhz.unwrap_or(0),
            blocks: meta.block_count(),
            predicted_us: meta.predicted.as_micros_f64(),
            actual_us: exec.as_micros_f64(),
            confidence: meta.confidence,
        });
        let Some(mhz) = done.frequency_mhz else {
            return Ok(());
        };
        self.predictor.record(
            meta.key,
            ExecConfig {
                tpcs,
                mhz,
                blocks: meta.block_count(),
            },
            exec,
        );

        if meta.whole_kernel() && !meta.atomized {
            let lat = exec.0 as f64;
            let f = self.fits.entry(meta.key).or_default();
            if tpcs == 1 {
                f.one = Some((mhz, lat));
            } else if f.full.is_none() {
                f.full = Some((tpcs, mhz, lat));
            }
            if f.fit.is_none() {
                if let (Some((t_full, f_full, l_t)), Some((f_one, l1))) = (f.full, f.one) {
                    if f_full == f_one {
                        f.fit = Some(fit_scaling(l1, l_t, t_full));
                    }
                }
            }
            let fit = f.fit;
            if let Some(rec) = self.records.get_mut(&meta.key) {
                rec.points.push((tpcs, exec.as_micros_f64()));
                rec.fit = fit;
            }
        }

        if self.cfg.dvfs.enabled {
            let waves = wave_count(meta.block_count(), tpcs, meta.shape.occupancy_per_tpc).max(1);
            let per_block = exec.0 as f64 / waves as f64;
            let supported = dev.frequency().supported_mhz().to_vec();
            let d = &mut self.dvfs[meta.app.0 as usize];
            let rec = d.records.entry(meta.key).or_default();
            learning_step(
                rec,
                Observation {
                    per_block_ns: per_block,
                    f_mhz: mhz,
                },
                &self.cfg.dvfs,
                &supported,
            )?;
            let base = rec.baseline_ns.map_or(exec.0 as f64, |b| b * waves as f64);
            *self
                .weights
                .entry(meta.stream)
                .or_default()
                .current
                .entry(meta.key)
                .or_default() += base;
        }
        Ok(())
    }

    fn on_sync(&mut self, host: &Host, dev: &mut Device, stream: StreamId) -> Result<()> {
        self.predictor.batch_boundary(stream);
        if !self.cfg.dvfs.enabled {
            return Ok(());
        }
        let app = host.stream(stream)?.app;
        if let Some(w) = self.weights.get_mut(&stream) {
            if !w.current.is_empty() {
                w.last = std::mem::take(&mut w.current);
            }
        }
        let mut merged = BTreeMap::new();
        for s in host.streams_of(app) {
            if let Some(w) = self.weights.get(&s.id) {
                for (k, v) in &w.last {
                    *merged.entry(*k).or_insert(0.0) += v;
                }
            }
        }
        let supported = dev.frequency().supported_mhz().to_vec();
        let d = &mut self.dvfs[app.0 as usize];
        d.weights = merged;
        d.replan(&self.cfg.dvfs, &supported)?;
        self.apply_dvfs(dev)
    }

    fn after_cycle(&mut self, _host: &Host, dev: &mut Device) -> Result<()> {
        self.apply_dvfs(dev)
    }

    fn extras(&self) -> PolicyExtras {
        let accuracy = misprediction_rate(
            self.log.iter().filter(|e| e.confidence != Confidence::Unknown),
            self.cfg.predictor.mispredict_threshold_us,
        )
        .ok();
        PolicyExtras {
            prediction_log: self.log.clone(),
            rightsizing: if self.cfg.rightsizer.enabled {
                self.records.values().cloned().collect()
            } else {
                Vec::new()
            },
            dvfs: if self.cfg.dvfs.enabled {
                self.dvfs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| DvfsAppSummary {
                        app: AppId(i as u32),
                        aggregate_sensitivity: d.aggregate_sensitivity(),
                        f_final_mhz: d.plan,
                        operators: d.records.len(),
                        confirmed: d.records.values().filter(|r| r.phase == Phase::Confirmed).count(),
                        phases: d.records.values().map(|r| r.phase).collect(),
                    })
                    .collect()
            } else {
                Vec::new()
            },
            frequency_requests: self.freq_requests,
            accuracy,
        }
    }
}

