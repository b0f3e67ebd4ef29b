//! The simulation loop: arrivals feed the host, the host drives a policy,
//! the device produces completions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::baselines::{MigLike, MpsLike, PolicyKind, PriorityOnly, TimeSlice};
use crate::device::{BlockAudit, Device, DeviceStats, Event, KernelShape};
use crate::error::{Error, Result};
use crate::ids::{AppId, KernelHandle, StreamId};
use crate::metrics::{app_report, rightsizing_r_squared, summarize, AppInput, DeviceReport, RequestLog, RightsizingReport, RunReport};
use crate::scenario::Scenario;
use crate::scheduler::{AppInfo, FullSystem, Host, Policy, PolicyExtras};
use crate::time::Nanos;
use crate::workload::{load_trace, synth_model, Arrival, KernelDesc, ModelSource, ModelTemplate, PoissonProcess, Trace, TraceRequest};

type Launch = Vec<(KernelHandle, KernelShape)>;

enum Source {
    Template {
        template: ModelTemplate,
        cached: Option<Launch>,
        stream: StreamId,
    },
    Trace {
        requests: Vec<TraceRequest>,
        cached: Vec<Option<Launch>>,
        streams: BTreeMap<u32, StreamId>,
    },
}

struct SimApp {
    source: Source,
    arrivals: Option<PoissonProcess>,
    closed_loop: bool,
    issued: u64,
}

/// Everything a run produced, before reduction to a report.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub policy: String,
    pub requests: Vec<RequestLog>,
    pub stats: DeviceStats,
    pub total_tpcs: u32,
    pub extras: PolicyExtras,
    pub audit: Option<BlockAudit>,
}

pub struct Simulation {
    scenario: Scenario,
    device: Device,
    host: Host,
    policy: Box<dyn Policy>,
    apps: Vec<SimApp>,
    prelude: Nanos,
}

fn build_policy(s: &Scenario, host: &Host, dev: &Device) -> Result<Box<dyn Policy>> {
    Ok(match s.policy {
        PolicyKind::FullSystem => Box::new(FullSystem::new(s.full_system_config(), host, dev)?),
        PolicyKind::MpsLike => Box::new(MpsLike),
        PolicyKind::MigLike => Box::new(MigLike::new(host, dev)?),
        PolicyKind::TimeSlice => Box::new(TimeSlice::new(Nanos::from_millis_f64(s.baseline.time_slice_ms), host)?),
        PolicyKind::PriorityOnly => Box::new(PriorityOnly::priority_only()),
        PolicyKind::ReefLike => Box::new(PriorityOnly::reef_like()),
    })
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let profile = scenario.profile()?;
        let mut device = Device::from_profile(&profile)?;
        let infos = scenario
            .apps
            .iter()
            .enumerate()
            .map(|(i, a)| AppInfo {
                id: AppId(i as u32),
                name: a.name.clone(),
                class: a.priority,
                quota: a.tpc_quota,
                latency_slo: a.latency_slo_ms().map(Nanos::from_millis_f64),
                mig_gpcs: a.mig_gpcs.clone(),
            })
            .collect();
        let mut host = Host::new(scenario.scheduler.clone(), infos)?;
        let trace = match &scenario.trace {
            Some(p) if scenario.apps.iter().any(|a| matches!(a.model, ModelSource::Trace)) => load_trace(p)?,
            _ => Trace::default(),
        };
        let horizon = scenario.horizon();

        let mut apps = Vec::new();
        for (i, spec) in scenario.apps.iter().enumerate() {
            let id = AppId(i as u32);
            let source = match &spec.model {
                ModelSource::Synth(p) => Source::Template {
                    template: synth_model(p)?,
                    cached: None,
                    stream: host.create_stream(id),
                },
                ModelSource::Trace => {
                    let mut requests = trace.apps.get(&(i as u32)).cloned().unwrap_or_default();
                    if requests.is_empty() {
                        return Err(Error::Validation(format!("trace has no requests for app {i} ('{}')", spec.name)));
                    }
                    if matches!(spec.arrival, Arrival::Trace) {
                        if requests.iter().any(|r| r.arrival.is_none()) {
                            return Err(Error::Validation(format!("app '{}': trace request without arrival", spec.name)));
                        }
                        requests.sort_by_key(|r| r.arrival);
                    }
                    let mut streams = BTreeMap::new();
                    for r in &requests {
                        streams.entry(r.stream).or_insert_with(|| host.create_stream(id));
                    }
                    Source::Trace {
                        cached: vec![None; requests.len()],
                        requests,
                        streams,
                    }
                }
            };
            let mut app = SimApp {
                source,
                arrivals: None,
                closed_loop: false,
                issued: 0,
            };
            match &spec.arrival {
                Arrival::Poisson { rate_rps, .. } => {
                    let mut p = PoissonProcess::new(*rate_rps, scenario.arrival_seed(spec))?;
                    if let Some(t) = p.next().filter(|&t| t < horizon) {
                        device.schedule(t, Event::RequestArrival { app: id });
                    }
                    app.arrivals = Some(p);
                }
                Arrival::ClosedLoop => {
                    app.closed_loop = true;
                    device.schedule(Nanos::ZERO, Event::RequestArrival { app: id });
                }
                Arrival::Trace => {
                    let Source::Trace { requests, .. } = &app.source else {
                        return Err(Error::Validation(format!("app '{}': trace arrivals need a trace model", spec.name)));
                    };
                    for t in requests.iter().filter_map(|r| r.arrival).filter(|&t| t < horizon) {
                        device.schedule(t, Event::RequestArrival { app: id });
                    }
                }
            }
            apps.push(app);
        }
        let mut policy = build_policy(scenario, &host, &device)?;
        policy.start(&host, &mut device)?;
        Ok(Simulation {
            prelude: scenario.atomizer.prelude(),
            scenario: scenario.clone(),
            device,
            host,
            policy,
            apps,
        })
    }

    pub fn enable_block_audit(&mut self) {
        self.device.enable_block_audit();
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn host(&self) -> &Host {
        &self.host
    }

    fn register(device: &mut Device, kernels: &[KernelDesc], prelude: Nanos) -> Result<Launch> {
        kernels
            .iter()
            .map(|k| {
                k.validate()?;
                let spec = k.to_spec(prelude);
                let shape = spec.shape();
                Ok((device.register_kernel(spec)?, shape))
            })
            .collect()
    }

    fn submit_request(&mut self, app: AppId) -> Result<()> {
        let now = self.device.now();
        let prelude = self.prelude;
        let a = &mut self.apps[app.0 as usize];
        let index = a.issued;
        a.issued += 1;
        let (stream, launch) = match &mut a.source {
            Source::Template {
                template,
                cached,
                stream,
            } => {
                let launch = if template.blocks_scale.is_none() {
                    if cached.is_none() {
                        *cached = Some(Self::register(&mut self.device, &template.kernels, prelude)?);
                    }
                    cached.clone().expect("cached above")
                } else {
                    Self::register(&mut self.device, &template.instantiate(index), prelude)?
                };
                (*stream, launch)
            }
            Source::Trace {
                requests,
                cached,
                streams,
            } => {
                let i = (index % requests.len() as u64) as usize;
                if cached[i].is_none() {
                    cached[i] = Some(Self::register(&mut self.device, &requests[i].kernels, prelude)?);
                }
                (streams[&requests[i].stream], cached[i].clone().expect("cached above"))
            }
        };
        let rid = self.host.open_request(app, stream, now);
        for (handle, shape) in launch {
            self.host.submit(stream, rid, handle, shape)?;
        }
        self.host.submit_sync(stream, rid)?;
        self.policy.on_submit(&self.host, &mut self.device, app)
    }

    fn on_arrival(&mut self, app: AppId) -> Result<()> {
        let horizon = self.scenario.horizon();
        self.submit_request(app)?;
        let a = &mut self.apps[app.0 as usize];
        if let Some(p) = &mut a.arrivals {
            if let Some(t) = p.next().filter(|&t| t < horizon) {
                self.device.schedule(t, Event::RequestArrival { app });
            }
        }
        Ok(())
    }

    /// Processes the next event; returns false once the horizon is reached.
    pub fn step(&mut self) -> Result<bool> {
        let horizon = self.scenario.horizon();
        match self.device.peek_time() {
            Some(t) if t < horizon => {}
            _ => return Ok(false),
        }
        let (t, event) = self.device.pop_event().expect("peeked");
        self.host.set_now(t);
        match event {
            Event::RequestArrival { app } => self.on_arrival(app)?,
            Event::BlocksComplete { group } => {
                if let Some(done) = self.device.complete_blocks(group)? {
                    self.host.on_atom_complete(&done, self.policy.as_mut(), &mut self.device)?;
                }
            }
            Event::FrequencySwitchEffective { generation } => {
                self.device.apply_frequency_switch(generation);
            }
            Event::TimeSliceBoundary { epoch } => self.policy.on_timer(&self.host, &mut self.device, epoch)?,
        }
        // Closed-loop clients resubmit before the next dispatch so there is no idle gap.
        self.host.release_ready(self.policy.as_mut(), &mut self.device)?;
        for (app, _) in self.host.take_released() {
            if self.apps[app.0 as usize].closed_loop {
                self.on_arrival(app)?;
            }
        }
        self.host.dispatch_cycle(self.policy.as_mut(), &mut self.device)?;
        for (app, _) in self.host.take_released() {
            if self.apps[app.0 as usize].closed_loop {
                self.device.schedule(t, Event::RequestArrival { app });
            }
        }
        if self.scenario.check_invariants {
            self.device.check_slot_invariants()?;
            self.host.check_invariants()?;
        }
        Ok(true)
    }

    pub fn run(mut self) -> Result<SimOutput> {
        while self.step()? {}
        self.device.advance_to(self.scenario.horizon());
        let mut requests: Vec<RequestLog> = self
            .host
            .completed
            .iter()
            .map(|r| RequestLog {
                app: r.app.0,
                id: r.id.0,
                arrival_ns: r.arrival.0,
                completed_ns: Some(r.completed.0),
            })
            .chain(self.host.open.iter().map(|(id, o)| RequestLog {
                app: o.app.0,
                id: id.0,
                arrival_ns: o.arrival.0,
                completed_ns: None,
            }))
            .collect();
        requests.sort_by_key(|r| r.id);
        Ok(SimOutput {
            policy: self.policy.name().to_string(),
            requests,
            stats: self.device.stats().clone(),
            total_tpcs: self.device.total_tpcs(),
            extras: self.policy.extras(),
            audit: self.device.block_audit().cloned(),
        })
    }
}

pub fn simulate(scenario: &Scenario) -> Result<SimOutput> {
    Simulation::new(scenario)?.run()
}

/// Reduces a run to its report. `alone_rps[i]` normalizes app `i`.
pub fn build_report(scenario: &Scenario, out: &SimOutput, alone_rps: Option<&[f64]>) -> RunReport {
    let horizon = scenario.horizon();
    let warmup = scenario.warmup();
    let st = &out.stats;
    // Apps sharing a TPC both count it, so shares are taken over the per-app sum.
    let app_tpc_ns: u128 = st.app_active_tpc_ns.values().sum();
    let apps: Vec<_> = scenario
        .apps
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let id = AppId(i as u32);
            let reqs: Vec<RequestLog> = out.requests.iter().filter(|r| r.app == i as u32).copied().collect();
            app_report(
                &AppInput {
                    name: &a.name,
                    class: a.priority,
                    quota: a.tpc_quota,
                    slo: a.slo.as_ref(),
                    requests: &reqs,
                    active_tpc_ns: st.app_active_tpc_ns.get(&id).copied().unwrap_or(0),
                    allocated_tpc_ns: st.app_allocated_tpc_ns.get(&id).copied().unwrap_or(0),
                    alone_rps: alone_rps.and_then(|v| v.get(i).copied()),
                },
                warmup,
                horizon,
                app_tpc_ns,
            )
        })
        .collect();
    let elapsed = st.elapsed.0.max(1) as f64;
    let device = DeviceReport {
        total_tpcs: out.total_tpcs,
        elapsed_ms: st.elapsed.as_millis_f64(),
        utilization: st.active_tpc_ns as f64 / (out.total_tpcs as f64 * elapsed),
        allocated_tpc_ms: st.allocated_tpc_ns as f64 / 1e6,
        energy_j: st.energy_j,
        blocks_executed: st.blocks_executed,
        frequency_switch_requests: out.extras.frequency_requests,
        frequency_residency: st
            .frequency_residency
            .iter()
            .map(|(&f, &t)| (f, t.0 as f64 / elapsed))
            .collect(),
    };
    let rightsizing = (!out.extras.rightsizing.is_empty()).then(|| RightsizingReport {
        weighted_r_squared: rightsizing_r_squared(&out.extras.rightsizing),
        kernels: out.extras.rightsizing.clone(),
    });
    RunReport {
        scenario: scenario.name.clone(),
        policy: out.policy.clone(),
        seed: scenario.seed,
        horizon_ms: scenario.horizon_ms,
        warmup_ms: scenario.warmup_ms,
        summary: summarize(&apps),
        apps,
        device,
        predictor: out.extras.accuracy.clone(),
        rightsizing,
        dvfs: out.extras.dvfs.clone(),
    }
}

/// A report plus the raw run it came from.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub sim: SimOutput,
}

/// Throughput of each app alone on the whole device under `mps_like`, over
/// the scenario's measurement window.
pub fn alone_throughputs(scenario: &Scenario) -> Result<Vec<f64>> {
    (0..scenario.apps.len())
        .map(|i| {
            let s = scenario.alone(i, PolicyKind::MpsLike)?;
            let out = simulate(&s)?;
            Ok(build_report(&s, &out, None).apps[0].throughput_rps)
        })
        .collect()
}

/// Runs a scenario and its alone-run normalizers.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput> {
    let alone = alone_throughputs(scenario)?;
    run_with_normalizers(scenario, &alone)
}

pub fn run_with_normalizers(scenario: &Scenario, alone: &[f64]) -> Result<RunOutput> {
    let sim = simulate(scenario)?;
    let report = build_report(scenario, &sim, Some(alone));
    Ok(RunOutput { report, sim })
}

/// One row of a policy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub policy: String,
    pub slo_attainment: Option<f64>,
    pub aggregate_normalized_throughput: Option<f64>,
    pub total_throughput_rps: f64,
    pub per_app: Vec<(String, Option<f64>, Option<f64>)>,
}

impl ComparisonRow {
    pub fn from_report(label: &str, r: &RunReport) -> Self {
        ComparisonRow {
            label: label.to_string(),
            policy: r.policy.clone(),
            slo_attainment: r.summary.slo_attainment,
            aggregate_normalized_throughput: r.summary.aggregate_normalized_throughput,
            total_throughput_rps: r.summary.total_throughput_rps,
            per_app: r
                .apps
                .iter()
                .map(|a| (a.name.clone(), a.p99_ms, a.normalized_throughput))
                .collect(),
        }
    }
}

/// Runs each scenario against shared alone-run normalizers. All scenarios
/// must describe the same workload.
pub fn compare(scenarios: &[Scenario]) -> Result<Vec<(RunReport, ComparisonRow)>> {
    let Some(first) = scenarios.first() else {
        return Err(Error::Validation("nothing to compare".into()));
    };
    if scenarios.len() < 2 {
        return Err(Error::Validation("compare needs at least two configurations".into()));
    }
    for s in scenarios {
        if !same_workload(first, s) {
            return Err(Error::Validation(format!(
                "scenario '{}' does not share the workload of '{}'",
                s.name, first.name
            )));
        }
    }
    let alone = alone_throughputs(first)?;
    scenarios
        .iter()
        .map(|s| {
            let out = run_with_normalizers(s, &alone)?;
            let row = ComparisonRow::from_report(&s.name, &out.report);
            Ok((out.report, row))
        })
        .collect()
}

/// Same device, apps' arrivals and models, seed and horizon.
pub fn same_workload(a: &Scenario, b: &Scenario) -> bool {
    a.device == b.device
        && a.seed == b.seed
        && a.horizon_ms == b.horizon_ms
        && a.warmup_ms == b.warmup_ms
        && a.trace == b.trace
        && a.apps.len() == b.apps.len()
        && a.apps.iter().zip(&b.apps).all(|(x, y)| {
            x.name == y.name && x.priority == y.priority && x.arrival == y.arrival && x.model == y.model && x.slo == y.slo
        })
}
