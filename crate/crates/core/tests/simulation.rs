use proptest::prelude::*;
use tpcsim::baselines::PolicyKind;
use tpcsim::presets::{base, be, hp, uniform_model};
use tpcsim::scenario::Scenario;
use tpcsim::sim::{self, Simulation};
use tpcsim::workload::{Arrival, Dist, DistKind, ModelSource, SynthParams};
use tpcsim::Error;

fn model(layers: u32, blocks: Vec<f64>, seed: u64) -> ModelSource {
    ModelSource::Synth(SynthParams {
        layers,
        blocks: Dist::Kind(DistKind::Choice(blocks)),
        block_us: Dist::Kind(DistKind::Uniform([20.0, 900.0])),
        sensitivity: Dist::Kind(DistKind::Uniform([0.0, 1.0])),
        occupancy: Dist::Kind(DistKind::Choice(vec![1.0, 2.0, 4.0])),
        seed,
        blocks_scale: None,
    })
}

fn mixed(seed: u64, q: [u32; 3], rate: f64) -> Scenario {
    let mut a = hp("a", q[0], 30.0, rate, model(4, vec![8.0, 100.0, 700.0], seed));
    a.mig_gpcs = Some(vec![0, 1, 2]);
    let mut b = hp("b", q[1], 30.0, rate / 2.0, model(3, vec![50.0, 400.0], seed + 1));
    b.mig_gpcs = Some(vec![3, 4]);
    let c = be("c", q[2], model(2, vec![2000.0, 30.0], seed + 2));
    let mut s = base("random", 300.0, 50.0, vec![a, b, c]);
    s.seed = seed;
    s.check_invariants = true;
    s
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn every_policy_keeps_invariants(seed in 0u64..1000, qa in 0u32..30, qb in 0u32..20, rate in 5.0f64..120.0, p in 0usize..6) {
        let qc = 54 - qa - qb;
        let mut s = mixed(seed, [qa, qb, qc.min(10)], rate);
        s.policy = PolicyKind::ALL[p];
        s.rightsizer.enabled = seed % 2 == 0;
        s.dvfs.enabled = seed % 3 == 0;
        s.scheduler.steal_horizon_ms = (seed % 4) as f64 * 0.25;
        let out = sim::simulate(&s).unwrap();
        let mut ids: Vec<u64> = out.requests.iter().map(|r| r.id).collect();
        ids.dedup();
        prop_assert_eq!(ids.len(), out.requests.len());
        for r in &out.requests {
            if let Some(c) = r.completed_ns {
                prop_assert!(c >= r.arrival_ns && c <= s.horizon().0);
            }
        }
        let report = sim::build_report(&s, &out, None);
        prop_assert!(report.device.utilization <= 1.0 + 1e-9);
        let shares: f64 = report.apps.iter().map(|a| a.tpc_time_share).sum();
        prop_assert!(shares <= 1.0 + 1e-9);
    }
}

#[test]
fn full_block_accounting() {
    let mut s = mixed(7, [20, 20, 10], 60.0);
    s.horizon_ms = 200.0;
    let mut simu = Simulation::new(&s).unwrap();
    simu.enable_block_audit();
    let out = simu.run().unwrap();
    let audit = out.audit.unwrap();
    let started: u64 = audit.kernels().map(|(_, c)| c.iter().map(|&x| x as u64).sum::<u64>()).sum();
    assert_eq!(started, out.stats.blocks_executed);
    // Cached launches repeat; a block never runs more often than its kernel.
    for (_, c) in audit.kernels() {
        let (lo, hi) = (c.iter().min().unwrap(), c.iter().max().unwrap());
        assert!(hi - lo <= 1, "blocks of one kernel diverged: {lo}..{hi}");
    }
}

#[test]
fn mig_never_touches_foreign_partitions() {
    let mut s = mixed(3, [24, 18, 0], 80.0);
    s.policy = PolicyKind::MigLike;
    let r = sim::build_report(&s, &sim::simulate(&s).unwrap(), None);
    assert_eq!(r.app("c").unwrap().completed, 0);
    assert!(r.app("a").unwrap().completed > 0);
}

#[test]
fn time_slice_alternates_owners() {
    let mut a = hp("a", 27, 50.0, 1.0, uniform_model(2, 216, 500.0, 1.0, 4));
    a.arrival = Arrival::ClosedLoop;
    let b = be("b", 27, uniform_model(2, 216, 500.0, 1.0, 4));
    let mut s = base("slices", 200.0, 0.0, vec![a, b]);
    s.policy = PolicyKind::TimeSlice;
    s.check_invariants = true;
    let r = sim::build_report(&s, &sim::simulate(&s).unwrap(), None);
    let (ra, rb) = (r.app("a").unwrap().completed, r.app("b").unwrap().completed);
    assert!(ra > 0 && rb > 0);
    assert!((ra as f64 / rb as f64 - 1.0).abs() < 0.2, "{ra} vs {rb}");
}

#[test]
fn reef_holds_best_effort_while_hp_busy() {
    let mut a = hp("a", 27, 50.0, 1.0, uniform_model(2, 216, 500.0, 1.0, 4));
    a.arrival = Arrival::ClosedLoop;
    let b = be("b", 27, uniform_model(2, 216, 500.0, 1.0, 4));
    let mut s = base("reef", 100.0, 0.0, vec![a, b]);
    s.policy = PolicyKind::ReefLike;
    let r = sim::build_report(&s, &sim::simulate(&s).unwrap(), None);
    assert_eq!(r.app("b").unwrap().completed, 0);
}

#[test]
fn alone_runs_normalize_to_one() {
    let s = base("lone", 500.0, 100.0, vec![hp("a", 54, 50.0, 40.0, uniform_model(4, 216, 200.0, 1.0, 4))]);
    let out = sim::run_scenario(&s).unwrap();
    let n = out.report.apps[0].normalized_throughput.unwrap();
    assert!((n - 1.0).abs() < 0.05, "{n}");
}

#[test]
fn compare_rejects_different_workloads() {
    let s = base("x", 100.0, 0.0, vec![hp("a", 54, 50.0, 40.0, uniform_model(1, 8, 10.0, 1.0, 1))]);
    let mut t = s.clone();
    t.apps[0].name = "other".into();
    assert!(matches!(sim::compare(&[s.clone(), t]), Err(Error::Validation(_))));
    assert!(matches!(sim::compare(&[s]), Err(Error::Validation(_))));
}

#[test]
fn invalid_scenarios_are_rejected() {
    let ok = base("x", 100.0, 0.0, vec![hp("a", 54, 50.0, 40.0, uniform_model(1, 8, 10.0, 1.0, 1))]);
    let mut s = ok.clone();
    s.apps.push(s.apps[0].clone());
    assert!(matches!(Simulation::new(&s), Err(Error::Validation(_))));
    let mut s = ok.clone();
    s.atomizer.atom_duration_ms = 0.0;
    assert!(matches!(Simulation::new(&s), Err(Error::Validation(_))));
    let mut s = ok.clone();
    s.rightsizer.slip_k = 0.9;
    assert!(matches!(Simulation::new(&s), Err(Error::Validation(_))));
    let mut s = ok.clone();
    s.warmup_ms = 100.0;
    assert!(matches!(Simulation::new(&s), Err(Error::Validation(_))));
    let mut s = ok;
    s.device = tpcsim::device::DeviceSpec::Named("v100".into());
    assert!(matches!(Simulation::new(&s), Err(Error::Config(_))));
}

#[test]
fn scenario_files_load_with_relative_traces() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("t.jsonl"),
        "{\"schema\":\"tpcsim-trace/1\"}\n\
         {\"app_id\":0,\"stream_id\":0,\"seq\":0,\"kind\":\"kernel\",\"grid_xyz\":[64,1,1],\"block_duration_us_at_fmax\":100.0,\"sensitivity_s\":1.0,\"occupancy_per_tpc\":4,\"arrival_us\":10.0}\n\
         {\"app_id\":0,\"stream_id\":0,\"seq\":1,\"kind\":\"sync\"}\n",
    )
    .unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(
        &path,
        r#"
horizon_ms = 50
trace = "t.jsonl"

[[apps]]
name = "hp"
priority = "hp"
tpc_quota = 16
slo = { latency_ms = 5.0 }
arrival = { type = "trace" }
model = "trace"
"#,
    )
    .unwrap();
    let s = Scenario::load(&path).unwrap();
    let out = sim::simulate(&s).unwrap();
    assert_eq!(out.requests.len(), 1);
    // 64 blocks on 16 TPCs at occupancy 4 is one wave.
    assert_eq!(out.requests[0].latency().unwrap().0, 100_000);
}
