use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use tpcsim::baselines::PolicyKind;
use tpcsim::metrics::RunReport;
use tpcsim::predictor::{misprediction_rate, Confidence};
use tpcsim::presets;
use tpcsim::rightsizer::r_squared;
use tpcsim::scenario::Scenario;
use tpcsim::sim::{self, ComparisonRow, RunOutput};

#[derive(Parser)]
#[command(name = "tpcsim", version, about = "Multi-tenant GPU scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario bundle.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the sharing policy.
    #[arg(long)]
    policy: Option<String>,
    /// Directory for reports and raw logs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the atom duration (ms).
    #[arg(long)]
    atom_duration_ms: Option<f64>,
    /// Overrides the short-kernel atomization cutoff factor.
    #[arg(long)]
    disable_factor: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario, or every scenario of a preset.
    Run(Common),
    /// Run several scenarios over one workload and tabulate them.
    Compare {
        #[arg(long = "config", required = true, num_args = 1..)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid over slip_k, atom duration and quotas.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        slip_k: Vec<f64>,
        #[arg(long = "atom-durations", value_delimiter = ',')]
        atom_durations: Vec<f64>,
        /// `APP=Q1,Q2,...`; may repeat.
        #[arg(long)]
        quota: Vec<String>,
    },
    /// Right-sizing fit quality and prediction accuracy.
    FitReport(Common),
    /// List presets, or write one preset's scenario files.
    Presets {
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<tpcsim::Error>().map_or(1, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Run(c) => run(&c),
        Command::Compare { configs, seed, out } => {
            let scenarios = configs
                .iter()
                .map(|p| {
                    let mut s = Scenario::load(p)?;
                    if let Some(seed) = seed {
                        s.seed = seed;
                    }
                    Ok(s)
                })
                .collect::<tpcsim::Result<Vec<_>>>()?;
            let results = sim::compare(&scenarios)?;
            let rows: Vec<ComparisonRow> = results.iter().map(|r| r.1.clone()).collect();
            print!("{}", table(&rows));
            if let Some(dir) = out {
                for (report, row) in &results {
                    write_file(&dir.join(format!("{}.report.json", sanitize(&row.label))), &report.to_json())?;
                }
                write_file(&dir.join("comparison.json"), &serde_json::to_string_pretty(&rows)?)?;
            }
            Ok(())
        }
        Command::Sweep {
            common,
            slip_k,
            atom_durations,
            quota,
        } => sweep(&common, &slip_k, &atom_durations, &quota),
        Command::FitReport(c) => fit_report(&c),
        Command::Presets { name, out } => match name {
            None => {
                for n in presets::NAMES {
                    let b = presets::preset(n)?;
                    println!("{:<16} {}", n, b.description);
                }
                Ok(())
            }
            Some(n) => {
                let b = presets::preset(&n)?;
                for (label, s) in &b.runs {
                    match &out {
                        Some(dir) => write_file(&dir.join(format!("{}.toml", sanitize(label))), &s.to_toml())?,
                        None => println!("# {label}\n{}", s.to_toml()),
                    }
                }
                Ok(())
            }
        },
    }
}

/// Scenarios selected by `--config` or `--preset`, with overrides applied.
fn scenarios(c: &Common) -> anyhow::Result<Vec<(String, Scenario)>> {
    let mut runs = match (&c.config, &c.preset) {
        (Some(p), None) => {
            let s = Scenario::load(p)?;
            vec![(s.name.clone(), s)]
        }
        (None, Some(name)) => presets::preset(name)?.runs,
        _ => bail!(tpcsim::Error::Validation("give exactly one of --config or --preset".into())),
    };
    let policy = c.policy.as_deref().map(str::parse::<PolicyKind>).transpose()?;
    for (_, s) in &mut runs {
        if let Some(seed) = c.seed {
            s.seed = seed;
        }
        if let Some(p) = policy {
            s.policy = p;
        }
        if let Some(a) = c.atom_duration_ms {
            s.atomizer.atom_duration_ms = a;
        }
        if let Some(d) = c.disable_factor {
            s.atomizer.disable_factor = d;
        }
    }
    if policy.is_some() {
        runs.dedup_by(|a, b| a.1 == b.1);
    }
    Ok(runs)
}

fn run_all(runs: &[(String, Scenario)]) -> anyhow::Result<Vec<RunOutput>> {
    let alone = sim::alone_throughputs(&runs[0].1)?;
    let shared = runs.iter().all(|(_, s)| sim::same_workload(&runs[0].1, s));
    runs.par_iter()
        .map(|(_, s)| {
            let out = if shared {
                sim::run_with_normalizers(s, &alone)?
            } else {
                sim::run_scenario(s)?
            };
            Ok(out)
        })
        .collect()
}

fn run(c: &Common) -> anyhow::Result<()> {
    let runs = scenarios(c)?;
    let outputs = run_all(&runs)?;
    let rows: Vec<ComparisonRow> = runs
        .iter()
        .zip(&outputs)
        .map(|((label, _), o)| ComparisonRow::from_report(label, &o.report))
        .collect();
    print!("{}", table(&rows));
    if let Some(dir) = &c.out {
        for ((label, _), o) in runs.iter().zip(&outputs) {
            write_outputs(dir, &sanitize(label), o)?;
        }
    }
    Ok(())
}

fn write_outputs(dir: &Path, stem: &str, o: &RunOutput) -> anyhow::Result<()> {
    write_file(&dir.join(format!("{stem}.report.json")), &o.report.to_json())?;
    write_file(&dir.join(format!("{stem}.requests.jsonl")), &jsonl(&o.sim.requests)?)?;
    write_file(&dir.join(format!("{stem}.predictions.jsonl")), &jsonl(&o.sim.extras.prediction_log)?)?;
    Ok(())
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> anyhow::Result<String> {
    let mut s = String::new();
    for i in items {
        s.push_str(&serde_json::to_string(i)?);
        s.push('\n');
    }
    Ok(s)
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

fn table(rows: &[ComparisonRow]) -> String {
    let mut s = format!("{:<24} {:<14} {:>8} {:>10} {:>10}  per-app p99 ms / normalized\n", "run", "policy", "slo", "agg_tput", "rps");
    for r in rows {
        let apps: Vec<String> = r
            .per_app
            .iter()
            .map(|(n, p99, norm)| format!("{n}={}/{}", opt(*p99, 2), opt(*norm, 2)))
            .collect();
        s.push_str(&format!(
            "{:<24} {:<14} {:>8} {:>10} {:>10.1}  {}\n",
            r.label,
            r.policy,
            opt(r.slo_attainment, 3),
            opt(r.aggregate_normalized_throughput, 3),
            r.total_throughput_rps,
            apps.join(" ")
        ));
    }
    s
}

fn sweep(c: &Common, slip: &[f64], atoms: &[f64], quotas: &[String]) -> anyhow::Result<()> {
    let runs = scenarios(c)?;
    let base = match runs.as_slice() {
        [(_, s)] => s.clone(),
        _ => runs.last().map(|r| r.1.clone()).ok_or_else(|| anyhow!("no scenario"))?,
    };
    let mut quota_axes: Vec<(String, Vec<u32>)> = Vec::new();
    for q in quotas {
        let (app, list) = q
            .split_once('=')
            .ok_or_else(|| tpcsim::Error::Validation(format!("quota sweep '{q}' is not APP=Q1,Q2")))?;
        if !base.apps.iter().any(|a| a.name == app) {
            bail!(tpcsim::Error::Validation(format!("no app named '{app}'")));
        }
        let values = list
            .split(',')
            .map(|v| v.trim().parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| tpcsim::Error::Validation(format!("quota '{q}': {e}")))?;
        quota_axes.push((app.to_string(), values));
    }
    let slip: Vec<Option<f64>> = if slip.is_empty() { vec![None] } else { slip.iter().copied().map(Some).collect() };
    let atoms: Vec<Option<f64>> = if atoms.is_empty() { vec![None] } else { atoms.iter().copied().map(Some).collect() };

    let mut points: Vec<(Vec<String>, Scenario)> = vec![(Vec::new(), base.clone())];
    let mut header = Vec::new();
    let mut expand = |name: String, vals: Vec<(String, Box<dyn Fn(&mut Scenario)>)>| {
        header.push(name);
        points = points
            .iter()
            .flat_map(|(labels, s)| {
                vals.iter().map(move |(v, f)| {
                    let mut s = s.clone();
                    f(&mut s);
                    let mut l = labels.clone();
                    l.push(v.clone());
                    (l, s)
                })
            })
            .collect();
    };
    expand(
        "slip_k".into(),
        slip.iter()
            .map(|&k| {
                let f: Box<dyn Fn(&mut Scenario)> = Box::new(move |s: &mut Scenario| {
                    if let Some(k) = k {
                        s.rightsizer.slip_k = k;
                    }
                });
                (k.map_or("-".into(), |k| k.to_string()), f)
            })
            .collect(),
    );
    expand(
        "atom_duration_ms".into(),
        atoms
            .iter()
            .map(|&a| {
                let f: Box<dyn Fn(&mut Scenario)> = Box::new(move |s: &mut Scenario| {
                    if let Some(a) = a {
                        s.atomizer.atom_duration_ms = a;
                    }
                });
                (a.map_or("-".into(), |a| a.to_string()), f)
            })
            .collect(),
    );
    for (app, values) in quota_axes {
        expand(
            format!("quota_{app}"),
            values
                .into_iter()
                .map(|q| {
                    let app = app.clone();
                    let f: Box<dyn Fn(&mut Scenario)> = Box::new(move |s: &mut Scenario| {
                        if let Some(a) = s.apps.iter_mut().find(|a| a.name == app) {
                            a.tpc_quota = q;
                        }
                    });
                    (q.to_string(), f)
                })
                .collect(),
        );
    }

    let reports: Vec<RunReport> = points
        .par_iter()
        .map(|(_, s)| sim::run_scenario(s).map(|o| o.report))
        .collect::<tpcsim::Result<_>>()?;
    let mut csv = header.join(",");
    csv.push_str(",slo_attainment,aggregate_normalized_throughput,total_rps,utilization,allocated_tpc_ms,energy_j");
    for a in &base.apps {
        csv.push_str(&format!(",{}_p99_ms", a.name));
    }
    csv.push('\n');
    for ((labels, _), r) in points.iter().zip(&reports) {
        csv.push_str(&labels.join(","));
        csv.push_str(&format!(
            ",{},{},{:.3},{:.4},{:.3},{:.4}",
            opt(r.summary.slo_attainment, 4),
            opt(r.summary.aggregate_normalized_throughput, 4),
            r.summary.total_throughput_rps,
            r.device.utilization,
            r.device.allocated_tpc_ms,
            r.device.energy_j
        ));
        for a in &r.apps {
            csv.push_str(&format!(",{}", opt(a.p99_ms, 3)));
        }
        csv.push('\n');
    }
    match &c.out {
        Some(dir) => write_file(&dir.join("sweep.csv"), &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn fit_report(c: &Common) -> anyhow::Result<()> {
    let runs = scenarios(c)?;
    let mut text = String::new();
    for (label, mut s) in runs {
        s.policy = PolicyKind::FullSystem;
        s.rightsizer.enabled = true;
        let out = sim::run_scenario(&s)?;
        text.push_str(&format!("== {label}\n"));
        text.push_str(&format!(
            "weighted R^2: {}\n",
            opt(out.report.rightsizing.as_ref().and_then(|r| r.weighted_r_squared), 4)
        ));
        text.push_str(&format!("{:>6} {:>4} {:>5} {:>6} {:>5} {:>12} {:>12} {:>8}\n", "queue", "ord", "cap", "t_alloc", "t", "m_us", "b_us", "r2"));
        for k in out.report.rightsizing.iter().flat_map(|r| &r.kernels) {
            let (m, b, r2) = match &k.fit {
                Some(f) => {
                    let pts: Vec<(u32, f64)> = k.points.iter().map(|&(t, l)| (t, l * 1e3)).collect();
                    (Some(f.m / 1e3), Some(f.b / 1e3), r_squared(f, &pts))
                }
                None => (None, None, None),
            };
            text.push_str(&format!(
                "{:>6} {:>4} {:>5} {:>6} {:>5} {:>12} {:>12} {:>8}\n",
                k.queue.0,
                k.ordinal,
                k.cap,
                k.t_alloc,
                k.t_chosen,
                opt(m, 1),
                opt(b, 1),
                opt(r2, 4)
            ));
        }
        text.push_str("prediction accuracy per app (after the first batch, known operators):\n");
        let host_streams = stream_apps(&s);
        for (i, app) in s.apps.iter().enumerate() {
            let entries: Vec<_> = out
                .sim
                .extras
                .prediction_log
                .iter()
                .filter(|e| e.batch >= 1 && e.confidence != Confidence::Unknown)
                .filter(|e| host_streams.get(e.queue.0 as usize) == Some(&i))
                .collect();
            match misprediction_rate(entries, s.predictor.mispredict_threshold_us) {
                Ok(a) => text.push_str(&format!(
                    "  {:<12} n={:<7} mispredicted={:.4} p99_err_us={:.2}\n",
                    app.name, a.predictions, a.misprediction_rate, a.p99_abs_error_us
                )),
                Err(_) => text.push_str(&format!("  {:<12} no predictions\n", app.name)),
            }
        }
    }
    match &c.out {
        Some(dir) => write_file(&dir.join("fit-report.txt"), &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// App index of every stream, in creation order.
fn stream_apps(s: &Scenario) -> Vec<usize> {
    match sim::Simulation::new(s) {
        Ok(sim) => sim.host().streams.iter().map(|st| st.app.0 as usize).collect(),
        Err(_) => Vec::new(),
    }
}
