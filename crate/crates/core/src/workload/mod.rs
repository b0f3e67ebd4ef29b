//! Applications, request templates, arrival processes and traces.

mod app;
mod arrivals;
mod dist;
mod synth;
mod trace;

pub use app::{AppSpec, Arrival, ModelSource, PriorityClass, Slo};
pub use arrivals::{poisson_arrivals, PoissonProcess};
pub use dist::{Dist, DistKind};
pub use synth::{synth_model, KernelDesc, ModelTemplate, SynthParams};
pub use trace::{load_trace, parse_trace, write_trace, RecordKind, Trace, TraceRecord, TraceRequest, TRACE_SCHEMA};
