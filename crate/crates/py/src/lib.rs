//! Python bindings: build experiments, run them and read back iteration
//! statistics and throughput traces.

use std::collections::BTreeMap;
use std::path::PathBuf;

use fabsim_core::cc::{CcPolicy, DcqcnParams, FlowGranularParams, IbCcParams};
use fabsim_core::collectives::CollectiveKind;
use fabsim_core::config::{parse_config, parse_config_str, Config};
use fabsim_core::harness::{
    compute_ratio, run_baseline, run_congested, victim_throughput_trace, AggressorPattern, BurstLength, ExperimentSpec,
    InjectionMode, RunRecord,
};
use fabsim_core::lb::{AdaptiveParams, LbPolicy};
use fabsim_core::report::ThroughputTrace;
use fabsim_core::topology::Preset;
use fabsim_core::units::{parse_bytes, parse_duration, SimTime};
use fabsim_core::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::InvalidParameter(_) | Error::IncompleteGrid(_) => PyValueError::new_err(e.to_string()),
        Error::Io(_) | Error::Manifest(_) => PyIOError::new_err(e.to_string()),
        Error::Internal(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

fn bad(msg: String) -> PyErr {
    PyValueError::new_err(msg)
}

/// One victim/aggressor experiment.
#[pyclass(name = "Experiment", module = "fabsim", skip_from_py_object)]
#[derive(Clone)]
struct PyExperiment {
    spec: ExperimentSpec,
}

#[pymethods]
impl PyExperiment {
    /// `preset` is a fabric name from `presets()`; `victim` is
    /// "allgather" or "alltoall".
    #[new]
    #[pyo3(signature = (preset, nodes, victim = "allgather", vector_bytes = 32768))]
    fn new(preset: &str, nodes: usize, victim: &str, vector_bytes: u64) -> PyResult<Self> {
        let p = Preset::from_name(preset).ok_or_else(|| bad(format!("unknown preset `{preset}`")))?;
        let v = CollectiveKind::from_name(victim).ok_or_else(|| bad(format!("unknown collective `{victim}`")))?;
        let spec = ExperimentSpec::new(p, nodes, v, vec![vector_bytes]);
        spec.validate().map_err(py_err)?;
        Ok(PyExperiment { spec })
    }

    /// Reads an experiment config file.
    #[staticmethod]
    fn from_config(path: PathBuf) -> PyResult<Self> {
        Ok(PyExperiment {
            spec: parse_config(&path).map_err(py_err)?.spec,
        })
    }

    #[staticmethod]
    fn from_config_str(text: &str) -> PyResult<Self> {
        Ok(PyExperiment {
            spec: parse_config_str(text).map_err(py_err)?.spec,
        })
    }

    /// Normalized config text.
    fn dump(&self) -> String {
        Config::from_spec(self.spec.clone()).dump()
    }

    #[getter]
    fn preset(&self) -> &'static str {
        self.spec.fabric.preset.name()
    }

    #[getter]
    fn nodes(&self) -> usize {
        self.spec.nodes
    }

    #[setter]
    fn set_nodes(&mut self, n: usize) {
        self.spec.nodes = n;
    }

    #[getter]
    fn victim(&self) -> &'static str {
        self.spec.victim.name()
    }

    #[getter]
    fn vector_bytes(&self) -> u64 {
        self.spec.vector()
    }

    #[setter]
    fn set_vector_bytes(&mut self, b: u64) {
        self.spec.vectors = vec![b];
    }

    #[getter]
    fn aggressor(&self) -> &'static str {
        self.spec.aggressor.name()
    }

    #[setter]
    fn set_aggressor(&mut self, name: &str) -> PyResult<()> {
        self.spec.aggressor = AggressorPattern::from_name(name).ok_or_else(|| bad(format!("unknown aggressor `{name}`")))?;
        Ok(())
    }

    /// Aggressor message size; `None` means the largest victim vector.
    #[getter]
    fn aggressor_bytes(&self) -> Option<u64> {
        self.spec.aggressor_bytes
    }

    #[setter]
    fn set_aggressor_bytes(&mut self, b: Option<u64>) {
        self.spec.aggressor_bytes = b;
    }

    #[getter]
    fn iterations(&self) -> u32 {
        self.spec.iterations
    }

    #[setter]
    fn set_iterations(&mut self, n: u32) {
        self.spec.iterations = n;
    }

    #[getter]
    fn warmup(&self) -> u32 {
        self.spec.warmup
    }

    #[setter]
    fn set_warmup(&mut self, n: u32) {
        self.spec.warmup = n;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.spec.seed
    }

    #[setter]
    fn set_seed(&mut self, s: u64) {
        self.spec.seed = s;
    }

    #[getter]
    fn cc(&self) -> &'static str {
        self.spec.cc.name()
    }

    #[getter]
    fn lb(&self) -> &'static str {
        self.spec.lb.name()
    }

    #[getter]
    fn injection(&self) -> &'static str {
        self.spec.injection.name()
    }

    /// Congestion control with default parameters. DCQCN also takes a
    /// parameter preset: "published", "stable" or "unstable".
    #[pyo3(signature = (name, preset = None))]
    fn set_cc(&mut self, name: &str, preset: Option<&str>) -> PyResult<()> {
        if preset.is_some() && name != "dcqcn" {
            return Err(bad(format!("cc `{name}` has no parameter presets")));
        }
        self.spec.cc = match name {
            "none" => CcPolicy::None,
            "dcqcn" => CcPolicy::Dcqcn(match preset.unwrap_or("published") {
                "published" => DcqcnParams::published(),
                "stable" => DcqcnParams::stable(),
                "unstable" => DcqcnParams::unstable(),
                other => return Err(bad(format!("unknown dcqcn preset `{other}`"))),
            }),
            "ib" => CcPolicy::Ib(IbCcParams::default()),
            "flow_granular" => CcPolicy::FlowGranular(FlowGranularParams::default()),
            other => return Err(bad(format!("unknown cc `{other}`"))),
        };
        Ok(())
    }

    #[pyo3(signature = (name, seed = 0))]
    fn set_lb(&mut self, name: &str, seed: u64) -> PyResult<()> {
        self.spec.lb = match name {
            "deterministic" => LbPolicy::Deterministic,
            "ecmp" => LbPolicy::Ecmp { seed },
            "adaptive" => LbPolicy::Adaptive(AdaptiveParams::default()),
            "nslb" => LbPolicy::Nslb,
            other => return Err(bad(format!("unknown lb `{other}`"))),
        };
        Ok(())
    }

    fn steady(&mut self) {
        self.spec.injection = InjectionMode::Steady;
    }

    /// Bursty injection: `burst` is a collective count such as "4c" or a
    /// duration such as "500us"; `gap` is a duration.
    fn bursty(&mut self, burst: &str, gap: &str) -> PyResult<()> {
        let b = match burst.strip_suffix('c').and_then(|k| k.parse().ok()) {
            Some(k) => BurstLength::Collectives(k),
            None => BurstLength::Duration(parse_duration(burst).ok_or_else(|| bad(format!("bad burst `{burst}`")))?),
        };
        let g = parse_duration(gap).ok_or_else(|| bad(format!("bad idle gap `{gap}`")))?;
        self.spec.injection = InjectionMode::Bursty { burst: b, gap: g };
        Ok(())
    }

    fn validate(&self) -> PyResult<()> {
        self.spec.validate().map_err(py_err)
    }

    /// Victim alone.
    fn baseline(&self, py: Python<'_>) -> PyResult<PyRunRecord> {
        let spec = self.spec.clone();
        let r = py.detach(move || run_baseline(&spec)).map_err(py_err)?;
        Ok(PyRunRecord { r })
    }

    /// Victim alongside the aggressor.
    fn congested(&self, py: Python<'_>) -> PyResult<PyRunRecord> {
        let spec = self.spec.clone();
        let r = py.detach(move || run_congested(&spec)).map_err(py_err)?;
        Ok(PyRunRecord { r })
    }

    /// Delivered throughput of a victim rank over a baseline run, binned
    /// at `bin` (a duration such as "20us").
    #[pyo3(signature = (bin, rank = 0))]
    fn trace(&self, py: Python<'_>, bin: &str, rank: usize) -> PyResult<PyTrace> {
        let b = parse_duration(bin).filter(|d| *d > SimTime::ZERO).ok_or_else(|| bad(format!("bad bin `{bin}`")))?;
        let spec = self.spec.clone();
        let t = py.detach(move || victim_throughput_trace(&spec, b, rank)).map_err(py_err)?;
        Ok(PyTrace { t })
    }

    fn __repr__(&self) -> String {
        format!(
            "Experiment({}, nodes={}, victim={} {}B, aggressor={}, cc={}, lb={})",
            self.preset(),
            self.spec.nodes,
            self.victim(),
            self.spec.vector(),
            self.aggressor(),
            self.cc(),
            self.lb()
        )
    }
}

/// Victim iteration statistics of one run.
#[pyclass(name = "RunRecord", module = "fabsim", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyRunRecord {
    r: RunRecord,
}

#[pymethods]
impl PyRunRecord {
    #[getter]
    fn mean_ns(&self) -> f64 {
        self.r.mean_ns
    }

    #[getter]
    fn stdev_ns(&self) -> f64 {
        self.r.stdev_ns
    }

    #[getter]
    fn p50_ns(&self) -> f64 {
        self.r.p50_ns
    }

    #[getter]
    fn p99_ns(&self) -> f64 {
        self.r.p99_ns
    }

    #[getter]
    fn retained(&self) -> usize {
        self.r.retained()
    }

    /// Retained iteration times in nanoseconds.
    #[getter]
    fn samples_ns(&self) -> Vec<f64> {
        self.r.samples.iter().map(|&p| p as f64 / 1e3).collect()
    }

    #[getter]
    fn aggressor_active(&self) -> Option<f64> {
        self.r.aggressor_active
    }

    /// Engine counters: bytes injected and delivered, marks, pauses, ...
    #[getter]
    fn stats(&self) -> BTreeMap<&'static str, u64> {
        let s = &self.r.stats;
        BTreeMap::from([
            ("events", s.events),
            ("injected_bytes", s.injected_bytes),
            ("delivered_bytes", s.delivered_bytes),
            ("capacity_violations", s.capacity_violations),
            ("order_violations", s.order_violations),
            ("marks", s.marks),
            ("cnps", s.cnps),
            ("becns", s.becns),
            ("throttles", s.throttles),
            ("pauses", s.pauses),
            ("reroutes", s.reroutes),
            ("flows_completed", s.flows_completed),
        ])
    }

    fn __repr__(&self) -> String {
        format!("RunRecord(mean_ns={:.1}, p99_ns={:.1}, retained={})", self.r.mean_ns, self.r.p99_ns, self.r.retained())
    }
}

#[pyclass(name = "Trace", module = "fabsim", frozen)]
struct PyTrace {
    t: ThroughputTrace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn times_ns(&self) -> Vec<f64> {
        self.t.samples.iter().map(|s| s.0).collect()
    }

    #[getter]
    fn rates_bps(&self) -> Vec<f64> {
        self.t.samples.iter().map(|s| s.1).collect()
    }

    #[getter]
    fn capacity_bps(&self) -> Option<f64> {
        self.t.capacity_bps
    }

    /// mean_bps, cov, peak_bps, trough_bps, peak_to_trough and cycles.
    fn stats(&self) -> PyResult<BTreeMap<&'static str, f64>> {
        let s = self.t.stats().map_err(py_err)?;
        Ok(BTreeMap::from([
            ("mean_bps", s.mean_bps),
            ("cov", s.cov),
            ("peak_bps", s.peak_bps),
            ("trough_bps", s.trough_bps),
            ("peak_to_trough", s.peak_to_trough),
            ("cycles", s.cycles as f64),
        ]))
    }

    fn to_csv(&self) -> String {
        self.t.to_csv()
    }

    fn __len__(&self) -> usize {
        self.t.samples.len()
    }
}

/// Baseline over congested mean iteration time.
#[pyfunction]
fn ratio(baseline: &PyRunRecord, congested: &PyRunRecord) -> PyResult<f64> {
    compute_ratio(&baseline.r, &congested.r).map_err(py_err)
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    Preset::ALL.iter().map(|p| p.name()).collect()
}

/// Byte count of a size string such as "32KiB".
#[pyfunction]
fn bytes(text: &str) -> PyResult<u64> {
    parse_bytes(text).ok_or_else(|| bad(format!("bad size `{text}`")))
}

#[pymodule]
fn fabsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExperiment>()?;
    m.add_class::<PyRunRecord>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(ratio, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(bytes, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
