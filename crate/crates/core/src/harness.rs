//! Victim/aggressor experiments: allocation, baseline and congested runs,
//! ratios and parameter sweeps.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use crate::cc::{CcPolicy, DcqcnParams, FlowGranularParams, IbCcParams};
use crate::collectives::{
    incast, linear_alltoall, ring_allgather, schedule_to_flows, CollectiveKind, CollectiveSchedule, FlowPlan,
    PlanTracker, DEFAULT_ALLTOALL_WINDOW,
};
use crate::engine::{Driver, Engine, EngineConfig, EngineStats, FlowControl, FlowRecord, FlowSpec, PfcThresholds, RunLimit};
use crate::error::{internal, invalid, Error, Result};
use crate::lb::{mix64, AdaptiveParams, LbPolicy};
use crate::report::{ResultRow, ThroughputTrace};
use crate::topology::{CustomTopology, Preset, Topology, TopologyShape, DEFAULT_LINK_LATENCY};
use crate::units::{fmt_duration, SimTime};

pub const DEFAULT_ITERATIONS: u32 = 1000;
pub const DEFAULT_WARMUP: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggressorPattern {
    AlltoAll,
    Incast,
}

impl AggressorPattern {
    pub fn name(self) -> &'static str {
        match self {
            AggressorPattern::AlltoAll => "alltoall",
            AggressorPattern::Incast => "incast",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "alltoall" => Some(AggressorPattern::AlltoAll),
            "incast" => Some(AggressorPattern::Incast),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BurstLength {
    /// Consecutive aggressor collectives per burst.
    Collectives(u32),
    /// Wall-clock burst length; the collective running at expiry finishes.
    Duration(SimTime),
}

impl fmt::Display for BurstLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BurstLength::Collectives(k) => write!(f, "{k}c"),
            BurstLength::Duration(d) => f.write_str(&fmt_duration(*d)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InjectionMode {
    Steady,
    Bursty { burst: BurstLength, gap: SimTime },
}

impl InjectionMode {
    pub fn name(&self) -> &'static str {
        match self {
            InjectionMode::Steady => "steady",
            InjectionMode::Bursty { .. } => "bursty",
        }
    }
}

/// Fabric selection.
#[derive(Debug, Clone, PartialEq)]
pub struct FabricSpec {
    pub preset: Preset,
    pub rate_bps: Option<u64>,
    /// Leaf-spine uplink rate override.
    pub uplink_rate_bps: Option<u64>,
    /// Fat-tree taper override.
    pub taper: Option<f64>,
    pub latency: SimTime,
    /// Replaces the preset's fabric; the preset still supplies defaults.
    pub custom: Option<CustomTopology>,
}

impl FabricSpec {
    pub fn preset(preset: Preset) -> Self {
        FabricSpec {
            preset,
            rate_bps: None,
            uplink_rate_bps: None,
            taper: None,
            latency: DEFAULT_LINK_LATENCY,
            custom: None,
        }
    }

    pub fn rate(&self) -> u64 {
        self.rate_bps.unwrap_or(self.preset.default_rate())
    }

    pub fn build(&self, nodes: usize) -> Result<Topology> {
        if let Some(c) = &self.custom {
            let t = c.build()?;
            if t.num_endpoints() < nodes {
                return invalid(format!("custom topology has {} endpoints, need {nodes}", t.num_endpoints()));
            }
            return Ok(t);
        }
        let mut shape = self.preset.shape(nodes, self.rate(), self.latency)?;
        match &mut shape {
            TopologyShape::LeafSpine(ls) => {
                if let Some(u) = self.uplink_rate_bps {
                    ls.uplink_rate_bps = Some(u);
                }
            }
            TopologyShape::FatTree(ft) => {
                if let Some(t) = self.taper {
                    ft.taper = t;
                }
            }
            _ => {}
        }
        shape.build()
    }
}

/// Link-layer, congestion-control and routing defaults of each preset.
pub struct PresetDefaults {
    pub flow_control: FlowControl,
    pub cc: CcPolicy,
    pub lb: LbPolicy,
    pub host_rx_fraction: Option<f64>,
}

pub fn preset_defaults(p: Preset) -> PresetDefaults {
    let pfc = FlowControl::Pfc(PfcThresholds::for_capacity(crate::engine::DEFAULT_BUFFER_CELLS));
    match p {
        Preset::HaicguSw => PresetDefaults {
            flow_control: pfc,
            cc: CcPolicy::Dcqcn(DcqcnParams::published()),
            lb: LbPolicy::Deterministic,
            host_rx_fraction: Some(0.9),
        },
        Preset::NanjingLs => PresetDefaults {
            flow_control: pfc,
            cc: CcPolicy::Dcqcn(DcqcnParams::published()),
            lb: LbPolicy::Nslb,
            host_rx_fraction: None,
        },
        Preset::Cresco8Ft => PresetDefaults {
            flow_control: FlowControl::Credit,
            cc: CcPolicy::Ib(IbCcParams::default()),
            lb: LbPolicy::Deterministic,
            host_rx_fraction: None,
        },
        Preset::LeonardoDfp => PresetDefaults {
            flow_control: FlowControl::Credit,
            cc: CcPolicy::Ib(IbCcParams::default()),
            lb: LbPolicy::Adaptive(AdaptiveParams::default()),
            host_rx_fraction: None,
        },
        Preset::LumiDf => PresetDefaults {
            flow_control: FlowControl::Credit,
            cc: CcPolicy::FlowGranular(FlowGranularParams::default()),
            lb: LbPolicy::Adaptive(AdaptiveParams::default()),
            host_rx_fraction: None,
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub fabric: FabricSpec,
    pub nodes: usize,
    pub victim: CollectiveKind,
    /// Victim vector sizes. Single runs use the first entry.
    pub vectors: Vec<u64>,
    pub aggressor: AggressorPattern,
    /// Aggressor message size; defaults to the largest victim vector.
    pub aggressor_bytes: Option<u64>,
    pub injection: InjectionMode,
    pub cc: CcPolicy,
    pub lb: LbPolicy,
    pub flow_control: FlowControl,
    pub cell_bytes: u64,
    pub buffer_cells: Option<u32>,
    pub host_rx_fraction: Option<f64>,
    pub alltoall_window: usize,
    pub iterations: u32,
    pub warmup: u32,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn new(preset: Preset, nodes: usize, victim: CollectiveKind, vectors: Vec<u64>) -> Self {
        let d = preset_defaults(preset);
        ExperimentSpec {
            fabric: FabricSpec::preset(preset),
            nodes,
            victim,
            vectors,
            aggressor: AggressorPattern::AlltoAll,
            aggressor_bytes: None,
            injection: InjectionMode::Steady,
            cc: d.cc,
            lb: d.lb,
            flow_control: d.flow_control,
            cell_bytes: crate::engine::DEFAULT_CELL_BYTES,
            buffer_cells: Some(crate::engine::DEFAULT_BUFFER_CELLS),
            host_rx_fraction: d.host_rx_fraction,
            alltoall_window: DEFAULT_ALLTOALL_WINDOW,
            iterations: DEFAULT_ITERATIONS,
            warmup: DEFAULT_WARMUP,
            seed: 0,
        }
    }

    pub fn vector(&self) -> u64 {
        self.vectors[0]
    }

    pub fn aggressor_size(&self) -> u64 {
        self.aggressor_bytes
            .unwrap_or_else(|| self.vectors.iter().copied().max().unwrap_or(0))
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 4 || self.nodes % 2 != 0 {
            return invalid(format!("node count {} must be even and at least 4", self.nodes));
        }
        if self.vectors.is_empty() {
            return invalid("vector list is empty");
        }
        if self.vectors.contains(&0) {
            return invalid("vector sizes must be positive");
        }
        if self.warmup >= self.iterations {
            return invalid(format!(
                "warmup {} must be below iterations {}",
                self.warmup, self.iterations
            ));
        }
        if self.victim == CollectiveKind::Incast {
            return invalid("victim collective must be allgather or alltoall");
        }
        if let Some(f) = self.host_rx_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return invalid("host_rx fraction must be in (0, 1]");
            }
        }
        if self.alltoall_window == 0 {
            return invalid("alltoall window must be positive");
        }
        if let InjectionMode::Bursty { burst, .. } = self.injection {
            match burst {
                BurstLength::Collectives(0) => return invalid("burst length must be positive"),
                BurstLength::Duration(d) if d == SimTime::ZERO => return invalid("burst length must be positive"),
                _ => {}
            }
        }
        if self.aggressor_size() == 0 {
            return invalid("aggressor bytes must be positive");
        }
        Ok(())
    }

    pub fn engine_config(&self, seed: u64) -> EngineConfig {
        let rate = self.fabric.rate();
        EngineConfig {
            cell_bytes: self.cell_bytes,
            buffer_cells: self.buffer_cells,
            flow_control: self.flow_control,
            cc: self.cc,
            lb: self.lb,
            host_rx_rate_bps: self.host_rx_fraction.map(|f| (rate as f64 * f).round() as u64),
            seed,
            trace: false,
            probe_bin: None,
        }
    }
}

/// Splits nodes alternately, starting with a victim.
pub fn interleave_allocation<T: Clone>(nodes: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if nodes.len() < 2 || nodes.len() % 2 != 0 {
        return invalid(format!("allocation of {} nodes must be even and at least 2", nodes.len()));
    }
    let victims = nodes.iter().step_by(2).cloned().collect();
    let aggressors = nodes.iter().skip(1).step_by(2).cloned().collect();
    Ok((victims, aggressors))
}

/// Victim iteration times over the retained iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub iterations: u32,
    pub warmup: u32,
    /// Retained iteration times in picoseconds.
    pub samples: Vec<u64>,
    pub mean_ns: f64,
    pub stdev_ns: f64,
    pub p50_ns: f64,
    pub p99_ns: f64,
    /// Fraction of the measurement window with an aggressor collective in
    /// progress.
    pub aggressor_active: Option<f64>,
    pub stats: EngineStats,
}

impl RunRecord {
    pub fn from_samples(iterations: u32, warmup: u32, all: &[u64]) -> Result<Self> {
        if all.len() != iterations as usize {
            return internal(format!("expected {iterations} samples, have {}", all.len()));
        }
        let samples = all[warmup as usize..].to_vec();
        let ns: Vec<f64> = samples.iter().map(|&p| p as f64 / 1e3).collect();
        let n = ns.len() as f64;
        let mean = ns.iter().sum::<f64>() / n;
        let var = ns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = ns.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        Ok(RunRecord {
            iterations,
            warmup,
            samples,
            mean_ns: mean,
            stdev_ns: var.sqrt(),
            p50_ns: percentile(&sorted, 50.0),
            p99_ns: percentile(&sorted, 99.0),
            aggressor_active: None,
            stats: EngineStats::default(),
        })
    }

    pub fn retained(&self) -> usize {
        self.samples.len()
    }
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn compute_ratio(baseline: &RunRecord, congested: &RunRecord) -> Result<f64> {
    if baseline.retained() == 0 || congested.retained() == 0 {
        return invalid("ratio needs retained samples in both records");
    }
    if baseline.mean_ns <= 0.0 || congested.mean_ns <= 0.0 {
        return internal("zero mean iteration time");
    }
    Ok(baseline.mean_ns / congested.mean_ns)
}

const AGGRESSOR_BIT: u64 = 1 << 63;
const BURST_TIMER: u64 = 1;

struct Job {
    schedule: CollectiveSchedule,
    participants: Vec<usize>,
    plan: FlowPlan,
    tracker: PlanTracker,
    started: SimTime,
    tag_base: u64,
}

impl Job {
    fn new(schedule: CollectiveSchedule, participants: Vec<usize>, topo: &Topology, tag_base: u64) -> Result<Self> {
        let plan = schedule_to_flows(&schedule, topo, &participants)?;
        let tracker = PlanTracker::new(&plan);
        Ok(Job {
            schedule,
            participants,
            plan,
            tracker,
            started: SimTime::ZERO,
            tag_base,
        })
    }

    fn launch(&mut self, eng: &mut Engine) -> Result<()> {
        self.tracker = PlanTracker::new(&self.plan);
        self.started = eng.now();
        let ready = self.tracker.initial();
        self.inject(eng, &ready)
    }

    fn inject(&self, eng: &mut Engine, idx: &[usize]) -> Result<()> {
        for &i in idx {
            let f = &self.plan.flows[i];
            eng.inject_flow(FlowSpec::new(f.src, f.dst, f.bytes, eng.now()).tag(self.tag_base | i as u64))?;
        }
        Ok(())
    }

    fn empty(&self) -> bool {
        self.plan.flows.is_empty()
    }
}

struct Harness {
    victim: Job,
    iterations: u32,
    samples: Vec<u64>,
    aggressor: Option<Job>,
    mode: InjectionMode,
    stopped: bool,
    burst_start: SimTime,
    burst_count: u32,
    busy: Vec<(SimTime, SimTime)>,
    iter_bounds: Vec<(SimTime, SimTime)>,
    error: Option<Error>,
}

impl Harness {
    fn fail(&mut self, r: Result<()>) {
        if let Err(e) = r {
            self.error.get_or_insert(e);
            self.stopped = true;
        }
    }

    fn start_aggressor(&mut self, eng: &mut Engine) {
        if let Some(a) = self.aggressor.as_mut() {
            let r = a.launch(eng);
            self.fail(r);
        }
    }

    fn start(&mut self, eng: &mut Engine) {
        let r = self.victim.launch(eng);
        self.fail(r);
        self.burst_start = eng.now();
        self.burst_count = 0;
        self.start_aggressor(eng);
    }
}

impl Driver for Harness {
    fn on_flow_complete(&mut self, eng: &mut Engine, rec: FlowRecord) {
        let now = eng.now();
        if rec.tag & AGGRESSOR_BIT == 0 {
            let idx = rec.tag as usize;
            let ready = self.victim.tracker.complete(idx);
            let r = self.victim.inject(eng, &ready);
            self.fail(r);
            if self.victim.tracker.done() {
                self.samples.push(now.ps() - self.victim.started.ps());
                self.iter_bounds.push((self.victim.started, now));
                if (self.samples.len() as u32) < self.iterations {
                    let r = self.victim.launch(eng);
                    self.fail(r);
                } else {
                    self.stopped = true;
                }
            }
            return;
        }
        let Some(a) = self.aggressor.as_mut() else { return };
        let idx = (rec.tag & !AGGRESSOR_BIT) as usize;
        let ready = a.tracker.complete(idx);
        let r = a.inject(eng, &ready);
        let done = a.tracker.done();
        let started = a.started;
        self.fail(r);
        if !done {
            return;
        }
        self.busy.push((started, now));
        if self.stopped {
            return;
        }
        match self.mode {
            InjectionMode::Steady => self.start_aggressor(eng),
            InjectionMode::Bursty { burst, gap } => {
                self.burst_count += 1;
                let more = match burst {
                    BurstLength::Collectives(k) => self.burst_count < k,
                    BurstLength::Duration(d) => now.saturating_sub(self.burst_start) < d,
                };
                if more {
                    self.start_aggressor(eng);
                } else if gap != SimTime::MAX {
                    let r = eng.schedule_timer(now + gap, BURST_TIMER);
                    self.fail(r);
                }
            }
        }
    }

    fn on_timer(&mut self, eng: &mut Engine, token: u64) {
        if token == BURST_TIMER && !self.stopped {
            self.burst_start = eng.now();
            self.burst_count = 0;
            self.start_aggressor(eng);
        }
    }
}

fn victim_schedule(spec: &ExperimentSpec, n: usize) -> Result<CollectiveSchedule> {
    match spec.victim {
        CollectiveKind::AllGather => ring_allgather(n, spec.vector()),
        CollectiveKind::AlltoAll => linear_alltoall(n, spec.vector(), spec.alltoall_window),
        CollectiveKind::Incast => invalid("incast is not a victim collective"),
    }
}

fn aggressor_schedule(spec: &ExperimentSpec, n: usize) -> Result<(CollectiveSchedule, Vec<usize>)> {
    let bytes = spec.aggressor_size();
    match spec.aggressor {
        AggressorPattern::AlltoAll => Ok((linear_alltoall(n, bytes.max(n as u64), spec.alltoall_window)?, (0..n).collect())),
        AggressorPattern::Incast => {
            let senders: Vec<usize> = (1..n).collect();
            Ok((incast(&senders, 0, bytes)?, (0..n).collect()))
        }
    }
}

/// Optional instrumentation of a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record delivered bytes per endpoint in bins of this width.
    pub probe_bin: Option<SimTime>,
}

/// Result of [`run_experiment`]: the record plus optional per-endpoint
/// delivered-bytes bins.
pub struct RunOutput {
    pub record: RunRecord,
    pub probes: Vec<Vec<u64>>,
    pub victims: Vec<usize>,
    pub aggressors: Vec<usize>,
    pub end: SimTime,
}

pub fn run_experiment(spec: &ExperimentSpec, congested: bool, seed: u64, opts: RunOptions) -> Result<RunOutput> {
    spec.validate()?;
    let topo = Arc::new(spec.fabric.build(spec.nodes)?);
    let endpoints: Vec<usize> = (0..spec.nodes).collect();
    let (victims, aggressors) = interleave_allocation(&endpoints)?;
    let mut cfg = spec.engine_config(seed);
    cfg.probe_bin = opts.probe_bin;
    let mut eng = Engine::new(topo.clone(), cfg)?;

    let vs = victim_schedule(spec, victims.len())?;
    let victim = Job::new(vs, victims.clone(), &topo, 0)?;
    if victim.empty() {
        return invalid("victim schedule is empty");
    }
    let aggressor = if congested {
        let (s, ranks) = aggressor_schedule(spec, aggressors.len())?;
        let parts = ranks.iter().map(|&r| aggressors[r]).collect();
        Some(Job::new(s, parts, &topo, AGGRESSOR_BIT)?)
    } else {
        None
    };
    let mut h = Harness {
        victim,
        iterations: spec.iterations,
        samples: Vec::with_capacity(spec.iterations as usize),
        aggressor,
        mode: spec.injection,
        stopped: false,
        burst_start: SimTime::ZERO,
        burst_count: 0,
        busy: Vec::new(),
        iter_bounds: Vec::new(),
        error: None,
    };
    h.start(&mut eng);
    let end = eng.run_until(RunLimit::Quiescence, &mut h)?;
    if let Some(e) = h.error.take() {
        return Err(e);
    }
    let mut record = RunRecord::from_samples(spec.iterations, spec.warmup, &h.samples)?;
    if congested {
        let (w0, _) = h.iter_bounds[spec.warmup as usize];
        let (_, w1) = *h.iter_bounds.last().unwrap();
        record.aggressor_active = Some(active_fraction(&h.busy, w0, w1));
    }
    record.stats = eng.stats().clone();
    let probes = (0..topo.num_endpoints()).map(|e| eng.probe(e).to_vec()).collect();
    let _ = &h.victim.schedule;
    let _ = &h.victim.participants;
    Ok(RunOutput {
        record,
        probes,
        victims,
        aggressors,
        end,
    })
}

fn active_fraction(busy: &[(SimTime, SimTime)], w0: SimTime, w1: SimTime) -> f64 {
    let span = w1.ps().saturating_sub(w0.ps());
    if span == 0 {
        return 0.0;
    }
    // busy intervals are sequential and disjoint
    let covered: u64 = busy
        .iter()
        .map(|&(a, b)| {
            let a = a.max(w0).ps();
            let b = b.min(w1).ps();
            b.saturating_sub(a)
        })
        .sum();
    covered as f64 / span as f64
}

pub fn run_baseline(spec: &ExperimentSpec) -> Result<RunRecord> {
    Ok(run_experiment(spec, false, spec.seed, RunOptions::default())?.record)
}

pub fn run_congested(spec: &ExperimentSpec) -> Result<RunRecord> {
    Ok(run_experiment(spec, true, spec.seed, RunOptions::default())?.record)
}

/// Delivered throughput of one victim endpoint over a baseline run.
pub fn victim_throughput_trace(spec: &ExperimentSpec, bin: SimTime, rank: usize) -> Result<ThroughputTrace> {
    let out = run_experiment(spec, false, spec.seed, RunOptions { probe_bin: Some(bin) })?;
    let ep = *out
        .victims
        .get(rank)
        .ok_or_else(|| Error::InvalidParameter(format!("no victim rank {rank}")))?;
    let topo = spec.fabric.build(spec.nodes)?;
    let cap = spec
        .engine_config(spec.seed)
        .host_rx_rate_bps
        .unwrap_or_else(|| topo.endpoint_rate(ep));
    Ok(ThroughputTrace::from_bins(format!("victim-rank-{rank}"), bin, &out.probes[ep], out.end).with_capacity(cap as f64))
}

/// Sweep axes; the grid is their Cartesian product.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxes {
    pub nodes: Vec<usize>,
    pub vectors: Vec<u64>,
    pub injections: Vec<InjectionMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellCoord {
    pub nodes: usize,
    pub vector: u64,
    pub injection: InjectionMode,
}

impl fmt::Display for CellCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "nodes={} vector={}", self.nodes, self.vector)?;
        if let InjectionMode::Bursty { burst, gap } = self.injection {
            write!(f, " burst={} gap={}", burst, fmt_duration(gap))?;
        }
        Ok(())
    }
}

impl SweepAxes {
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() || self.vectors.is_empty() || self.injections.is_empty() {
            return invalid("sweep axes must be nonempty");
        }
        Ok(())
    }

    /// Grid cells in row order: nodes, then vectors, then injection.
    pub fn cells(&self) -> Vec<CellCoord> {
        let mut out = Vec::new();
        for &nodes in &self.nodes {
            for &vector in &self.vectors {
                for &injection in &self.injections {
                    out.push(CellCoord {
                        nodes,
                        vector,
                        injection,
                    });
                }
            }
        }
        out
    }
}

fn hash_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(master), |h, p| mix64(h ^ mix64(*p)))
}

fn injection_code(m: &InjectionMode) -> u64 {
    match m {
        InjectionMode::Steady => 0,
        InjectionMode::Bursty { burst, gap } => {
            let b = match burst {
                BurstLength::Collectives(k) => 1 << 62 | *k as u64,
                BurstLength::Duration(d) => 2 << 62 | d.ps(),
            };
            mix64(b) ^ gap.ps()
        }
    }
}

pub fn baseline_seed(master: u64, nodes: usize, vector: u64) -> u64 {
    hash_seed(master, &[nodes as u64, vector])
}

pub fn cell_seed(master: u64, c: &CellCoord) -> u64 {
    hash_seed(master, &[c.nodes as u64, c.vector, injection_code(&c.injection)])
}

/// Experiment for one grid cell.
pub fn cell_spec(template: &ExperimentSpec, axes: &SweepAxes, c: &CellCoord) -> ExperimentSpec {
    let mut s = template.clone();
    s.nodes = c.nodes;
    s.vectors = vec![c.vector];
    if s.aggressor_bytes.is_none() {
        s.aggressor_bytes = axes.vectors.iter().copied().max();
    }
    s.injection = c.injection;
    s
}

pub fn row_for(spec: &ExperimentSpec, baseline: &RunRecord, congested: Option<&RunRecord>, seed: u64) -> ResultRow {
    let (burst, gap) = match spec.injection {
        InjectionMode::Steady => (None, None),
        InjectionMode::Bursty { burst, gap } => (Some(burst.to_string()), Some(fmt_duration(gap))),
    };
    let stat = congested.unwrap_or(baseline);
    ResultRow::new(
        spec.fabric.preset.name().to_string(),
        spec.nodes,
        spec.victim.name().to_string(),
        spec.vector(),
        spec.aggressor.name().to_string(),
        spec.injection.name().to_string(),
        burst,
        gap,
        spec.cc.name().to_string(),
        spec.lb.name().to_string(),
        baseline.mean_ns,
        congested.map(|c| c.mean_ns),
        stat.stdev_ns,
        stat.p50_ns,
        stat.p99_ns,
        seed,
    )
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub threads: usize,
    pub baseline_only: bool,
    /// Cell indices already completed in an earlier invocation.
    pub skip: BTreeSet<usize>,
    /// Run at most this many of the remaining cells.
    pub limit: Option<usize>,
}

impl SweepOptions {
    /// Thread count from `FABSIM_THREADS`, defaulting to available
    /// parallelism.
    pub fn threads_from_env() -> usize {
        std::env::var("FABSIM_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
    }
}

pub type CellResult = std::result::Result<ResultRow, String>;

/// Runs every grid cell not in `opts.skip`. `on_cell` is called from the
/// calling thread, in grid order, once per executed cell.
pub fn sweep(
    template: &ExperimentSpec,
    axes: &SweepAxes,
    opts: &SweepOptions,
    on_cell: &mut dyn FnMut(usize, &CellCoord, &CellResult) -> Result<()>,
) -> Result<Vec<(CellCoord, CellResult)>> {
    axes.validate()?;
    let cells = axes.cells();
    let todo: Vec<usize> = (0..cells.len())
        .filter(|i| !opts.skip.contains(i))
        .take(opts.limit.unwrap_or(usize::MAX))
        .collect();
    let master = template.seed;
    let threads = opts.threads.max(1).min(todo.len().max(1));

    // Baselines are shared by every cell with the same (nodes, vector).
    let baselines: Mutex<HashMap<(usize, u64), Arc<std::result::Result<RunRecord, String>>>> = Mutex::new(HashMap::new());
    let keys: Vec<(usize, u64)> = todo
        .iter()
        .map(|&i| (cells[i].nodes, cells[i].vector))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    parallel_for(threads, &keys, |&(nodes, vector)| {
        let c = CellCoord {
            nodes,
            vector,
            injection: InjectionMode::Steady,
        };
        let mut s = cell_spec(template, axes, &c);
        s.seed = baseline_seed(master, nodes, vector);
        let r = run_baseline(&s).map_err(|e| e.to_string());
        baselines.lock().unwrap().insert((nodes, vector), Arc::new(r));
    });
    let baselines = baselines.into_inner().unwrap();

    let (tx, rx) = mpsc::channel::<(usize, CellResult)>();
    let mut out = Vec::with_capacity(todo.len());
    let mut callback_err = None;
    std::thread::scope(|scope| {
        let work = Arc::new(Mutex::new(todo.clone().into_iter()));
        for _ in 0..threads {
            let tx = tx.clone();
            let work = work.clone();
            let cells = &cells;
            let baselines = &baselines;
            scope.spawn(move || loop {
                let next = work.lock().unwrap().next();
                let Some(i) = next else { break };
                let c = &cells[i];
                let res = run_cell(template, axes, c, master, opts.baseline_only, baselines);
                if tx.send((i, res)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // emit in grid order
        let mut pending: BTreeMap<usize, CellResult> = BTreeMap::new();
        let mut order = todo.iter().copied().peekable();
        for (i, res) in rx {
            pending.insert(i, res);
            while let Some(&next) = order.peek() {
                let Some(res) = pending.remove(&next) else { break };
                order.next();
                if callback_err.is_none() {
                    if let Err(e) = on_cell(next, &cells[next], &res) {
                        callback_err = Some(e);
                    }
                }
                out.push((cells[next], res));
            }
        }
    });
    if let Some(e) = callback_err {
        return Err(e);
    }
    Ok(out)
}

fn run_cell(
    template: &ExperimentSpec,
    axes: &SweepAxes,
    c: &CellCoord,
    master: u64,
    baseline_only: bool,
    baselines: &HashMap<(usize, u64), Arc<std::result::Result<RunRecord, String>>>,
) -> CellResult {
    let base = baselines[&(c.nodes, c.vector)].as_ref().clone()?;
    let mut s = cell_spec(template, axes, c);
    if baseline_only {
        return Ok(row_for(&s, &base, None, baseline_seed(master, c.nodes, c.vector)));
    }
    s.seed = cell_seed(master, c);
    let cong = run_congested(&s).map_err(|e| e.to_string())?;
    Ok(row_for(&s, &base, Some(&cong), s.seed))
}

fn parallel_for<T: Sync, F: Fn(&T) + Sync>(threads: usize, items: &[T], f: F) {
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(items.len().max(1)) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(item) = items.get(i) else { break };
                f(item);
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleave_eight() {
        let (v, a) = interleave_allocation(&(0..8).collect::<Vec<_>>()).unwrap();
        assert_eq!(v, vec![0, 2, 4, 6]);
        assert_eq!(a, vec![1, 3, 5, 7]);
    }

    #[test]
    fn interleave_pair_and_large() {
        let (v, a) = interleave_allocation(&["a", "b"]).unwrap();
        assert_eq!((v, a), (vec!["a"], vec!["b"]));
        let (v, a) = interleave_allocation(&(0..256).collect::<Vec<_>>()).unwrap();
        assert_eq!((v.len(), a.len()), (128, 128));
        assert!(interleave_allocation(&[1, 2, 3]).is_err());
    }

    #[test]
    fn record_accounting() {
        let all: Vec<u64> = (1..=1000).collect();
        let r = RunRecord::from_samples(1000, 100, &all).unwrap();
        assert_eq!(r.retained(), 900);
        assert!(compute_ratio(&r, &r).unwrap() == 1.0);
        assert!(RunRecord::from_samples(1000, 100, &all[..999]).is_err());
    }

    #[test]
    fn ratio_arithmetic() {
        let a = RunRecord::from_samples(2, 0, &[1000, 1000]).unwrap();
        let b = RunRecord::from_samples(2, 0, &[2000, 2000]).unwrap();
        assert_eq!(compute_ratio(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn percentiles_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|x| x as f64).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[3.0], 99.0), 3.0);
    }

    #[test]
    fn seeds_decorrelated() {
        let a = CellCoord {
            nodes: 16,
            vector: 8,
            injection: InjectionMode::Steady,
        };
        let b = CellCoord { vector: 16, ..a };
        assert_ne!(cell_seed(1, &a), cell_seed(1, &b));
        assert_eq!(cell_seed(1, &a), cell_seed(1, &a));
        assert_ne!(cell_seed(1, &a), cell_seed(2, &a));
    }

    #[test]
    fn spec_validation() {
        let mut s = ExperimentSpec::new(Preset::HaicguSw, 8, CollectiveKind::AllGather, vec![1024]);
        assert!(s.validate().is_ok());
        s.nodes = 7;
        assert!(s.validate().is_err());
        s.nodes = 8;
        s.warmup = s.iterations;
        assert!(s.validate().is_err());
        s.warmup = 10;
        s.vectors.clear();
        assert!(s.validate().is_err());
    }
}
