//! Cell-level discrete-event core.
//!
//! Every directed link is a port with a FIFO egress queue at its
//! transmitting node. Cells are stored and forwarded whole. In credit mode
//! a transmitter reserves a slot in the next queue before it starts; in
//! PFC mode the receiver counts cells per ingress link and pauses the
//! link between XOFF and XON. Endpoint NICs generate cells on demand from
//! their active flows in round-robin order, paced by congestion control.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cc::{flow_granular_update, CcPolicy, DcqcnState, IbCcState};
use crate::error::{internal, invalid, Error, Result};
use crate::flow::{FlowId, FlowKey};
use crate::lb::{adaptive_select, deterministic_select, ecmp_select, nslb_assign, path_via_uplink, EdgePair, FlowMatrix, LbPolicy};
use crate::topology::{enumerate_paths, LinkId, NodeId, PathHint, PathSet, Topology};
use crate::units::{pacing_time, serialization_time, SimTime};

pub const DEFAULT_CELL_BYTES: u64 = 4096;
pub const DEFAULT_BUFFER_CELLS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PfcThresholds {
    pub xoff_cells: u32,
    pub xon_cells: u32,
}

impl PfcThresholds {
    /// XOFF at three quarters and XON at half of the buffer.
    pub fn for_capacity(cells: u32) -> Self {
        PfcThresholds {
            xoff_cells: cells * 3 / 4,
            xon_cells: cells / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowControl {
    Credit,
    Pfc(PfcThresholds),
}

impl FlowControl {
    pub fn name(&self) -> &'static str {
        match self {
            FlowControl::Credit => "credit",
            FlowControl::Pfc(_) => "pfc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub cell_bytes: u64,
    /// Per-port buffer in cells; `None` means unbounded.
    pub buffer_cells: Option<u32>,
    pub flow_control: FlowControl,
    pub cc: CcPolicy,
    pub lb: LbPolicy,
    /// Rate at which an endpoint drains received cells. `None` delivers on
    /// arrival.
    pub host_rx_rate_bps: Option<u64>,
    pub seed: u64,
    pub trace: bool,
    /// Width of the delivered-bytes bins kept per destination endpoint.
    pub probe_bin: Option<SimTime>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            cell_bytes: DEFAULT_CELL_BYTES,
            buffer_cells: Some(DEFAULT_BUFFER_CELLS),
            flow_control: FlowControl::Credit,
            cc: CcPolicy::None,
            lb: LbPolicy::Deterministic,
            host_rx_rate_bps: None,
            seed: 0,
            trace: false,
            probe_bin: None,
        }
    }
}

impl EngineConfig {
    pub fn capacity_bytes(&self) -> u64 {
        match self.buffer_cells {
            Some(c) => c as u64 * self.cell_bytes,
            None => u64::MAX,
        }
    }

    pub fn validate(&self, topo: &Topology) -> Result<()> {
        if self.cell_bytes == 0 {
            return invalid("cell size must be positive");
        }
        if self.buffer_cells == Some(0) {
            return invalid("buffer must hold at least one cell");
        }
        if self.host_rx_rate_bps == Some(0) {
            return invalid("host receive rate must be positive");
        }
        if let Some(bin) = self.probe_bin {
            if bin == SimTime::ZERO {
                return invalid("probe bin must be positive");
            }
        }
        self.cc.validate(self.capacity_bytes())?;
        self.lb.validate()?;
        if let FlowControl::Pfc(t) = self.flow_control {
            if t.xon_cells >= t.xoff_cells {
                return invalid(format!("PFC XON {} must be below XOFF {}", t.xon_cells, t.xoff_cells));
            }
            if let Some(cap) = self.buffer_cells {
                if t.xoff_cells > cap {
                    return invalid(format!("PFC XOFF {} exceeds buffer {}", t.xoff_cells, cap));
                }
                let headroom = topo
                    .links()
                    .iter()
                    .map(|l| {
                        let ct = serialization_time(self.cell_bytes, l.rate_bps).ps();
                        l.latency.ps().div_ceil(ct) + 1
                    })
                    .max()
                    .unwrap_or(1);
                if t.xoff_cells as u64 + headroom > cap as u64 {
                    return invalid(format!(
                        "PFC XOFF {} leaves less than {} cells of headroom in a {} cell buffer",
                        t.xoff_cells, headroom, cap
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A transfer to be injected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowSpec {
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
    pub start: SimTime,
    /// Opaque value handed back on completion.
    pub tag: u64,
    /// Explicit route; when absent the load-balancing policy picks one at
    /// start time.
    pub path: Option<Vec<LinkId>>,
}

impl FlowSpec {
    pub fn new(src: usize, dst: usize, bytes: u64, start: SimTime) -> Self {
        FlowSpec {
            src,
            dst,
            bytes,
            start,
            tag: 0,
            path: None,
        }
    }

    pub fn tag(mut self, tag: u64) -> Self {
        self.tag = tag;
        self
    }
}

/// Summary passed to the driver when a flow's last byte is delivered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRecord {
    pub id: FlowId,
    pub tag: u64,
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
    pub start: SimTime,
    pub end: SimTime,
    pub path: Vec<LinkId>,
}

pub trait Driver {
    fn on_flow_complete(&mut self, engine: &mut Engine, flow: FlowRecord);

    fn on_timer(&mut self, _engine: &mut Engine, _token: u64) {}
}

/// Driver that ignores every callback.
pub struct NoDriver;

impl Driver for NoDriver {
    fn on_flow_complete(&mut self, _engine: &mut Engine, _flow: FlowRecord) {}
}

/// Collects completion records.
#[derive(Default)]
pub struct Collect(pub Vec<FlowRecord>);

impl Driver for Collect {
    fn on_flow_complete(&mut self, _engine: &mut Engine, flow: FlowRecord) {
        self.0.push(flow);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunLimit {
    Until(SimTime),
    Quiescence,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub events: u64,
    pub injected_bytes: u64,
    pub delivered_bytes: u64,
    pub cells_delivered: u64,
    pub capacity_violations: u64,
    pub order_violations: u64,
    pub marks: u64,
    pub cnps: u64,
    pub becns: u64,
    pub throttles: u64,
    pub pauses: u64,
    pub reroutes: u64,
    pub flows_completed: u64,
    /// Pause events per link.
    pub pauses_per_link: BTreeMap<u32, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub kind: &'static str,
    pub link: Option<u32>,
    pub flow: Option<u64>,
    pub occupancy: u64,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},", self.time.ps(), self.kind)?;
        if let Some(l) = self.link {
            write!(f, "{l}")?;
        }
        f.write_str(",")?;
        if let Some(id) = self.flow {
            write!(f, "{id}")?;
        }
        write!(f, ",{}", self.occupancy)
    }
}

pub const TRACE_HEADER: &str = "time_ps,event_kind,link,flow,occupancy";

#[derive(Debug, Clone, Copy)]
enum Ev {
    TxDone(u32),
    Arrive(u32, u32),
    FlowStart(u32),
    PaceWake(u32),
    Cnp(FlowKey),
    Becn(FlowKey),
    Throttle(FlowKey, f64, u32),
    FgTick,
    AdaptiveTick,
    Timer(u64),
}

impl Ev {
    fn code(&self) -> u64 {
        match self {
            Ev::TxDone(p) => 1 << 56 | *p as u64,
            Ev::Arrive(p, c) => 2 << 56 | (*p as u64) << 24 | *c as u64,
            Ev::FlowStart(s) => 3 << 56 | *s as u64,
            Ev::PaceWake(e) => 4 << 56 | *e as u64,
            Ev::Cnp(k) => 5 << 56 ^ k.as_u64(),
            Ev::Becn(k) => 6 << 56 ^ k.as_u64(),
            Ev::Throttle(k, r, _) => 7 << 56 ^ k.as_u64() ^ r.to_bits(),
            Ev::FgTick => 8 << 56,
            Ev::AdaptiveTick => 9 << 56,
            Ev::Timer(t) => 10 << 56 ^ t,
        }
    }
}

struct Scheduled {
    time: SimTime,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, o: &Self) -> bool {
        (self.time, self.seq) == (o.time, o.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(o.time, o.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    flow: u32,
    seq: u32,
    bytes: u32,
    hop: u16,
    marked: bool,
    /// Port over which the cell entered its current node.
    ingress: u32,
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PortKind {
    /// Endpoint NIC transmitter.
    Nic(u32),
    /// Switch egress.
    Switch,
    /// Host ingest of an endpoint.
    Rx,
}

#[derive(Debug)]
struct Port {
    kind: PortKind,
    rate_bps: u64,
    latency: SimTime,
    queue: VecDeque<u32>,
    in_service: u32,
    busy: bool,
    occupancy: u64,
    cells: u32,
    /// Slots promised to upstream transmitters (credit mode).
    reserved: u32,
    waiters: VecDeque<u32>,
    waiting_on: u32,
    /// Cells held at this port's receiving node that arrived through it
    /// (PFC mode).
    ingress_cells: u32,
    paused: bool,
    window: HashMap<FlowKey, (u64, u16)>,
    /// Switch egress towards an endpoint.
    to_endpoint: bool,
}

impl Port {
    fn new(kind: PortKind, rate_bps: u64, latency: SimTime) -> Self {
        Port {
            kind,
            rate_bps,
            latency,
            queue: VecDeque::new(),
            in_service: NONE,
            busy: false,
            occupancy: 0,
            cells: 0,
            reserved: 0,
            waiters: VecDeque::new(),
            waiting_on: NONE,
            ingress_cells: 0,
            paused: false,
            window: HashMap::new(),
            to_endpoint: false,
        }
    }
}

#[derive(Debug)]
struct FlowState {
    id: FlowId,
    tag: u64,
    key: FlowKey,
    bytes: u64,
    generated: u64,
    delivered: u64,
    next_seq: u32,
    expect_seq: u32,
    route: Vec<u32>,
    links: Vec<LinkId>,
    latency: SimTime,
    pending_route: Option<Vec<LinkId>>,
    in_flight: u32,
    start: SimTime,
    next_send: SimTime,
    started: bool,
    explicit_path: bool,
}

#[derive(Debug, Default)]
struct Nic {
    active: VecDeque<u32>,
    pending: u32,
    wake_at: Option<SimTime>,
}

#[derive(Debug, Clone, Copy)]
struct Cap {
    rate: f64,
    set_at: SimTime,
}

/// Per-connection source state, kept across messages.
#[derive(Debug, Clone)]
struct Conn {
    dcqcn: Option<DcqcnState>,
    last_cnp: Option<SimTime>,
    alpha_applied: u64,
    inc_applied: u64,
    ib: IbCcState,
    last_becn: Option<SimTime>,
    ipd_at_becn: SimTime,
    cap: Option<Cap>,
    /// Destination side: last notification generated.
    np_last: Option<SimTime>,
}

pub struct Engine {
    topo: Arc<Topology>,
    cfg: EngineConfig,
    now: SimTime,
    seq: u64,
    heap: BinaryHeap<Reverse<Scheduled>>,
    ports: Vec<Port>,
    cells: Vec<Cell>,
    free_cells: Vec<u32>,
    flows: Vec<Option<FlowState>>,
    free_flows: Vec<u32>,
    slot_of: HashMap<FlowId, u32>,
    next_flow_id: u64,
    nics: Vec<Nic>,
    conns: HashMap<FlowKey, Conn>,
    paths: HashMap<FlowKey, Arc<PathSet>>,
    matrix: FlowMatrix,
    uplinks: BTreeMap<NodeId, Vec<LinkId>>,
    rng: ChaCha8Rng,
    cap_cells: u32,
    active_flows: usize,
    fg_tick_pending: bool,
    ad_tick_pending: bool,
    snapshot: Vec<u64>,
    snapshot_at: Option<SimTime>,
    /// Active flows routed through each port.
    port_flows: Vec<u32>,
    stats: EngineStats,
    digest: u64,
    trace: Vec<TraceRecord>,
    probe: Vec<Vec<u64>>,
    done_queue: VecDeque<FlowRecord>,
}

fn mix(h: u64, x: u64) -> u64 {
    crate::lb::mix64(h ^ x)
}

impl Engine {
    pub fn new(topo: Arc<Topology>, cfg: EngineConfig) -> Result<Self> {
        cfg.validate(&topo)?;
        let mut ports: Vec<Port> = topo
            .links()
            .iter()
            .map(|l| {
                let kind = if topo.is_endpoint(l.from) {
                    PortKind::Nic(l.from.0)
                } else {
                    PortKind::Switch
                };
                let mut p = Port::new(kind, l.rate_bps, l.latency);
                p.to_endpoint = kind == PortKind::Switch && topo.is_endpoint(l.to);
                p
            })
            .collect();
        if let Some(rx) = cfg.host_rx_rate_bps {
            for _ in 0..topo.num_endpoints() {
                ports.push(Port::new(PortKind::Rx, rx, SimTime::ZERO));
            }
        }
        let mut uplinks = BTreeMap::new();
        for e in 0..topo.num_endpoints() {
            let edge = topo.edge_of(e);
            uplinks.entry(edge).or_insert_with(|| topo.uplinks(edge));
        }
        let n = topo.num_endpoints();
        let n_ports = ports.len();
        Ok(Engine {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cap_cells: cfg.buffer_cells.unwrap_or(u32::MAX),
            topo,
            now: SimTime::ZERO,
            seq: 0,
            heap: BinaryHeap::new(),
            ports,
            cells: Vec::new(),
            free_cells: Vec::new(),
            flows: Vec::new(),
            free_flows: Vec::new(),
            slot_of: HashMap::new(),
            next_flow_id: 0,
            nics: (0..n).map(|_| Nic { pending: NONE, ..Default::default() }).collect(),
            conns: HashMap::new(),
            paths: HashMap::new(),
            matrix: FlowMatrix::default(),
            uplinks,
            active_flows: 0,
            fg_tick_pending: false,
            ad_tick_pending: false,
            snapshot: vec![0; n_ports],
            snapshot_at: None,
            port_flows: vec![0; n_ports],
            stats: EngineStats::default(),
            digest: 0xcbf2_9ce4_8422_2325,
            trace: Vec::new(),
            probe: vec![Vec::new(); n],
            done_queue: VecDeque::new(),
            cfg,
        })
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    /// Running hash over every processed event.
    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        std::mem::take(&mut self.trace)
    }

    /// Delivered bytes per bin for endpoint `ep`.
    pub fn probe(&self, ep: usize) -> &[u64] {
        &self.probe[ep]
    }

    pub fn active_flows(&self) -> usize {
        self.active_flows
    }

    pub fn pending_events(&self) -> usize {
        self.heap.len()
    }

    /// Bytes queued at the egress of `link`.
    pub fn occupancy(&self, link: LinkId) -> u64 {
        self.ports[link.index()].occupancy
    }

    pub fn is_paused(&self, link: LinkId) -> bool {
        self.ports[link.index()].paused
    }

    pub fn cell_time(&self, link: LinkId) -> SimTime {
        serialization_time(self.cfg.cell_bytes, self.ports[link.index()].rate_bps)
    }

    /// Current source rate of the `src`→`dst` connection.
    pub fn connection_rate(&mut self, src: usize, dst: usize) -> f64 {
        let key = FlowKey::new(src, dst);
        self.rate_for(key)
    }

    /// Current route of a live flow.
    pub fn flow_path(&self, id: FlowId) -> Option<&[LinkId]> {
        let slot = *self.slot_of.get(&id)?;
        self.flows[slot as usize].as_ref().map(|f| f.links.as_slice())
    }

    fn push(&mut self, time: SimTime, ev: Ev) {
        debug_assert!(time >= self.now);
        self.seq += 1;
        self.heap.push(Reverse(Scheduled { time, seq: self.seq, ev }));
    }

    /// Schedules a driver timer.
    pub fn schedule_timer(&mut self, at: SimTime, token: u64) -> Result<()> {
        if at < self.now {
            return internal(format!("timer at {at} is before now {}", self.now));
        }
        self.push(at, Ev::Timer(token));
        Ok(())
    }

    fn record(&mut self, kind: &'static str, link: Option<u32>, flow: Option<u64>, occupancy: u64) {
        if self.cfg.trace {
            self.trace.push(TraceRecord {
                time: self.now,
                kind,
                link,
                flow,
                occupancy,
            });
        }
    }

    pub fn inject_flow(&mut self, spec: FlowSpec) -> Result<FlowId> {
        let n = self.topo.num_endpoints();
        if spec.src >= n || spec.dst >= n {
            return invalid(format!("flow endpoint out of range (have {n})"));
        }
        if spec.src == spec.dst && spec.bytes > 0 {
            return invalid("flow source equals destination");
        }
        if spec.start < self.now {
            return internal(format!("flow start {} is before now {}", spec.start, self.now));
        }
        if let Some(p) = &spec.path {
            self.topo.validate_route(spec.src, spec.dst, p)?;
        }
        let id = FlowId(self.next_flow_id);
        self.next_flow_id += 1;
        let explicit = spec.path.is_some();
        let st = FlowState {
            id,
            tag: spec.tag,
            key: FlowKey::new(spec.src, spec.dst),
            bytes: spec.bytes,
            generated: 0,
            delivered: 0,
            next_seq: 0,
            expect_seq: 0,
            route: Vec::new(),
            links: spec.path.unwrap_or_default(),
            latency: SimTime::ZERO,
            pending_route: None,
            in_flight: 0,
            start: spec.start,
            next_send: spec.start,
            started: false,
            explicit_path: explicit,
        };
        let slot = match self.free_flows.pop() {
            Some(s) => {
                self.flows[s as usize] = Some(st);
                s
            }
            None => {
                self.flows.push(Some(st));
                (self.flows.len() - 1) as u32
            }
        };
        self.slot_of.insert(id, slot);
        self.active_flows += 1;
        self.push(spec.start, Ev::FlowStart(slot));
        Ok(id)
    }

    fn pathset(&mut self, key: FlowKey) -> Result<Arc<PathSet>> {
        if let Some(p) = self.paths.get(&key) {
            return Ok(p.clone());
        }
        let hint = match self.cfg.lb {
            LbPolicy::Adaptive(_) => PathHint::MinimalAndNonMinimal,
            _ => PathHint::MinimalOnly,
        };
        let ps = Arc::new(enumerate_paths(&self.topo, key.src as usize, key.dst as usize, hint)?);
        self.paths.insert(key, ps.clone());
        Ok(ps)
    }

    fn refresh_snapshot(&mut self) {
        let stale = match self.cfg.lb {
            LbPolicy::Adaptive(p) => p.staleness,
            _ => SimTime::ZERO,
        };
        let refresh = match self.snapshot_at {
            None => true,
            Some(t) => stale == SimTime::ZERO || self.now.saturating_sub(t) >= stale,
        };
        if refresh {
            for (i, p) in self.ports.iter().enumerate() {
                self.snapshot[i] = p.occupancy;
            }
            self.snapshot_at = Some(self.now);
        }
    }

    fn choose_path(&mut self, slot: u32) -> Result<Vec<LinkId>> {
        let (key, id) = {
            let f = self.flows[slot as usize].as_ref().unwrap();
            (f.key, f.id)
        };
        let ps = self.pathset(key)?;
        let idx = match self.cfg.lb {
            LbPolicy::Deterministic => deterministic_select(key, &ps)?,
            LbPolicy::Ecmp { seed } => ecmp_select(key, &ps, seed)?,
            LbPolicy::Adaptive(p) => {
                let cap = self.cfg.capacity_bytes().min(u64::MAX / 2);
                self.refresh_snapshot();
                let (occ, nf, cell) = (&self.snapshot, &self.port_flows, self.cfg.cell_bytes);
                adaptive_select(&ps, |l| occ[l.index()] + nf[l.index()] as u64 * cell, cap, p.nonminimal_bias)?
            }
            LbPolicy::Nslb => {
                let se = self.topo.edge_of(key.src as usize);
                let de = self.topo.edge_of(key.dst as usize);
                if se == de || ps.minimal_count() <= 1 {
                    0
                } else {
                    self.matrix.insert(
                        id,
                        EdgePair {
                            src_edge: se,
                            dst_edge: de,
                        },
                        self.topo.endpoint_rate(key.src as usize) as f64,
                    );
                    self.matrix = nslb_assign(&self.matrix, &self.uplinks)?;
                    let up = self.matrix.assignment[&id];
                    path_via_uplink(&ps, up).unwrap_or(0)
                }
            }
        };
        Ok(ps.paths[idx].links.clone())
    }

    fn set_route(&mut self, slot: u32, links: Vec<LinkId>) {
        let rx = self.cfg.host_rx_rate_bps.is_some();
        let base = self.topo.links().len() as u32;
        let f = self.flows[slot as usize].as_mut().unwrap();
        for &p in &f.route {
            self.port_flows[p as usize] -= 1;
        }
        let mut route: Vec<u32> = links.iter().map(|l| l.0).collect();
        if rx {
            route.push(base + f.key.dst);
        }
        f.latency = links.iter().fold(SimTime::ZERO, |a, l| a + self.topo.link(*l).latency);
        for &p in &route {
            self.port_flows[p as usize] += 1;
        }
        f.route = route;
        f.links = links;
    }

    /// Switches a live flow to `new_path` once its cells already in the
    /// network are delivered. New cells are withheld until then.
    pub fn reroute_with_drain(&mut self, id: FlowId, new_path: Vec<LinkId>) -> Result<()> {
        let Some(&slot) = self.slot_of.get(&id) else {
            return invalid(format!("flow {id} is not active"));
        };
        let (src, dst, in_flight, started) = {
            let f = self.flows[slot as usize].as_ref().unwrap();
            (f.key.src as usize, f.key.dst as usize, f.in_flight, f.started)
        };
        self.topo.validate_route(src, dst, &new_path)?;
        if !started {
            let f = self.flows[slot as usize].as_mut().unwrap();
            f.links = new_path;
            f.explicit_path = true;
            return Ok(());
        }
        self.stats.reroutes += 1;
        self.record("reroute", Some(new_path[1.min(new_path.len() - 1)].0), Some(id.0), 0);
        if in_flight == 0 {
            self.set_route(slot, new_path);
            self.kick_nic(src);
        } else {
            self.flows[slot as usize].as_mut().unwrap().pending_route = Some(new_path);
        }
        Ok(())
    }

    fn conn(&mut self, key: FlowKey) -> &mut Conn {
        let line = self.topo.endpoint_rate(key.src as usize) as f64;
        let cc = self.cfg.cc;
        self.conns.entry(key).or_insert_with(|| Conn {
            dcqcn: match cc {
                CcPolicy::Dcqcn(p) => Some(DcqcnState::new(line, &p)),
                _ => None,
            },
            last_cnp: None,
            alpha_applied: 0,
            inc_applied: 0,
            ib: IbCcState::default(),
            last_becn: None,
            ipd_at_becn: SimTime::ZERO,
            cap: None,
            np_last: None,
        })
    }

    /// Applies timer expiries that elapsed since the last notification.
    fn advance_conn(&mut self, key: FlowKey) {
        let now = self.now;
        let cc = self.cfg.cc;
        let c = self.conn(key);
        match cc {
            CcPolicy::Dcqcn(p) => {
                let Some(st) = c.dcqcn.as_mut() else { return };
                let Some(t0) = c.last_cnp else { return };
                let dt = now.saturating_sub(t0).ps();
                let ka = dt / p.alpha_timer.ps();
                if ka > c.alpha_applied {
                    st.alpha *= (1.0 - p.g).powf((ka - c.alpha_applied) as f64);
                    c.alpha_applied = ka;
                }
                let ki = dt / p.increase_timer.ps();
                while c.inc_applied < ki {
                    if st.at_line_rate() {
                        c.inc_applied = ki;
                        break;
                    }
                    st.on_increase_timer(&p);
                    c.inc_applied += 1;
                }
            }
            CcPolicy::Ib(p) => {
                if let Some(t) = c.last_becn {
                    let k = now.saturating_sub(t).ps() / p.recovery_interval.ps();
                    let dec = p.recovery_step.ps().saturating_mul(k);
                    c.ib.ipd = SimTime(c.ipd_at_becn.ps().saturating_sub(dec));
                }
            }
            _ => {}
        }
    }

    fn rate_for(&mut self, key: FlowKey) -> f64 {
        let line = self.topo.endpoint_rate(key.src as usize) as f64;
        if matches!(self.cfg.cc, CcPolicy::None) {
            return line;
        }
        self.advance_conn(key);
        let now = self.now;
        let cc = self.cfg.cc;
        let cell_time = serialization_time(self.cfg.cell_bytes, line as u64);
        let c = self.conn(key);
        let mut r = match cc {
            CcPolicy::Dcqcn(_) => c.dcqcn.map(|s| s.current).unwrap_or(line),
            CcPolicy::Ib(_) => c.ib.effective_rate(cell_time, line),
            _ => line,
        };
        if let (CcPolicy::FlowGranular(p), Some(cap)) = (cc, c.cap) {
            let k = now.saturating_sub(cap.set_at).ps() / p.hold.ps().max(1);
            let rate = cap.rate * 2f64.powi(k.min(64) as i32);
            if rate >= line {
                c.cap = None;
            } else {
                r = r.min(rate);
            }
        }
        r.min(line)
    }

    fn kick_nic(&mut self, ep: usize) {
        let port = self.topo.attachment(ep).up.0;
        self.try_start(port);
    }

    /// Picks the next flow for a NIC; returns its slot or schedules a pace
    /// wake-up.
    fn nic_pick(&mut self, ep: u32) -> Option<u32> {
        let pending = self.nics[ep as usize].pending;
        if pending != NONE {
            return Some(pending);
        }
        let now = self.now;
        let len = self.nics[ep as usize].active.len();
        let mut earliest: Option<SimTime> = None;
        for _ in 0..len {
            let slot = self.nics[ep as usize].active.pop_front().unwrap();
            self.nics[ep as usize].active.push_back(slot);
            let f = self.flows[slot as usize].as_ref().unwrap();
            if f.pending_route.is_some() {
                continue;
            }
            if f.next_send <= now {
                return Some(slot);
            }
            earliest = Some(earliest.map_or(f.next_send, |e: SimTime| e.min(f.next_send)));
        }
        if let Some(t) = earliest {
            let nic = &mut self.nics[ep as usize];
            if nic.wake_at.is_none_or(|w| t < w || w < now) {
                nic.wake_at = Some(t);
                self.push(t, Ev::PaceWake(ep));
            }
        }
        None
    }

    /// Whether a cell may be sent towards port `next`; registers `port` as
    /// a waiter otherwise.
    fn admit(&mut self, port: u32, next: u32) -> bool {
        if let FlowControl::Credit = self.cfg.flow_control {
            let q = &mut self.ports[next as usize];
            if q.reserved >= self.cap_cells {
                if self.ports[port as usize].waiting_on == NONE {
                    self.ports[next as usize].waiters.push_back(port);
                    self.ports[port as usize].waiting_on = next;
                }
                return false;
            }
            q.reserved += 1;
        }
        true
    }

    fn try_start(&mut self, port: u32) {
        let p = &self.ports[port as usize];
        if p.busy || p.paused || p.waiting_on != NONE {
            return;
        }
        match p.kind {
            PortKind::Nic(ep) => self.start_nic(port, ep),
            PortKind::Switch | PortKind::Rx => self.start_queue(port),
        }
    }

    fn start_nic(&mut self, port: u32, ep: u32) {
        let Some(slot) = self.nic_pick(ep) else { return };
        let next = self.flows[slot as usize].as_ref().unwrap().route[1];
        if !self.admit(port, next) {
            self.nics[ep as usize].pending = slot;
            return;
        }
        self.nics[ep as usize].pending = NONE;
        let key = self.flows[slot as usize].as_ref().unwrap().key;
        let rate = self.rate_for(key);
        let cell_bytes = self.cfg.cell_bytes;
        let now = self.now;
        let f = self.flows[slot as usize].as_mut().unwrap();
        let bytes = (f.bytes - f.generated).min(cell_bytes);
        f.generated += bytes;
        let seq = f.next_seq;
        f.next_seq += 1;
        f.in_flight += 1;
        f.next_send = now + pacing_time(bytes, rate);
        let done_generating = f.generated == f.bytes;
        let fid = f.id.0;
        if done_generating {
            let nic = &mut self.nics[ep as usize];
            if let Some(pos) = nic.active.iter().position(|&s| s == slot) {
                nic.active.remove(pos);
            }
        }
        if let CcPolicy::Dcqcn(p) = self.cfg.cc {
            let c = self.conn(key);
            if let Some(st) = c.dcqcn.as_mut() {
                st.on_bytes_sent(bytes, &p);
            }
        }
        self.stats.injected_bytes += bytes;
        let cell = Cell {
            flow: slot,
            seq,
            bytes: bytes as u32,
            hop: 0,
            marked: false,
            ingress: NONE,
        };
        let ci = self.alloc_cell(cell);
        let rate_bps = self.ports[port as usize].rate_bps;
        let pr = &mut self.ports[port as usize];
        pr.busy = true;
        pr.in_service = ci;
        let t = now + serialization_time(bytes, rate_bps);
        self.record("inject", Some(port), Some(fid), 0);
        self.push(t, Ev::TxDone(port));
    }

    fn start_queue(&mut self, port: u32) {
        let Some(&ci) = self.ports[port as usize].queue.front() else {
            return;
        };
        let cell = self.cells[ci as usize];
        let route_len;
        let next = {
            let f = self.flows[cell.flow as usize].as_ref().unwrap();
            route_len = f.route.len();
            let h = cell.hop as usize + 1;
            if h < route_len {
                f.route[h]
            } else {
                NONE
            }
        };
        if next != NONE && !self.admit(port, next) {
            return;
        }
        let p = &mut self.ports[port as usize];
        p.queue.pop_front();
        p.busy = true;
        p.in_service = ci;
        let t = self.now + serialization_time(cell.bytes as u64, p.rate_bps);
        self.push(t, Ev::TxDone(port));
    }

    fn alloc_cell(&mut self, c: Cell) -> u32 {
        match self.free_cells.pop() {
            Some(i) => {
                self.cells[i as usize] = c;
                i
            }
            None => {
                self.cells.push(c);
                (self.cells.len() - 1) as u32
            }
        }
    }

    fn on_tx_done(&mut self, port: u32) -> Result<()> {
        let (ci, latency, kind) = {
            let p = &mut self.ports[port as usize];
            let ci = p.in_service;
            p.in_service = NONE;
            p.busy = false;
            (ci, p.latency, p.kind)
        };
        if ci == NONE {
            return internal("transmission finished with no cell");
        }
        let cell = self.cells[ci as usize];
        if kind != PortKind::Rx || latency > SimTime::ZERO {
            self.push(self.now + latency, Ev::Arrive(port, ci));
        }
        if !matches!(kind, PortKind::Nic(_)) {
            // the cell leaves this queue
            let p = &mut self.ports[port as usize];
            p.occupancy -= cell.bytes as u64;
            p.cells -= 1;
            if let FlowControl::Credit = self.cfg.flow_control {
                if p.reserved == 0 {
                    return internal(format!("negative credit on port {port}"));
                }
                p.reserved -= 1;
                self.release_waiters(port);
            }
            if let FlowControl::Pfc(t) = self.cfg.flow_control {
                if cell.ingress != NONE {
                    let up = &mut self.ports[cell.ingress as usize];
                    up.ingress_cells -= 1;
                    if up.paused && up.ingress_cells <= t.xon_cells {
                        up.paused = false;
                        let occ = up.ingress_cells as u64;
                        self.record("resume", Some(cell.ingress), None, occ);
                        self.try_start(cell.ingress);
                    }
                }
            }
        }
        if kind == PortKind::Rx && latency == SimTime::ZERO {
            self.deliver(ci)?;
        }
        self.try_start(port);
        Ok(())
    }

    fn release_waiters(&mut self, port: u32) {
        while self.ports[port as usize].reserved < self.cap_cells {
            let Some(w) = self.ports[port as usize].waiters.pop_front() else {
                break;
            };
            self.ports[w as usize].waiting_on = NONE;
            self.try_start(w);
        }
    }

    fn on_arrive(&mut self, port: u32, ci: u32) -> Result<()> {
        let mut cell = self.cells[ci as usize];
        let (next, key, hop_count) = {
            let f = self.flows[cell.flow as usize].as_ref().unwrap();
            let h = cell.hop as usize + 1;
            (f.route.get(h).copied().unwrap_or(NONE), f.key, h)
        };
        if next == NONE {
            return self.deliver(ci);
        }
        cell.hop += 1;
        cell.ingress = port;
        let next_kind = self.ports[next as usize].kind;
        if next_kind == PortKind::Switch {
            if let Some(ecn) = self.cfg.cc.marking() {
                let occ = self.ports[next as usize].occupancy;
                if !cell.marked && ecn.should_mark(occ, &mut self.rng) {
                    cell.marked = true;
                    self.stats.marks += 1;
                }
            }
            if let CcPolicy::FlowGranular(_) = self.cfg.cc {
                let e = self.ports[next as usize].window.entry(key).or_insert((0, 0));
                e.0 += cell.bytes as u64;
                e.1 = hop_count as u16;
            }
        }
        self.cells[ci as usize] = cell;
        let q = &mut self.ports[next as usize];
        q.queue.push_back(ci);
        q.occupancy += cell.bytes as u64;
        q.cells += 1;
        match self.cfg.flow_control {
            FlowControl::Credit => {
                if q.cells > self.cap_cells || q.reserved > self.cap_cells {
                    self.stats.capacity_violations += 1;
                }
            }
            FlowControl::Pfc(t) => {
                let up = &mut self.ports[port as usize];
                up.ingress_cells += 1;
                if up.ingress_cells > self.cap_cells {
                    self.stats.capacity_violations += 1;
                }
                if !up.paused && up.ingress_cells >= t.xoff_cells {
                    up.paused = true;
                    let occ = up.ingress_cells as u64;
                    self.stats.pauses += 1;
                    *self.stats.pauses_per_link.entry(port).or_insert(0) += 1;
                    self.record("pause", Some(port), None, occ);
                }
            }
        }
        let fid = self.flows[cell.flow as usize].as_ref().unwrap().id.0;
        let occ = self.ports[next as usize].occupancy;
        self.record("enqueue", Some(next), Some(fid), occ);
        self.try_start(next);
        Ok(())
    }

    fn deliver(&mut self, ci: u32) -> Result<()> {
        let cell = self.cells[ci as usize];
        self.free_cells.push(ci);
        let slot = cell.flow;
        let now = self.now;
        let (key, latency, done, fid) = {
            let f = self.flows[slot as usize].as_mut().unwrap();
            if cell.seq != f.expect_seq {
                self.stats.order_violations += 1;
            }
            f.expect_seq = cell.seq + 1;
            f.delivered += cell.bytes as u64;
            f.in_flight -= 1;
            (f.key, f.latency, f.delivered == f.bytes, f.id.0)
        };
        self.stats.delivered_bytes += cell.bytes as u64;
        self.stats.cells_delivered += 1;
        if let Some(bin) = self.cfg.probe_bin {
            // spread the cell over the time its last bit-train took to arrive
            let rate = self
                .cfg
                .host_rx_rate_bps
                .unwrap_or_else(|| self.topo.endpoint_rate(key.dst as usize));
            let ser = serialization_time(cell.bytes as u64, rate).ps();
            let (bin, end) = (bin.ps(), now.ps());
            let start = end.saturating_sub(ser);
            let v = &mut self.probe[key.dst as usize];
            let last = (end.saturating_sub(1) / bin) as usize;
            if v.len() <= last {
                v.resize(last + 1, 0);
            }
            let total = cell.bytes as u64;
            let mut left = total;
            let mut t = start;
            while t < end {
                let b = t / bin;
                let upto = ((b + 1) * bin).min(end);
                let part = if upto == end { left } else { total * (upto - t) / ser.max(1) };
                v[b as usize] += part;
                left -= part;
                t = upto;
            }
            if ser == 0 {
                v[last] += left;
            }
        }
        self.record("deliver", None, Some(fid), 0);
        if cell.marked {
            match self.cfg.cc {
                CcPolicy::Dcqcn(p) => {
                    let c = self.conn(key);
                    if c.np_last.is_none_or(|t| now.saturating_sub(t) >= p.cnp_interval) {
                        c.np_last = Some(now);
                        self.push(now + latency, Ev::Cnp(key));
                    }
                }
                CcPolicy::Ib(_) => {
                    if let Some(b) = crate::cc::ib_on_fecn(key, true, now, latency) {
                        self.push(b.at, Ev::Becn(key));
                    }
                }
                _ => {}
            }
        }
        let pending = {
            let f = self.flows[slot as usize].as_mut().unwrap();
            if f.in_flight == 0 {
                f.pending_route.take()
            } else {
                None
            }
        };
        if let Some(route) = pending {
            self.set_route(slot, route);
            self.kick_nic(key.src as usize);
        }
        if done {
            self.finish_flow(slot);
        }
        Ok(())
    }

    fn finish_flow(&mut self, slot: u32) {
        let f = self.flows[slot as usize].take().unwrap();
        for &p in &f.route {
            self.port_flows[p as usize] -= 1;
        }
        self.free_flows.push(slot);
        self.slot_of.remove(&f.id);
        self.matrix.remove(f.id);
        self.active_flows -= 1;
        self.stats.flows_completed += 1;
        self.record("flow_done", None, Some(f.id.0), 0);
        self.done_queue.push_back(FlowRecord {
            id: f.id,
            tag: f.tag,
            src: f.key.src as usize,
            dst: f.key.dst as usize,
            bytes: f.bytes,
            start: f.start,
            end: self.now,
            path: f.links,
        });
    }

    fn on_flow_start(&mut self, slot: u32) -> Result<()> {
        let (ep, bytes, explicit) = {
            let f = self.flows[slot as usize].as_ref().unwrap();
            (f.key.src as usize, f.bytes, f.explicit_path)
        };
        let fid = self.flows[slot as usize].as_ref().unwrap().id.0;
        self.record("flow_start", None, Some(fid), 0);
        if bytes == 0 {
            self.finish_flow(slot);
            return Ok(());
        }
        let links = if explicit {
            self.flows[slot as usize].as_ref().unwrap().links.clone()
        } else {
            self.choose_path(slot)?
        };
        self.set_route(slot, links);
        {
            let f = self.flows[slot as usize].as_mut().unwrap();
            f.started = true;
            f.next_send = self.now;
        }
        self.nics[ep].active.push_back(slot);
        if let CcPolicy::FlowGranular(p) = self.cfg.cc {
            if !self.fg_tick_pending {
                self.fg_tick_pending = true;
                self.push(self.now + p.window, Ev::FgTick);
            }
        }
        if let LbPolicy::Adaptive(p) = self.cfg.lb {
            if let Some(period) = p.reevaluate {
                if !self.ad_tick_pending {
                    self.ad_tick_pending = true;
                    self.push(self.now + period, Ev::AdaptiveTick);
                }
            }
        }
        self.kick_nic(ep);
        Ok(())
    }

    fn on_cnp(&mut self, key: FlowKey) {
        let CcPolicy::Dcqcn(p) = self.cfg.cc else { return };
        self.advance_conn(key);
        let now = self.now;
        let c = self.conn(key);
        if let Some(st) = c.dcqcn.as_mut() {
            st.on_cnp(&p);
        }
        c.last_cnp = Some(now);
        c.alpha_applied = 0;
        c.inc_applied = 0;
        self.stats.cnps += 1;
        self.record("cnp", None, Some(key.as_u64()), 0);
    }

    fn on_becn(&mut self, key: FlowKey) {
        let CcPolicy::Ib(p) = self.cfg.cc else { return };
        self.advance_conn(key);
        let now = self.now;
        let c = self.conn(key);
        c.ib.on_becn(&p);
        c.ipd_at_becn = c.ib.ipd;
        c.last_becn = Some(now);
        self.stats.becns += 1;
        self.record("becn", None, Some(key.as_u64()), 0);
    }

    fn on_throttle(&mut self, key: FlowKey, rate: f64, port: u32) {
        let now = self.now;
        let c = self.conn(key);
        let rate = match c.cap {
            Some(old) => rate.min(old.rate),
            None => rate,
        };
        c.cap = Some(Cap { rate, set_at: now });
        self.stats.throttles += 1;
        self.record("throttle", Some(port), Some(key.as_u64()), rate as u64);
    }

    fn on_fg_tick(&mut self) {
        let CcPolicy::FlowGranular(p) = self.cfg.cc else { return };
        self.fg_tick_pending = false;
        let mut msgs = Vec::new();
        for (pi, port) in self.ports.iter_mut().enumerate() {
            if port.window.is_empty() {
                continue;
            }
            // fabric hot spots are left to routing; only endpoint
            // congestion is attributed to individual flows
            if !port.to_endpoint {
                port.window.clear();
                continue;
            }
            let contributions: BTreeMap<FlowKey, u64> = port.window.iter().map(|(k, v)| (*k, v.0)).collect();
            let st = flow_granular_update(&contributions, port.occupancy, port.rate_bps, &p);
            for k in &st.throttle {
                let hops = port.window[k].1 as u64;
                let delay = SimTime(port.latency.ps() * hops.max(1));
                msgs.push((delay, *k, st.caps[k], pi as u32));
            }
            port.window.clear();
        }
        for (delay, k, cap, port) in msgs {
            self.push(self.now + delay, Ev::Throttle(k, cap, port));
        }
        if self.active_flows > 0 {
            self.fg_tick_pending = true;
            self.push(self.now + p.window, Ev::FgTick);
        }
    }

    fn on_adaptive_tick(&mut self) -> Result<()> {
        let LbPolicy::Adaptive(p) = self.cfg.lb else {
            return Ok(());
        };
        self.ad_tick_pending = false;
        let cap = self.cfg.capacity_bytes().min(u64::MAX / 2);
        let margin = 2 * self.cfg.cell_bytes;
        let mut moves = Vec::new();
        for nic in 0..self.nics.len() {
            for &slot in &self.nics[nic].active {
                let f = self.flows[slot as usize].as_ref().unwrap();
                if f.pending_route.is_some() || f.explicit_path {
                    continue;
                }
                moves.push((slot, f.key, f.id));
            }
        }
        for (slot, key, id) in moves {
            let ps = self.pathset(key)?;
            if ps.len() < 2 {
                continue;
            }
            self.refresh_snapshot();
            let (occ, nf, cell) = (&self.snapshot, &self.port_flows, self.cfg.cell_bytes);
            let load = |l: LinkId| occ[l.index()] + nf[l.index()] as u64 * cell;
            let best = adaptive_select(&ps, load, cap, p.nonminimal_bias)?;
            let f = self.flows[slot as usize].as_ref().unwrap();
            let cur_first = f.links.get(1).map(|&l| load(l)).unwrap_or(0);
            // the flow itself would add one cell of load on the new hop
            let new_first = ps.paths[best].first_switch_hop().map(|l| load(l) + cell).unwrap_or(0);
            if ps.paths[best].links != f.links && new_first + margin < cur_first {
                let path = ps.paths[best].links.clone();
                self.reroute_with_drain(id, path)?;
            }
        }
        if self.active_flows > 0 {
            if let Some(period) = p.reevaluate {
                self.ad_tick_pending = true;
                self.push(self.now + period, Ev::AdaptiveTick);
            }
        }
        Ok(())
    }

    /// Processes one event. Returns false when no event is pending.
    pub fn step(&mut self, driver: &mut dyn Driver) -> Result<bool> {
        let Some(Reverse(s)) = self.heap.pop() else {
            return Ok(false);
        };
        if s.time < self.now {
            return internal("event scheduled in the past");
        }
        self.now = s.time;
        self.stats.events += 1;
        self.digest = mix(self.digest, mix(s.time.ps(), s.ev.code()));
        match s.ev {
            Ev::TxDone(p) => self.on_tx_done(p)?,
            Ev::Arrive(p, c) => self.on_arrive(p, c)?,
            Ev::FlowStart(slot) => self.on_flow_start(slot)?,
            Ev::PaceWake(ep) => {
                let nic = &mut self.nics[ep as usize];
                if nic.wake_at == Some(self.now) {
                    nic.wake_at = None;
                }
                self.kick_nic(ep as usize);
            }
            Ev::Cnp(k) => self.on_cnp(k),
            Ev::Becn(k) => self.on_becn(k),
            Ev::Throttle(k, r, port) => self.on_throttle(k, r, port),
            Ev::FgTick => self.on_fg_tick(),
            Ev::AdaptiveTick => self.on_adaptive_tick()?,
            Ev::Timer(token) => driver.on_timer(self, token),
        }
        while let Some(rec) = self.done_queue.pop_front() {
            driver.on_flow_complete(self, rec);
        }
        Ok(true)
    }

    pub fn run_until(&mut self, limit: RunLimit, driver: &mut dyn Driver) -> Result<SimTime> {
        loop {
            if let RunLimit::Until(t) = limit {
                match self.heap.peek() {
                    Some(Reverse(s)) if s.time <= t => {}
                    _ => {
                        if self.now < t && !self.heap.is_empty() {
                            self.now = t;
                        }
                        return Ok(self.now);
                    }
                }
            }
            if !self.step(driver)? {
                return Ok(self.now);
            }
        }
    }

    /// Indices of ports that hold cells but are idle without being blocked;
    /// empty whenever the fabric is work conserving.
    pub fn idle_with_work(&self) -> Vec<u32> {
        self.ports
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.busy && !p.paused && p.waiting_on == NONE && !p.queue.is_empty())
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Checks the queue bounds at this instant.
    pub fn check_capacity(&self) -> Result<()> {
        for (i, p) in self.ports.iter().enumerate() {
            match self.cfg.flow_control {
                FlowControl::Credit if p.reserved > self.cap_cells || p.cells > p.reserved => {
                    return Err(Error::Internal(format!("port {i} over capacity")));
                }
                FlowControl::Pfc(_) if p.ingress_cells > self.cap_cells => {
                    return Err(Error::Internal(format!("ingress of link {i} over capacity")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

