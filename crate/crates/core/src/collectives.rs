//! Communication schedules for the benchmarked patterns.

use std::fmt;

use crate::error::{invalid, Result};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CollectiveKind {
    AllGather,
    AlltoAll,
    Incast,
}

impl CollectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            CollectiveKind::AllGather => "allgather",
            CollectiveKind::AlltoAll => "alltoall",
            CollectiveKind::Incast => "incast",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "allgather" => Some(CollectiveKind::AllGather),
            "alltoall" => Some(CollectiveKind::AlltoAll),
            "incast" => Some(CollectiveKind::Incast),
            _ => None,
        }
    }
}

impl fmt::Display for CollectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transfer {
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Round {
    pub transfers: Vec<Transfer>,
}

/// How transfers inside a schedule are released.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dependency {
    /// Round r+1 at a rank waits for every round-r transfer the rank sends
    /// or receives.
    RoundBarrier,
    /// Single round; each rank keeps at most `window` of its sends in
    /// flight, in listed order.
    Window(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectiveSchedule {
    pub kind: CollectiveKind,
    pub ranks: usize,
    pub rounds: Vec<Round>,
    pub dependency: Dependency,
}

impl CollectiveSchedule {
    pub fn transfers(&self) -> impl Iterator<Item = &Transfer> {
        self.rounds.iter().flat_map(|r| r.transfers.iter())
    }

    pub fn total_bytes(&self) -> u64 {
        self.transfers().map(|t| t.bytes).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.iter().all(|r| r.transfers.is_empty())
    }
}

pub const DEFAULT_ALLTOALL_WINDOW: usize = 4;

pub fn ring_allgather(n: usize, block: u64) -> Result<CollectiveSchedule> {
    if n == 0 {
        return invalid("allgather needs at least one rank");
    }
    if n >= 2 && block == 0 {
        return invalid("allgather block must be at least one byte");
    }
    let rounds = (1..n)
        .map(|_| Round {
            transfers: (0..n)
                .map(|i| Transfer {
                    src: i,
                    dst: (i + 1) % n,
                    bytes: block,
                })
                .collect(),
        })
        .collect();
    Ok(CollectiveSchedule {
        kind: CollectiveKind::AllGather,
        ranks: n,
        rounds,
        dependency: Dependency::RoundBarrier,
    })
}

/// `vector` is the per-rank send buffer; each peer receives `vector / n`
/// bytes, with the division remainder added to the last block a rank
/// sends.
pub fn linear_alltoall(n: usize, vector: u64, window: usize) -> Result<CollectiveSchedule> {
    if n < 2 {
        return invalid("alltoall needs at least two ranks");
    }
    if vector < n as u64 {
        return invalid(format!("alltoall vector {vector} smaller than rank count {n}"));
    }
    if window == 0 {
        return invalid("alltoall window must be positive");
    }
    let block = vector / n as u64;
    let rem = vector % n as u64;
    let mut transfers = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for k in 1..n {
            let last = k == n - 1;
            transfers.push(Transfer {
                src: i,
                dst: (i + k) % n,
                bytes: block + if last { rem } else { 0 },
            });
        }
    }
    Ok(CollectiveSchedule {
        kind: CollectiveKind::AlltoAll,
        ranks: n,
        rounds: vec![Round { transfers }],
        dependency: Dependency::Window(window),
    })
}

pub fn incast(senders: &[usize], target: usize, bytes: u64) -> Result<CollectiveSchedule> {
    if senders.is_empty() {
        return invalid("incast needs at least one sender");
    }
    if senders.contains(&target) {
        return invalid("incast target is also a sender");
    }
    if bytes == 0 {
        return invalid("incast bytes must be positive");
    }
    let ranks = senders.iter().copied().max().unwrap().max(target) + 1;
    Ok(CollectiveSchedule {
        kind: CollectiveKind::Incast,
        ranks,
        rounds: vec![Round {
            transfers: senders
                .iter()
                .map(|&s| Transfer {
                    src: s,
                    dst: target,
                    bytes,
                })
                .collect(),
        }],
        dependency: Dependency::Window(usize::MAX),
    })
}

/// One transfer mapped onto endpoints with its start predecessors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedFlow {
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
    pub round: usize,
    /// Indices into the plan that must complete before this flow starts.
    pub after: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FlowPlan {
    pub flows: Vec<PlannedFlow>,
}

/// Expands a schedule onto endpoints. `participants[rank]` is the
/// endpoint of each rank. Routing is left to the engine, which applies
/// the experiment's policy when each flow is injected.
pub fn schedule_to_flows(sched: &CollectiveSchedule, topo: &Topology, participants: &[usize]) -> Result<FlowPlan> {
    for t in sched.transfers() {
        for r in [t.src, t.dst] {
            let Some(&ep) = participants.get(r) else {
                return invalid(format!("rank {r} has no endpoint"));
            };
            if ep >= topo.num_endpoints() {
                return invalid(format!("rank {r} mapped to missing endpoint {ep}"));
            }
        }
    }
    let mut flows = Vec::new();
    match sched.dependency {
        Dependency::RoundBarrier => {
            // prev[rank] = indices of the rank's transfers in the last round
            let mut prev: Vec<Vec<usize>> = vec![Vec::new(); sched.ranks];
            for (r, round) in sched.rounds.iter().enumerate() {
                let mut cur: Vec<Vec<usize>> = vec![Vec::new(); sched.ranks];
                for t in &round.transfers {
                    let idx = flows.len();
                    let mut after = prev[t.src].clone();
                    after.sort_unstable();
                    flows.push(PlannedFlow {
                        src: participants[t.src],
                        dst: participants[t.dst],
                        bytes: t.bytes,
                        round: r,
                        after,
                    });
                    cur[t.src].push(idx);
                    cur[t.dst].push(idx);
                }
                prev = cur;
            }
        }
        Dependency::Window(w) => {
            let mut sent: Vec<Vec<usize>> = vec![Vec::new(); sched.ranks];
            for (r, round) in sched.rounds.iter().enumerate() {
                for t in &round.transfers {
                    let idx = flows.len();
                    let mine = &mut sent[t.src];
                    let after = if mine.len() >= w {
                        vec![mine[mine.len() - w]]
                    } else {
                        Vec::new()
                    };
                    mine.push(idx);
                    flows.push(PlannedFlow {
                        src: participants[t.src],
                        dst: participants[t.dst],
                        bytes: t.bytes,
                        round: r,
                        after,
                    });
                }
            }
        }
    }
    Ok(FlowPlan { flows })
}

/// Release bookkeeping for a plan being executed.
#[derive(Debug, Clone)]
pub struct PlanTracker {
    waiting: Vec<usize>,
    dependents: Vec<Vec<usize>>,
    remaining: usize,
}

impl PlanTracker {
    pub fn new(plan: &FlowPlan) -> Self {
        let mut dependents = vec![Vec::new(); plan.flows.len()];
        for (i, f) in plan.flows.iter().enumerate() {
            for &p in &f.after {
                dependents[p].push(i);
            }
        }
        PlanTracker {
            waiting: plan.flows.iter().map(|f| f.after.len()).collect(),
            dependents,
            remaining: plan.flows.len(),
        }
    }

    /// Flows with no predecessors.
    pub fn initial(&self) -> Vec<usize> {
        (0..self.waiting.len()).filter(|&i| self.waiting[i] == 0).collect()
    }

    /// Marks `idx` complete and returns flows that became ready.
    pub fn complete(&mut self, idx: usize) -> Vec<usize> {
        self.remaining -= 1;
        let mut ready = Vec::new();
        for &d in &self.dependents[idx] {
            self.waiting[d] -= 1;
            if self.waiting[d] == 0 {
                ready.push(d);
            }
        }
        ready
    }

    pub fn done(&self) -> bool {
        self.remaining == 0
    }
}
