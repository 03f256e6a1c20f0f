//! Fabric construction and candidate path enumeration.
//!
//! Every topology is a directed graph. Endpoints occupy node ids
//! `0..num_endpoints()`, switches follow. Each bidirectional cable is two
//! directed links with independent queues.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::units::{SimTime, GBPS};

pub const DEFAULT_LINK_LATENCY: SimTime = SimTime::from_ns(250);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl LinkId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Single,
    Leaf,
    Spine,
    Edge,
    Aggregation,
    Core,
    Router,
    GroupLeaf,
    GroupSpine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Endpoint,
    Switch { tier: Tier, group: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub rate_bps: u64,
    pub latency: SimTime,
    /// Inter-group cable of a dragonfly.
    pub global: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    SingleSwitch,
    LeafSpine { leaves: usize, spines: usize },
    FatTree { pods: usize, edges_per_pod: usize, uplinks: usize },
    Dragonfly { groups: usize, plus: bool },
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attachment {
    pub edge: NodeId,
    pub up: LinkId,
    pub down: LinkId,
}

#[derive(Debug, Clone)]
pub struct Topology {
    name: String,
    family: Family,
    num_endpoints: usize,
    roles: Vec<Role>,
    links: Vec<Link>,
    out: Vec<Vec<LinkId>>,
    attach: Vec<Attachment>,
}

/// Whether `enumerate_paths` returns only minimal routes or also
/// single-detour routes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathHint {
    MinimalOnly,
    MinimalAndNonMinimal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    /// Full route from the source endpoint to the destination endpoint.
    pub links: Vec<LinkId>,
    pub minimal: bool,
}

impl Path {
    pub fn hops(&self) -> usize {
        self.links.len()
    }

    /// The first switch egress link of the route (the "uplink" for
    /// inter-edge traffic).
    pub fn first_switch_hop(&self) -> Option<LinkId> {
        self.links.get(1).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn minimal(&self) -> impl Iterator<Item = &Path> {
        self.paths.iter().filter(|p| p.minimal)
    }

    pub fn minimal_count(&self) -> usize {
        self.minimal().count()
    }
}

struct Builder {
    roles: Vec<Role>,
    links: Vec<Link>,
    attach: Vec<Option<Attachment>>,
    num_endpoints: usize,
    latency: SimTime,
}

impl Builder {
    fn new(num_endpoints: usize, latency: SimTime) -> Self {
        Builder {
            roles: vec![Role::Endpoint; num_endpoints],
            links: Vec::new(),
            attach: vec![None; num_endpoints],
            num_endpoints,
            latency,
        }
    }

    fn switch(&mut self, tier: Tier, group: u32) -> NodeId {
        self.roles.push(Role::Switch { tier, group });
        NodeId(self.roles.len() as u32 - 1)
    }

    fn link(&mut self, from: NodeId, to: NodeId, rate_bps: u64, global: bool) -> LinkId {
        self.links.push(Link {
            from,
            to,
            rate_bps,
            latency: self.latency,
            global,
        });
        LinkId(self.links.len() as u32 - 1)
    }

    fn cable(&mut self, a: NodeId, b: NodeId, rate_bps: u64) {
        self.link(a, b, rate_bps, false);
        self.link(b, a, rate_bps, false);
    }

    fn global_cable(&mut self, a: NodeId, b: NodeId, rate_bps: u64) {
        self.link(a, b, rate_bps, true);
        self.link(b, a, rate_bps, true);
    }

    fn attach(&mut self, endpoint: usize, edge: NodeId, rate_bps: u64) {
        self.attach_with(endpoint, edge, rate_bps, self.latency);
    }

    fn attach_with(&mut self, endpoint: usize, edge: NodeId, rate_bps: u64, latency: SimTime) {
        let saved = self.latency;
        self.latency = latency;
        let up = self.link(NodeId(endpoint as u32), edge, rate_bps, false);
        let down = self.link(edge, NodeId(endpoint as u32), rate_bps, false);
        self.attach[endpoint] = Some(Attachment { edge, up, down });
        self.latency = saved;
    }

    fn finish(self, name: &str, family: Family) -> Result<Topology> {
        let mut out = vec![Vec::new(); self.roles.len()];
        for (i, l) in self.links.iter().enumerate() {
            out[l.from.index()].push(LinkId(i as u32));
        }
        let attach = self
            .attach
            .into_iter()
            .enumerate()
            .map(|(i, a)| a.ok_or_else(|| Error::Internal(format!("endpoint {i} is not attached"))))
            .collect::<Result<Vec<_>>>()?;
        let topo = Topology {
            name: name.to_string(),
            family,
            num_endpoints: self.num_endpoints,
            roles: self.roles,
            links: self.links,
            out,
            attach,
        };
        topo.check_invariants()?;
        Ok(topo)
    }
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return invalid(format!("{name} must be at least 1"));
    }
    Ok(())
}

fn check_rate(rate_bps: u64) -> Result<()> {
    if rate_bps == 0 {
        return invalid("link rate must be positive");
    }
    Ok(())
}

fn check_latency(latency: SimTime) -> Result<()> {
    if latency == SimTime::ZERO {
        return invalid("link latency must be positive");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleSwitch {
    pub nodes: usize,
    pub rate_bps: u64,
    pub latency: SimTime,
}

impl SingleSwitch {
    pub fn build(&self) -> Result<Topology> {
        positive("node count", self.nodes)?;
        check_rate(self.rate_bps)?;
        check_latency(self.latency)?;
        let mut b = Builder::new(self.nodes, self.latency);
        let sw = b.switch(Tier::Single, 0);
        for e in 0..self.nodes {
            b.attach(e, sw, self.rate_bps);
        }
        b.finish("single-switch", Family::SingleSwitch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafSpine {
    pub leaves: usize,
    pub spines: usize,
    pub nodes_per_leaf: usize,
    pub rate_bps: u64,
    /// Leaf-spine cable rate; defaults to the endpoint rate.
    pub uplink_rate_bps: Option<u64>,
    pub latency: SimTime,
}

impl LeafSpine {
    pub fn build(&self) -> Result<Topology> {
        positive("leaf count", self.leaves)?;
        positive("spine count", self.spines)?;
        positive("nodes per leaf", self.nodes_per_leaf)?;
        check_rate(self.rate_bps)?;
        check_latency(self.latency)?;
        let up_rate = self.uplink_rate_bps.unwrap_or(self.rate_bps);
        check_rate(up_rate)?;
        let mut b = Builder::new(self.leaves * self.nodes_per_leaf, self.latency);
        let leaves: Vec<_> = (0..self.leaves).map(|l| b.switch(Tier::Leaf, l as u32)).collect();
        let spines: Vec<_> = (0..self.spines).map(|_| b.switch(Tier::Spine, 0)).collect();
        for (l, &leaf) in leaves.iter().enumerate() {
            for n in 0..self.nodes_per_leaf {
                b.attach(l * self.nodes_per_leaf + n, leaf, self.rate_bps);
            }
        }
        for &leaf in &leaves {
            for &spine in &spines {
                b.cable(leaf, spine, up_rate);
            }
        }
        b.finish(
            "leaf-spine",
            Family::LeafSpine {
                leaves: self.leaves,
                spines: self.spines,
            },
        )
    }
}

/// Three-tier tree. Each edge switch has `nodes_per_edge` downlinks and
/// `round(nodes_per_edge / taper)` uplinks at the same rate, one to each
/// aggregation switch of its pod. Above the aggregation tier the tree is
/// non-blocking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FatTree {
    pub pods: usize,
    pub edges_per_pod: usize,
    pub nodes_per_edge: usize,
    pub taper: f64,
    pub rate_bps: u64,
    pub latency: SimTime,
}

impl FatTree {
    pub fn uplinks_per_edge(&self) -> usize {
        ((self.nodes_per_edge as f64 / self.taper).round() as usize).max(1)
    }

    pub fn build(&self) -> Result<Topology> {
        positive("pod count", self.pods)?;
        positive("edges per pod", self.edges_per_pod)?;
        positive("nodes per edge", self.nodes_per_edge)?;
        if !(self.taper >= 1.0) || !self.taper.is_finite() {
            return invalid(format!("taper must be >= 1, got {}", self.taper));
        }
        check_rate(self.rate_bps)?;
        check_latency(self.latency)?;
        let up = self.uplinks_per_edge();
        let n = self.pods * self.edges_per_pod * self.nodes_per_edge;
        let mut b = Builder::new(n, self.latency);
        let mut edges = Vec::new();
        let mut aggs = Vec::new();
        for pod in 0..self.pods {
            let pe: Vec<_> = (0..self.edges_per_pod)
                .map(|_| b.switch(Tier::Edge, pod as u32))
                .collect();
            let pa: Vec<_> = (0..up).map(|_| b.switch(Tier::Aggregation, pod as u32)).collect();
            edges.push(pe);
            aggs.push(pa);
        }
        let cores: Vec<Vec<NodeId>> = if self.pods > 1 {
            (0..up)
                .map(|_| (0..self.edges_per_pod).map(|_| b.switch(Tier::Core, 0)).collect())
                .collect()
        } else {
            Vec::new()
        };
        let mut e = 0;
        for pod_edges in &edges {
            for &edge in pod_edges {
                for _ in 0..self.nodes_per_edge {
                    b.attach(e, edge, self.rate_bps);
                    e += 1;
                }
            }
        }
        for pod in 0..self.pods {
            for &edge in &edges[pod] {
                for &agg in &aggs[pod] {
                    b.cable(edge, agg, self.rate_bps);
                }
            }
        }
        for (j, group) in cores.iter().enumerate() {
            for &core in group {
                for pod_aggs in &aggs {
                    b.cable(pod_aggs[j], core, self.rate_bps);
                }
            }
        }
        b.finish(
            "fat-tree",
            Family::FatTree {
                pods: self.pods,
                edges_per_pod: self.edges_per_pod,
                uplinks: up,
            },
        )
    }
}

/// Dragonfly with all-to-all router links inside a group and
/// `links_per_pair` global cables between every pair of groups. The plus
/// variant replaces each group with a two-tier leaf/spine where endpoints
/// sit on leaves and global cables terminate on spines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dragonfly {
    pub groups: usize,
    pub routers_per_group: usize,
    pub nodes_per_router: usize,
    pub rate_bps: u64,
    pub plus: bool,
    /// Global ports per router (per spine for the plus variant); `None`
    /// picks the smallest feasible value.
    pub global_ports_per_router: Option<usize>,
    pub links_per_pair: usize,
    pub latency: SimTime,
}

impl Dragonfly {
    fn ports_needed(&self) -> usize {
        (self.groups - 1) * self.links_per_pair
    }

    pub fn build(&self) -> Result<Topology> {
        positive("group count", self.groups)?;
        positive("routers per group", self.routers_per_group)?;
        positive("nodes per router", self.nodes_per_router)?;
        positive("global links per group pair", self.links_per_pair)?;
        check_rate(self.rate_bps)?;
        check_latency(self.latency)?;
        let a = self.routers_per_group;
        let needed = self.ports_needed();
        let h = match self.global_ports_per_router {
            Some(h) => h,
            None => needed.div_ceil(a),
        };
        if a * h < needed {
            return invalid(format!(
                "infeasible global wiring: {a} routers x {h} global ports < {needed} required"
            ));
        }
        let n = self.groups * a * self.nodes_per_router;
        let mut b = Builder::new(n, self.latency);
        // Routers carrying global ports, per group.
        let mut gateways: Vec<Vec<NodeId>> = Vec::new();
        let mut homes: Vec<Vec<NodeId>> = Vec::new();
        for g in 0..self.groups {
            if self.plus {
                let leaves: Vec<_> = (0..a).map(|_| b.switch(Tier::GroupLeaf, g as u32)).collect();
                let spines: Vec<_> = (0..a).map(|_| b.switch(Tier::GroupSpine, g as u32)).collect();
                homes.push(leaves);
                gateways.push(spines);
            } else {
                let routers: Vec<_> = (0..a).map(|_| b.switch(Tier::Router, g as u32)).collect();
                homes.push(routers.clone());
                gateways.push(routers);
            }
        }
        let mut e = 0;
        for group in &homes {
            for &r in group {
                for _ in 0..self.nodes_per_router {
                    b.attach(e, r, self.rate_bps);
                    e += 1;
                }
            }
        }
        for g in 0..self.groups {
            if self.plus {
                for &leaf in &homes[g] {
                    for &spine in &gateways[g] {
                        b.cable(leaf, spine, self.rate_bps);
                    }
                }
            } else {
                for i in 0..a {
                    for j in i + 1..a {
                        b.cable(homes[g][i], homes[g][j], self.rate_bps);
                    }
                }
            }
        }
        // Group g numbers its global ports by offset o = 1..groups-1 to
        // group (g + o) mod groups; consecutive ports fill a router.
        let port_router = |o: usize, copy: usize| -> usize {
            let port = (o - 1) * self.links_per_pair + copy;
            port / h
        };
        for gi in 0..self.groups {
            for gj in gi + 1..self.groups {
                let o_ij = gj - gi;
                let o_ji = self.groups - o_ij;
                for copy in 0..self.links_per_pair {
                    let ri = gateways[gi][port_router(o_ij, copy)];
                    let rj = gateways[gj][port_router(o_ji, copy)];
                    b.global_cable(ri, rj, self.rate_bps);
                }
            }
        }
        b.finish(
            if self.plus { "dragonfly-plus" } else { "dragonfly" },
            Family::Dragonfly {
                groups: self.groups,
                plus: self.plus,
            },
        )
    }
}

pub fn build_single_switch(n: usize, rate_bps: u64) -> Result<Topology> {
    SingleSwitch {
        nodes: n,
        rate_bps,
        latency: DEFAULT_LINK_LATENCY,
    }
    .build()
}

pub fn build_leaf_spine(
    leaves: usize,
    spines: usize,
    nodes_per_leaf: usize,
    rate_bps: u64,
) -> Result<Topology> {
    LeafSpine {
        leaves,
        spines,
        nodes_per_leaf,
        rate_bps,
        uplink_rate_bps: None,
        latency: DEFAULT_LINK_LATENCY,
    }
    .build()
}

/// Fat-tree with two edge switches per pod.
pub fn build_fat_tree(pods: usize, nodes_per_edge: usize, taper: f64, rate_bps: u64) -> Result<Topology> {
    FatTree {
        pods,
        edges_per_pod: 2,
        nodes_per_edge,
        taper,
        rate_bps,
        latency: DEFAULT_LINK_LATENCY,
    }
    .build()
}

pub fn build_dragonfly(
    groups: usize,
    routers_per_group: usize,
    nodes_per_router: usize,
    rate_bps: u64,
    plus: bool,
) -> Result<Topology> {
    Dragonfly {
        groups,
        routers_per_group,
        nodes_per_router,
        rate_bps,
        plus,
        global_ports_per_router: None,
        links_per_pair: 1,
        latency: DEFAULT_LINK_LATENCY,
    }
    .build()
}

impl Topology {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn num_endpoints(&self) -> usize {
        self.num_endpoints
    }

    pub fn num_switches(&self) -> usize {
        self.roles.len() - self.num_endpoints
    }

    pub fn num_nodes(&self) -> usize {
        self.roles.len()
    }

    pub fn role(&self, n: NodeId) -> Role {
        self.roles[n.index()]
    }

    pub fn is_endpoint(&self, n: NodeId) -> bool {
        n.index() < self.num_endpoints
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.index()]
    }

    pub fn out_links(&self, n: NodeId) -> &[LinkId] {
        &self.out[n.index()]
    }

    pub fn attachment(&self, endpoint: usize) -> Attachment {
        self.attach[endpoint]
    }

    pub fn edge_of(&self, endpoint: usize) -> NodeId {
        self.attach[endpoint].edge
    }

    pub fn endpoint_rate(&self, endpoint: usize) -> u64 {
        self.links[self.attach[endpoint].up.index()].rate_bps
    }

    /// Switch-to-switch links leaving `sw`.
    pub fn uplinks(&self, sw: NodeId) -> Vec<LinkId> {
        self.out[sw.index()]
            .iter()
            .copied()
            .filter(|l| !self.is_endpoint(self.links[l.index()].to))
            .collect()
    }

    /// Structural validation of the topology invariants.
    pub fn check_invariants(&self) -> Result<()> {
        if self.num_endpoints == 0 {
            return invalid("topology has no endpoints");
        }
        for (i, l) in self.links.iter().enumerate() {
            if l.rate_bps == 0 {
                return invalid(format!("link {i} has zero capacity"));
            }
            if l.from == l.to {
                return invalid(format!("link {i} is a self loop"));
            }
            if l.from.index() >= self.roles.len() || l.to.index() >= self.roles.len() {
                return invalid(format!("link {i} references an unknown node"));
            }
            if self.is_endpoint(l.from) && self.is_endpoint(l.to) {
                return invalid(format!("link {i} joins two endpoints"));
            }
            if let (Role::Switch { tier: a, .. }, Role::Switch { tier: b, .. }) =
                (self.role(l.from), self.role(l.to))
            {
                let same_tier_ok = matches!(a, Tier::Router) || l.global;
                if a == b && !same_tier_ok {
                    return invalid(format!("link {i} joins two {a:?} switches"));
                }
            }
        }
        for e in 0..self.num_endpoints {
            let node = NodeId(e as u32);
            let outs = &self.out[e];
            let ins = self.links.iter().filter(|l| l.to == node).count();
            if outs.len() != 1 || ins != 1 {
                return invalid(format!("endpoint {e} must attach to exactly one switch"));
            }
            let a = self.attach[e];
            if self.links[a.up.index()].to != a.edge || self.links[a.down.index()].from != a.edge {
                return invalid(format!("endpoint {e} attachment is inconsistent"));
            }
        }
        // Connectivity over the undirected graph.
        let mut seen = vec![false; self.roles.len()];
        let mut q = VecDeque::from([NodeId(0)]);
        seen[0] = true;
        while let Some(n) = q.pop_front() {
            for &l in &self.out[n.index()] {
                let to = self.links[l.index()].to;
                if !seen[to.index()] {
                    seen[to.index()] = true;
                    q.push_back(to);
                }
            }
        }
        if let Some(n) = seen.iter().position(|s| !*s) {
            return invalid(format!("topology is disconnected at node {n}"));
        }
        Ok(())
    }

    fn global_budget(&self) -> Option<u32> {
        match self.family {
            Family::Dragonfly { .. } => Some(1),
            _ => None,
        }
    }

    fn group_of(&self, n: NodeId) -> u32 {
        match self.role(n) {
            Role::Switch { group, .. } => group,
            Role::Endpoint => self.group_of(self.edge_of(n.index())),
        }
    }

    /// All shortest switch-level routes from `from` to `to`. In dragonflies
    /// a route may use at most one global cable.
    pub fn shortest_switch_paths(&self, from: NodeId, to: NodeId) -> Vec<Vec<LinkId>> {
        if from == to {
            return vec![Vec::new()];
        }
        let budget = self.global_budget();
        let layers = budget.map_or(1, |b| b as usize + 1);
        let n = self.roles.len();
        // dist[(node, globals_used)] to `to`, computed backwards.
        let idx = |node: NodeId, used: usize| node.index() * layers + used;
        let mut dist = vec![u32::MAX; n * layers];
        let mut incoming: Vec<Vec<LinkId>> = vec![Vec::new(); n];
        for (i, l) in self.links.iter().enumerate() {
            incoming[l.to.index()].push(LinkId(i as u32));
        }
        let mut q = VecDeque::new();
        for used in 0..layers {
            dist[idx(to, used)] = 0;
            q.push_back((to, used));
        }
        while let Some((node, used)) = q.pop_front() {
            let d = dist[idx(node, used)];
            for &l in &incoming[node.index()] {
                let link = &self.links[l.index()];
                if self.is_endpoint(link.from) {
                    continue;
                }
                let prev_used = if link.global && budget.is_some() {
                    if used == 0 {
                        continue;
                    }
                    used - 1
                } else {
                    used
                };
                let k = idx(link.from, prev_used);
                if dist[k] == u32::MAX {
                    dist[k] = d + 1;
                    q.push_back((link.from, prev_used));
                }
            }
        }
        if dist[idx(from, 0)] == u32::MAX {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut stack = Vec::new();
        self.dfs_shortest(from, 0, to, &dist, layers, budget.is_some(), &mut stack, &mut out);
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs_shortest(
        &self,
        node: NodeId,
        used: usize,
        to: NodeId,
        dist: &[u32],
        layers: usize,
        budgeted: bool,
        stack: &mut Vec<LinkId>,
        out: &mut Vec<Vec<LinkId>>,
    ) {
        if node == to {
            out.push(stack.clone());
            return;
        }
        let d = dist[node.index() * layers + used];
        for &l in &self.out[node.index()] {
            let link = &self.links[l.index()];
            if self.is_endpoint(link.to) {
                continue;
            }
            let next_used = if link.global && budgeted { used + 1 } else { used };
            if next_used >= layers {
                continue;
            }
            if dist[link.to.index() * layers + next_used] == d.wrapping_sub(1) {
                stack.push(l);
                self.dfs_shortest(link.to, next_used, to, dist, layers, budgeted, stack, out);
                stack.pop();
            }
        }
    }

    fn detour_hubs(&self, src_sw: NodeId, dst_sw: NodeId) -> Vec<NodeId> {
        match self.family {
            Family::SingleSwitch => Vec::new(),
            Family::LeafSpine { .. } | Family::FatTree { .. } | Family::Custom => {
                let edges: BTreeSet<NodeId> = self.attach.iter().map(|a| a.edge).collect();
                edges.into_iter().filter(|&e| e != src_sw && e != dst_sw).collect()
            }
            Family::Dragonfly { groups, .. } => {
                let sg = self.group_of(src_sw);
                let dg = self.group_of(dst_sw);
                let mut hubs = Vec::new();
                for k in 0..groups as u32 {
                    if k == sg || k == dg {
                        continue;
                    }
                    // Lowest-id switch in group k holding a global cable to dg.
                    let hub = self
                        .links
                        .iter()
                        .filter(|l| l.global && self.group_of(l.from) == k && self.group_of(l.to) == dg)
                        .map(|l| l.from)
                        .min();
                    hubs.extend(hub);
                }
                hubs
            }
        }
    }

    /// Switch-level candidate routes between two edge switches.
    pub fn switch_paths(&self, src_sw: NodeId, dst_sw: NodeId, hint: PathHint) -> Vec<(Vec<LinkId>, bool)> {
        let mut minimal = self.shortest_switch_paths(src_sw, dst_sw);
        minimal.sort();
        let mut out: Vec<(Vec<LinkId>, bool)> = minimal.iter().cloned().map(|p| (p, true)).collect();
        if hint == PathHint::MinimalAndNonMinimal && src_sw != dst_sw {
            let min_hops = minimal.first().map_or(0, |p| p.len());
            let mut detours: Vec<Vec<LinkId>> = Vec::new();
            for hub in self.detour_hubs(src_sw, dst_sw) {
                let mut firsts = self.shortest_switch_paths(src_sw, hub);
                let mut seconds = self.shortest_switch_paths(hub, dst_sw);
                firsts.sort();
                seconds.sort();
                // First simple concatenation in lexicographic order.
                let found = firsts.iter().find_map(|a| {
                    seconds.iter().find_map(|b| {
                        let mut p = a.clone();
                        p.extend_from_slice(b);
                        (p.len() > min_hops && self.is_simple(src_sw, &p)).then_some(p)
                    })
                });
                if let Some(p) = found {
                    if !detours.contains(&p) {
                        detours.push(p);
                    }
                }
            }
            detours.sort();
            out.extend(detours.into_iter().map(|p| (p, false)));
        }
        out
    }

    fn is_simple(&self, start: NodeId, links: &[LinkId]) -> bool {
        let mut seen = BTreeSet::from([start]);
        links.iter().all(|l| seen.insert(self.links[l.index()].to))
    }

    /// Checks that `links` is a contiguous route from endpoint `src` to
    /// endpoint `dst`.
    pub fn validate_route(&self, src: usize, dst: usize, links: &[LinkId]) -> Result<()> {
        if links.len() < 2 {
            return invalid("route must contain at least two links");
        }
        let mut at = NodeId(src as u32);
        for &l in links {
            let link = self
                .links
                .get(l.index())
                .ok_or_else(|| Error::InvalidParameter(format!("unknown link {l}")))?;
            if link.from != at {
                return invalid(format!("route is not contiguous at link {l}"));
            }
            at = link.to;
        }
        if at != NodeId(dst as u32) {
            return invalid("route does not end at the destination");
        }
        Ok(())
    }
}

/// Candidate routes between two endpoints, ordered minimal first and
/// lexicographically by link id within each class.
pub fn enumerate_paths(topo: &Topology, src: usize, dst: usize, hint: PathHint) -> Result<PathSet> {
    let n = topo.num_endpoints();
    if src >= n || dst >= n {
        return invalid(format!("endpoint out of range (have {n})"));
    }
    if src == dst {
        return invalid("source and destination are the same endpoint");
    }
    let sa = topo.attachment(src);
    let da = topo.attachment(dst);
    let routes = topo.switch_paths(sa.edge, da.edge, hint);
    if routes.is_empty() {
        return Err(Error::Internal(format!("no route between endpoints {src} and {dst}")));
    }
    let paths = routes
        .into_iter()
        .map(|(mid, minimal)| {
            let mut links = Vec::with_capacity(mid.len() + 2);
            links.push(sa.up);
            links.extend(mid);
            links.push(da.down);
            Path { links, minimal }
        })
        .collect();
    Ok(PathSet { paths })
}

/// One bidirectional cable of a [`CustomTopology`]. Node ids below the
/// endpoint count are endpoints; the rest index `switches` in order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cable {
    pub a: u32,
    pub b: u32,
    pub rate_bps: u64,
    pub latency: SimTime,
}

/// Arbitrary fabric described cable by cable.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomTopology {
    pub name: String,
    pub endpoints: usize,
    pub switches: Vec<Tier>,
    pub cables: Vec<Cable>,
}

impl CustomTopology {
    pub fn build(&self) -> Result<Topology> {
        positive("endpoint count", self.endpoints)?;
        positive("switch count", self.switches.len())?;
        let total = (self.endpoints + self.switches.len()) as u32;
        let mut b = Builder::new(self.endpoints, DEFAULT_LINK_LATENCY);
        for &t in &self.switches {
            b.switch(t, 0);
        }
        for c in &self.cables {
            check_rate(c.rate_bps)?;
            check_latency(c.latency)?;
            if c.a >= total || c.b >= total {
                return invalid(format!("cable {}-{} references an unknown node", c.a, c.b));
            }
            let ep = self.endpoints as u32;
            match (c.a < ep, c.b < ep) {
                (true, true) => return invalid("cable joins two endpoints"),
                (true, false) | (false, true) => {
                    let (e, s) = if c.a < ep { (c.a, c.b) } else { (c.b, c.a) };
                    if b.attach[e as usize].is_some() {
                        return invalid(format!("endpoint {e} must attach to exactly one switch"));
                    }
                    b.attach_with(e as usize, NodeId(s), c.rate_bps, c.latency);
                }
                (false, false) => {
                    b.latency = c.latency;
                    b.cable(NodeId(c.a), NodeId(c.b), c.rate_bps);
                }
            }
        }
        b.finish(&self.name, Family::Custom)
    }
}

/// Named fabric presets modelled on the evaluated systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    HaicguSw,
    NanjingLs,
    Cresco8Ft,
    LeonardoDfp,
    LumiDf,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::HaicguSw,
        Preset::NanjingLs,
        Preset::Cresco8Ft,
        Preset::LeonardoDfp,
        Preset::LumiDf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::HaicguSw => "haicgu-sw",
            Preset::NanjingLs => "nanjing-ls",
            Preset::Cresco8Ft => "cresco8-ft",
            Preset::LeonardoDfp => "leonardo-dfp",
            Preset::LumiDf => "lumi-df",
        }
    }

    pub fn from_name(s: &str) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn default_rate(self) -> u64 {
        match self {
            Preset::HaicguSw => 100 * GBPS,
            Preset::NanjingLs | Preset::Cresco8Ft => 200 * GBPS,
            Preset::LeonardoDfp => 400 * GBPS,
            Preset::LumiDf => 800 * GBPS,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::HaicguSw => "single switch, 100 Gb/s RoCE, host ingest 90% of line rate",
            Preset::NanjingLs => "2 leaves x 2 spines, 200 Gb/s endpoints, 400 Gb/s non-blocking uplinks, NSLB",
            Preset::Cresco8Ft => "1.67:1 tapered fat-tree, 8 nodes per edge, 200 Gb/s InfiniBand",
            Preset::LeonardoDfp => "Dragonfly+, 2 leaves + 2 spines per group, 4 nodes per leaf, 400 Gb/s",
            Preset::LumiDf => "Dragonfly, 4 routers per group, 2 nodes per router, 800 Gb/s",
        }
    }

    /// Concrete fabric large enough for `nodes` endpoints.
    pub fn shape(self, nodes: usize, rate_bps: u64, latency: SimTime) -> Result<TopologyShape> {
        positive("node count", nodes)?;
        Ok(match self {
            Preset::HaicguSw => TopologyShape::SingleSwitch(SingleSwitch {
                nodes,
                rate_bps,
                latency,
            }),
            Preset::NanjingLs => {
                let per_leaf = nodes.div_ceil(2);
                TopologyShape::LeafSpine(LeafSpine {
                    leaves: 2,
                    spines: 2,
                    nodes_per_leaf: per_leaf,
                    rate_bps,
                    uplink_rate_bps: Some(rate_bps * per_leaf as u64 / 2),
                    latency,
                })
            }
            Preset::Cresco8Ft => {
                let per_edge = 8usize.min(nodes);
                let edges = nodes.div_ceil(per_edge);
                let (pods, edges_per_pod) = if edges <= 2 { (1, edges.max(1)) } else { (edges.div_ceil(2), 2) };
                TopologyShape::FatTree(FatTree {
                    pods,
                    edges_per_pod,
                    nodes_per_edge: per_edge,
                    taper: 1.67,
                    rate_bps,
                    latency,
                })
            }
            Preset::LeonardoDfp => TopologyShape::Dragonfly(Dragonfly {
                groups: nodes.div_ceil(8).max(2),
                routers_per_group: 2,
                nodes_per_router: 4,
                rate_bps,
                plus: true,
                global_ports_per_router: None,
                links_per_pair: 1,
                latency,
            }),
            Preset::LumiDf => TopologyShape::Dragonfly(Dragonfly {
                groups: nodes.div_ceil(8).max(2),
                routers_per_group: 4,
                nodes_per_router: 2,
                rate_bps,
                plus: false,
                global_ports_per_router: None,
                links_per_pair: 1,
                latency,
            }),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopologyShape {
    SingleSwitch(SingleSwitch),
    LeafSpine(LeafSpine),
    FatTree(FatTree),
    Dragonfly(Dragonfly),
}

impl TopologyShape {
    pub fn build(&self) -> Result<Topology> {
        match self {
            TopologyShape::SingleSwitch(s) => s.build(),
            TopologyShape::LeafSpine(s) => s.build(),
            TopologyShape::FatTree(s) => s.build(),
            TopologyShape::Dragonfly(s) => s.build(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const R100: u64 = 100 * GBPS;
    const R200: u64 = 200 * GBPS;

    #[test]
    fn single_switch_counts() {
        let t = build_single_switch(10, R100).unwrap();
        assert_eq!(t.num_endpoints(), 10);
        assert_eq!(t.num_switches(), 1);
        assert_eq!(t.links().len(), 20);
    }

    #[test]
    fn single_switch_one_node_has_no_pairs() {
        let t = build_single_switch(1, R100).unwrap();
        assert_eq!(t.num_endpoints(), 1);
        assert!(enumerate_paths(&t, 0, 0, PathHint::MinimalOnly).is_err());
    }

    #[test]
    fn single_switch_zero_rejected() {
        assert!(matches!(build_single_switch(0, R100), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn single_switch_paths_have_two_links() {
        let t = build_single_switch(4, R200).unwrap();
        for s in 0..4 {
            for d in 0..4 {
                if s != d {
                    let ps = enumerate_paths(&t, s, d, PathHint::MinimalAndNonMinimal).unwrap();
                    assert_eq!(ps.len(), 1);
                    assert_eq!(ps.paths[0].hops(), 2);
                }
            }
        }
    }

    #[test]
    fn leaf_spine_counts_and_paths() {
        let t = build_leaf_spine(2, 2, 4, R200).unwrap();
        assert_eq!(t.num_endpoints(), 8);
        assert_eq!(t.num_switches(), 4);
        let ps = enumerate_paths(&t, 0, 5, PathHint::MinimalOnly).unwrap();
        assert_eq!(ps.len(), 2);
        assert!(ps.paths.iter().all(|p| p.minimal && p.hops() == 4));
        let local = enumerate_paths(&t, 0, 1, PathHint::MinimalOnly).unwrap();
        assert_eq!(local.len(), 1);
    }

    #[test]
    fn leaf_spine_minimal_instance() {
        let t = build_leaf_spine(1, 1, 2, R100).unwrap();
        let ps = enumerate_paths(&t, 0, 1, PathHint::MinimalAndNonMinimal).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps.paths[0].hops(), 2);
    }

    #[test]
    fn leaf_spine_zero_rejected() {
        assert!(build_leaf_spine(0, 2, 4, R100).is_err());
        assert!(build_leaf_spine(2, 0, 4, R100).is_err());
        assert!(build_leaf_spine(2, 2, 0, R100).is_err());
    }

    #[test]
    fn leaf_spine_nonminimal_detours_via_other_leaf() {
        let t = build_leaf_spine(3, 2, 1, R100).unwrap();
        let ps = enumerate_paths(&t, 0, 1, PathHint::MinimalAndNonMinimal).unwrap();
        assert_eq!(ps.minimal_count(), 2);
        let nm: Vec<_> = ps.paths.iter().filter(|p| !p.minimal).collect();
        assert_eq!(nm.len(), 1);
        assert_eq!(nm[0].hops(), 6);
    }

    fn edge_capacity(t: &Topology, edge: NodeId) -> (u64, u64) {
        let up: u64 = t.uplinks(edge).iter().map(|l| t.link(*l).rate_bps).sum();
        let down: u64 = t
            .out_links(edge)
            .iter()
            .filter(|l| t.is_endpoint(t.link(**l).to))
            .map(|l| t.link(*l).rate_bps)
            .sum();
        (up, down)
    }

    #[test]
    fn fat_tree_taper_ratio() {
        let ft = FatTree {
            pods: 2,
            edges_per_pod: 2,
            nodes_per_edge: 8,
            taper: 1.67,
            rate_bps: R200,
            latency: DEFAULT_LINK_LATENCY,
        };
        let t = ft.build().unwrap();
        for e in 0..t.num_endpoints() {
            let (up, down) = edge_capacity(&t, t.edge_of(e));
            assert!(up as f64 <= down as f64 / 1.67 + R200 as f64);
            assert!(up as f64 >= down as f64 / 1.67 - R200 as f64);
        }
    }

    #[test]
    fn fat_tree_nonblocking() {
        let t = build_fat_tree(2, 4, 1.0, R100).unwrap();
        for e in 0..t.num_endpoints() {
            let (up, down) = edge_capacity(&t, t.edge_of(e));
            assert_eq!(up, down);
        }
    }

    #[test]
    fn fat_tree_cross_pod_paths() {
        let t = build_fat_tree(2, 4, 1.0, R100).unwrap();
        // endpoint 0 is in pod 0, the last endpoint in pod 1.
        let last = t.num_endpoints() - 1;
        let ps = enumerate_paths(&t, 0, last, PathHint::MinimalOnly).unwrap();
        assert!(ps.len() >= 2);
        assert!(ps.paths.iter().all(|p| p.hops() == 6));
    }

    #[test]
    fn fat_tree_taper_below_one_rejected() {
        assert!(build_fat_tree(2, 4, 0.9, R100).is_err());
    }

    #[test]
    fn dragonfly_single_minimal_route_per_group_pair() {
        let t = build_dragonfly(4, 2, 2, R100, false).unwrap();
        // endpoints 0..4 in group 0, 4..8 in group 1, ...
        for dst in 4..t.num_endpoints() {
            let ps = enumerate_paths(&t, 0, dst, PathHint::MinimalOnly).unwrap();
            assert_eq!(ps.len(), 1, "dst {dst}");
        }
    }

    #[test]
    fn dragonfly_nonminimal_adds_one_group() {
        let t = build_dragonfly(4, 2, 2, R100, false).unwrap();
        let ps = enumerate_paths(&t, 0, 12, PathHint::MinimalAndNonMinimal).unwrap();
        let min_hops = ps.minimal().map(|p| p.hops()).min().unwrap();
        let nm: Vec<_> = ps.paths.iter().filter(|p| !p.minimal).collect();
        assert!(!nm.is_empty() && nm.len() <= 2);
        for p in nm {
            let globals = p.links.iter().filter(|l| t.link(**l).global).count();
            assert_eq!(globals, 2);
            assert!(p.hops() > min_hops && p.hops() <= min_hops + 2);
        }
    }

    #[test]
    fn dragonfly_one_group_is_mesh() {
        let t = build_dragonfly(1, 4, 1, R100, false).unwrap();
        assert!(t.links().iter().all(|l| !l.global));
        let ps = enumerate_paths(&t, 0, 3, PathHint::MinimalOnly).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps.paths[0].hops(), 3);
    }

    #[test]
    fn dragonfly_infeasible_wiring() {
        let df = Dragonfly {
            groups: 9,
            routers_per_group: 2,
            nodes_per_router: 1,
            rate_bps: R100,
            plus: false,
            global_ports_per_router: Some(2),
            links_per_pair: 1,
            latency: DEFAULT_LINK_LATENCY,
        };
        assert!(matches!(df.build(), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn dragonfly_plus_builds() {
        let t = build_dragonfly(3, 2, 4, R100, true).unwrap();
        assert_eq!(t.num_endpoints(), 24);
        let ps = enumerate_paths(&t, 0, 23, PathHint::MinimalAndNonMinimal).unwrap();
        assert!(ps.minimal_count() >= 1);
    }

    #[test]
    fn presets_build_for_common_sizes() {
        for p in Preset::ALL {
            for n in [2usize, 8, 16, 32] {
                let shape = p.shape(n, p.default_rate(), DEFAULT_LINK_LATENCY).unwrap();
                let t = shape.build().unwrap();
                assert!(t.num_endpoints() >= n, "{} {n}", p.name());
            }
        }
    }
}
