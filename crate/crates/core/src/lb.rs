//! Path selection over enumerated candidate routes.

use std::collections::BTreeMap;

use crate::error::{invalid, Result};
use crate::flow::{FlowId, FlowKey};
use crate::topology::{LinkId, NodeId, Path, PathSet};
use crate::units::SimTime;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveParams {
    /// Minimal first hops must all exceed this fraction of queue capacity
    /// before non-minimal routes are considered.
    pub nonminimal_bias: f64,
    /// Period at which active flows re-evaluate their route; `None`
    /// restricts decisions to flow start.
    pub reevaluate: Option<SimTime>,
    /// Age of the occupancy view used for decisions.
    pub staleness: SimTime,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        AdaptiveParams {
            nonminimal_bias: 0.5,
            reevaluate: Some(SimTime::from_us(5)),
            staleness: SimTime::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LbPolicy {
    /// Destination-modulo selection among minimal routes.
    Deterministic,
    Ecmp { seed: u64 },
    Adaptive(AdaptiveParams),
    Nslb,
}

impl LbPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            LbPolicy::Deterministic => "deterministic",
            LbPolicy::Ecmp { .. } => "ecmp",
            LbPolicy::Adaptive(_) => "adaptive",
            LbPolicy::Nslb => "nslb",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LbPolicy::Adaptive(p) = self {
            if !(0.0..=1.0).contains(&p.nonminimal_bias) {
                return invalid("adaptive nonminimal_bias must be in [0, 1]");
            }
            if p.reevaluate == Some(SimTime::ZERO) {
                return invalid("adaptive reevaluate interval must be positive");
            }
        }
        Ok(())
    }
}

/// The splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn ecmp_hash(key: FlowKey, seed: u64) -> u64 {
    mix64(key.as_u64() ^ mix64(seed))
}

fn nonempty(paths: &PathSet) -> Result<()> {
    if paths.is_empty() {
        return invalid("empty path set");
    }
    Ok(())
}

/// Index of the selected route; ECMP hashes among the minimal routes.
pub fn ecmp_select(key: FlowKey, paths: &PathSet, seed: u64) -> Result<usize> {
    nonempty(paths)?;
    let m = paths.minimal_count().max(1);
    Ok((ecmp_hash(key, seed) % m as u64) as usize)
}

/// Destination-digit routing over the minimal paths: at every hop where
/// the candidates branch, the branch is picked by the next digit of the
/// destination id in the radix of that hop's fan-out. All traffic to one
/// destination therefore converges on a single tree, as with static
/// destination-based fabric routing.
pub fn deterministic_select(key: FlowKey, paths: &PathSet) -> Result<usize> {
    nonempty(paths)?;
    let m = paths.minimal_count().max(1);
    let mut cand: Vec<usize> = (0..m).collect();
    let mut digits = key.dst as usize;
    let mut hop = 0;
    while cand.len() > 1 {
        let mut next: Vec<_> = cand.iter().filter_map(|&i| paths.paths[i].links.get(hop).copied()).collect();
        next.sort();
        next.dedup();
        if next.is_empty() {
            break;
        }
        if next.len() > 1 {
            let pick = next[digits % next.len()];
            digits /= next.len();
            cand.retain(|&i| paths.paths[i].links.get(hop) == Some(&pick));
        }
        hop += 1;
    }
    Ok(cand[0])
}

/// Occupancy-driven choice. `occupancy` reports the bytes queued at a
/// link's egress; `capacity` is the per-port queue capacity in bytes.
pub fn adaptive_select<F>(paths: &PathSet, occupancy: F, capacity: u64, bias: f64) -> Result<usize>
where
    F: Fn(LinkId) -> u64,
{
    nonempty(paths)?;
    let cost = |p: &Path| {
        let first = p.first_switch_hop().map(&occupancy).unwrap_or(0);
        let sum: u64 = p.links.iter().skip(1).map(|l| occupancy(*l)).sum();
        (first, sum)
    };
    let best_of = |minimal: bool| {
        paths
            .paths
            .iter()
            .enumerate()
            .filter(|(_, p)| p.minimal == minimal)
            .map(|(i, p)| (cost(p), i))
            .min()
    };
    let Some(((first, sum), idx)) = best_of(true) else {
        return Ok(0);
    };
    let threshold = bias * capacity as f64;
    if first as f64 > threshold {
        if let Some(((nf, ns), nidx)) = best_of(false) {
            if (nf, ns) < (first, sum) {
                return Ok(nidx);
            }
        }
    }
    Ok(idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct EdgePair {
    pub src_edge: NodeId,
    pub dst_edge: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Demand {
    pub flows: u32,
    pub rate_bps: f64,
}

/// Active inter-edge flows and their uplink assignment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowMatrix {
    pub flows: BTreeMap<FlowId, (EdgePair, f64)>,
    pub assignment: BTreeMap<FlowId, LinkId>,
}

impl FlowMatrix {
    pub fn insert(&mut self, id: FlowId, pair: EdgePair, rate_bps: f64) {
        self.flows.insert(id, (pair, rate_bps));
    }

    pub fn remove(&mut self, id: FlowId) {
        self.flows.remove(&id);
        self.assignment.remove(&id);
    }

    pub fn demand(&self) -> BTreeMap<EdgePair, Demand> {
        let mut d: BTreeMap<EdgePair, Demand> = BTreeMap::new();
        for (pair, rate) in self.flows.values() {
            let e = d.entry(*pair).or_default();
            e.flows += 1;
            e.rate_bps += rate;
        }
        d
    }

    /// Number of assigned flows per uplink.
    pub fn loads(&self) -> BTreeMap<LinkId, usize> {
        let mut m = BTreeMap::new();
        for l in self.assignment.values() {
            *m.entry(*l).or_insert(0) += 1;
        }
        m
    }
}

/// Assigns every unassigned flow to the uplink of its source edge that
/// carries the fewest flows, preferring uplinks not yet used towards the
/// same destination edge and then the lowest link id. Flows that already
/// hold a valid assignment keep it.
pub fn nslb_assign(matrix: &FlowMatrix, uplinks: &BTreeMap<NodeId, Vec<LinkId>>) -> Result<FlowMatrix> {
    let mut out = FlowMatrix {
        flows: matrix.flows.clone(),
        assignment: BTreeMap::new(),
    };
    let mut load: BTreeMap<LinkId, usize> = BTreeMap::new();
    let mut same_dst: BTreeMap<(LinkId, NodeId), usize> = BTreeMap::new();
    let ups_of = |edge: NodeId| -> Result<&Vec<LinkId>> {
        match uplinks.get(&edge) {
            Some(u) if !u.is_empty() => Ok(u),
            _ => invalid(format!("edge switch {} has no uplinks", edge.0)),
        }
    };
    for (id, (pair, _)) in &matrix.flows {
        let ups = ups_of(pair.src_edge)?;
        if let Some(l) = matrix.assignment.get(id) {
            if ups.contains(l) {
                out.assignment.insert(*id, *l);
                *load.entry(*l).or_insert(0) += 1;
                *same_dst.entry((*l, pair.dst_edge)).or_insert(0) += 1;
            }
        }
    }
    for (id, (pair, _)) in &matrix.flows {
        if out.assignment.contains_key(id) {
            continue;
        }
        let ups = ups_of(pair.src_edge)?;
        let best = ups
            .iter()
            .copied()
            .min_by_key(|l| {
                (
                    load.get(l).copied().unwrap_or(0),
                    same_dst.get(&(*l, pair.dst_edge)).copied().unwrap_or(0),
                    *l,
                )
            })
            .expect("nonempty uplinks");
        out.assignment.insert(*id, best);
        *load.entry(best).or_insert(0) += 1;
        *same_dst.entry((best, pair.dst_edge)).or_insert(0) += 1;
    }
    Ok(out)
}

/// First route whose first switch hop is `uplink`.
pub fn path_via_uplink(paths: &PathSet, uplink: LinkId) -> Option<usize> {
    paths
        .paths
        .iter()
        .position(|p| p.minimal && p.first_switch_hop() == Some(uplink))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_fat_tree, build_leaf_spine, build_single_switch, enumerate_paths, PathHint};
    use crate::units::GBPS;

    fn leaf_spine_paths() -> PathSet {
        let t = build_leaf_spine(2, 2, 4, 200 * GBPS).unwrap();
        enumerate_paths(&t, 0, 4, PathHint::MinimalAndNonMinimal).unwrap()
    }

    #[test]
    fn ecmp_single_path() {
        let t = build_single_switch(4, 100 * GBPS).unwrap();
        let ps = enumerate_paths(&t, 0, 1, PathHint::MinimalOnly).unwrap();
        for seed in 0..50 {
            assert_eq!(ecmp_select(FlowKey::new(0, 1), &ps, seed).unwrap(), 0);
        }
    }

    #[test]
    fn ecmp_is_sticky() {
        let ps = leaf_spine_paths();
        let a = ecmp_select(FlowKey::new(0, 4), &ps, 99).unwrap();
        for _ in 0..10 {
            assert_eq!(ecmp_select(FlowKey::new(0, 4), &ps, 99).unwrap(), a);
        }
    }

    #[test]
    fn ecmp_spreads_over_seeds() {
        let ps = leaf_spine_paths();
        let picks: std::collections::BTreeSet<_> = (0..64)
            .map(|s| ecmp_select(FlowKey::new(0, 4), &ps, s).unwrap())
            .collect();
        assert_eq!(picks.len(), 2);
    }

    #[test]
    fn deterministic_routes_form_destination_trees() {
        let t = build_fat_tree(2, 8, 1.67, 200 * GBPS).unwrap();
        // every source reaches a given destination through one final downlink
        for dst in [0usize, 1, 9] {
            let mut last_down = std::collections::BTreeSet::new();
            for src in 0..32 {
                if src == dst {
                    continue;
                }
                let ps = enumerate_paths(&t, src, dst, PathHint::MinimalOnly).unwrap();
                let i = deterministic_select(FlowKey::new(src, dst), &ps).unwrap();
                let l = &ps.paths[i].links;
                if l.len() > 2 {
                    last_down.insert(l[l.len() - 2]);
                }
            }
            assert_eq!(last_down.len(), 1, "dst {dst}");
        }
        // neighbouring destinations descend through different aggregation switches
        let ps0 = enumerate_paths(&t, 31, 0, PathHint::MinimalOnly).unwrap();
        let ps1 = enumerate_paths(&t, 31, 1, PathHint::MinimalOnly).unwrap();
        let a = &ps0.paths[deterministic_select(FlowKey::new(31, 0), &ps0).unwrap()].links;
        let b = &ps1.paths[deterministic_select(FlowKey::new(31, 1), &ps1).unwrap()].links;
        assert_ne!(a[a.len() - 2], b[b.len() - 2]);
    }

    #[test]
    fn empty_path_set_rejected() {
        let ps = PathSet::default();
        assert!(ecmp_select(FlowKey::new(0, 1), &ps, 0).is_err());
        assert!(deterministic_select(FlowKey::new(0, 1), &ps).is_err());
        assert!(adaptive_select(&ps, |_| 0, 1, 0.5).is_err());
    }

    #[test]
    fn adaptive_idle_takes_first_minimal() {
        let ps = leaf_spine_paths();
        assert_eq!(adaptive_select(&ps, |_| 0, 1 << 18, 0.5).unwrap(), 0);
    }

    #[test]
    fn adaptive_avoids_congested_spine() {
        let ps = leaf_spine_paths();
        let hot = ps.paths[0].first_switch_hop().unwrap();
        let pick = adaptive_select(&ps, |l| if l == hot { 100_000 } else { 0 }, 1 << 18, 0.5).unwrap();
        assert_eq!(pick, 1);
    }

    #[test]
    fn adaptive_goes_nonminimal_when_all_minimal_hot() {
        // Three candidates: two minimal through hot links, one idle detour.
        let ps = PathSet {
            paths: vec![
                Path {
                    links: vec![LinkId(0), LinkId(1), LinkId(2)],
                    minimal: true,
                },
                Path {
                    links: vec![LinkId(0), LinkId(3), LinkId(2)],
                    minimal: true,
                },
                Path {
                    links: vec![LinkId(0), LinkId(4), LinkId(5), LinkId(2)],
                    minimal: false,
                },
            ],
        };
        let cap = 100_000;
        let occ = |l: LinkId| match l.0 {
            1 | 3 => 60_000,
            _ => 0,
        };
        assert_eq!(adaptive_select(&ps, occ, cap, 0.5).unwrap(), 2);
        // Below the bias the minimal route is kept.
        let occ = |l: LinkId| match l.0 {
            1 | 3 => 40_000,
            _ => 0,
        };
        assert_eq!(adaptive_select(&ps, occ, cap, 0.5).unwrap(), 0);
    }

    fn pair(s: u32, d: u32) -> EdgePair {
        EdgePair {
            src_edge: NodeId(s),
            dst_edge: NodeId(d),
        }
    }

    fn ups() -> BTreeMap<NodeId, Vec<LinkId>> {
        BTreeMap::from([(NodeId(10), vec![LinkId(5), LinkId(7)])])
    }

    #[test]
    fn nslb_two_flows_distinct_uplinks() {
        let mut m = FlowMatrix::default();
        m.insert(FlowId(1), pair(10, 11), 1.0);
        m.insert(FlowId(2), pair(10, 11), 1.0);
        let a = nslb_assign(&m, &ups()).unwrap();
        assert_ne!(a.assignment[&FlowId(1)], a.assignment[&FlowId(2)]);
    }

    #[test]
    fn nslb_single_flow_lowest_uplink() {
        let mut m = FlowMatrix::default();
        m.insert(FlowId(3), pair(10, 11), 1.0);
        let a = nslb_assign(&m, &ups()).unwrap();
        assert_eq!(a.assignment[&FlowId(3)], LinkId(5));
    }

    #[test]
    fn nslb_three_flows_two_uplinks() {
        let mut m = FlowMatrix::default();
        for i in 0..3 {
            m.insert(FlowId(i), pair(10, 11), 1.0);
        }
        let a = nslb_assign(&m, &ups()).unwrap();
        let mut loads: Vec<usize> = a.loads().into_values().collect();
        loads.sort();
        assert_eq!(loads, vec![1, 2]);
    }

    #[test]
    fn nslb_keeps_existing() {
        let mut m = FlowMatrix::default();
        m.insert(FlowId(1), pair(10, 11), 1.0);
        m.assignment.insert(FlowId(1), LinkId(7));
        m.insert(FlowId(2), pair(10, 11), 1.0);
        let a = nslb_assign(&m, &ups()).unwrap();
        assert_eq!(a.assignment[&FlowId(1)], LinkId(7));
        assert_eq!(a.assignment[&FlowId(2)], LinkId(5));
    }

    #[test]
    fn nslb_zero_uplinks_rejected() {
        let mut m = FlowMatrix::default();
        m.insert(FlowId(1), pair(10, 11), 1.0);
        let u = BTreeMap::from([(NodeId(10), vec![])]);
        assert!(nslb_assign(&m, &u).is_err());
    }

    #[test]
    fn demand_aggregates_per_pair() {
        let mut m = FlowMatrix::default();
        m.insert(FlowId(1), pair(10, 11), 2.0);
        m.insert(FlowId(2), pair(10, 11), 3.0);
        m.insert(FlowId(3), pair(10, 12), 1.0);
        let d = m.demand();
        assert_eq!(d[&pair(10, 11)].flows, 2);
        assert_eq!(d[&pair(10, 11)].rate_bps, 5.0);
        assert_eq!(d.len(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn selectors_return_members(seed in any::<u64>(), s in 0usize..8, d in 0usize..8,
                                        occ in proptest::collection::vec(0u64..300_000, 32)) {
                prop_assume!(s != d);
                let t = build_leaf_spine(2, 2, 4, 200 * GBPS).unwrap();
                let ps = enumerate_paths(&t, s, d, PathHint::MinimalAndNonMinimal).unwrap();
                let key = FlowKey::new(s, d);
                prop_assert!(ecmp_select(key, &ps, seed).unwrap() < ps.len());
                prop_assert!(deterministic_select(key, &ps).unwrap() < ps.len());
                let a = adaptive_select(&ps, |l| occ[l.index() % occ.len()], 1 << 18, 0.5).unwrap();
                prop_assert!(a < ps.len());
            }

            #[test]
            fn nslb_collision_free_and_pure(nflows in 1usize..12, nups in 1usize..6,
                                            dsts in proptest::collection::vec(11u32..14, 12)) {
                let uplinks = BTreeMap::from([(NodeId(10), (0..nups as u32).map(LinkId).collect::<Vec<_>>())]);
                let mut m = FlowMatrix::default();
                for i in 0..nflows {
                    m.insert(FlowId(i as u64 * 3 + 1), pair(10, dsts[i]), 1.0);
                }
                let a = nslb_assign(&m, &uplinks).unwrap();
                let b = nslb_assign(&m, &uplinks).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(a.assignment.len(), nflows);
                let max = a.loads().into_values().max().unwrap();
                prop_assert_eq!(max, nflows.div_ceil(nups));
            }
        }
    }
}
