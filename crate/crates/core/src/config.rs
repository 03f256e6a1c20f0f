//! Experiment configuration files.
//!
//! Line-oriented `key = value` text. `#` starts a comment, `[section]`
//! prefixes the keys that follow it, so these two are equivalent:
//!
//! ```text
//! aggressor.pattern = incast
//!
//! [aggressor]
//! pattern = incast
//! ```
//!
//! Only `topology`, `nodes` and `victim.collective` are required. Every
//! other key falls back to the preset defaults listed by
//! `fabsim presets list`, and [`Config::dump`] writes the file back with
//! all defaults spelled out. Durations, sizes and rates need a unit
//! (`50us`, `32KiB`, `200Gbps`); bare numbers are accepted only for counts.
//!
//! | key | value |
//! |-----|-------|
//! | `topology` | preset name, or `custom` with a `[topology.custom]` table |
//! | `nodes` | even node count, at least 4 |
//! | `victim.collective` | `allgather` or `alltoall` |
//! | `vector_bytes` | comma-separated sizes, each run separately by `fabsim run` (default 32KiB) |
//! | `aggressor.pattern` | `alltoall` (default) or `incast` |
//! | `aggressor.bytes` | aggressor message size (default: largest victim vector) |
//! | `injection.mode` | `steady` (default) or `bursty` |
//! | `injection.burst` | `<k>c` collectives or a duration |
//! | `injection.idle_gap` | duration |
//! | `cc` | `none`, `dcqcn`, `ib`, `flow_granular`; parameters under `cc.<name>.*` |
//! | `lb` | `deterministic`, `ecmp`, `adaptive`, `nslb`; parameters under `lb.<name>.*` |
//! | `flow_control` | `credit` or `pfc`; thresholds under `flow_control.pfc.*` |
//! | `fabric.*` | `rate`, `uplink_rate`, `taper`, `latency`, `host_rx` |
//! | `engine.*` | `cell_bytes`, `buffer_cells` (count or `infinite`) |
//! | `alltoall.window` | in-flight transfers per rank |
//! | `iterations`, `warmup`, `seed` | counts |
//! | `sweep.*` | `nodes`, `vector_bytes`, `bursts`, `idle_gaps`, `steady` |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::cc::{CcPolicy, DcqcnParams, EcnConfig, FlowGranularParams, IbCcParams};
use crate::collectives::CollectiveKind;
use crate::engine::{FlowControl, PfcThresholds};
use crate::error::{Error, Result};
use crate::harness::{
    preset_defaults, AggressorPattern, BurstLength, ExperimentSpec, InjectionMode, SweepAxes,
};
use crate::lb::{AdaptiveParams, LbPolicy};
use crate::topology::{Cable, CustomTopology, Preset, Tier};
use crate::units::{fmt_bytes, fmt_duration, fmt_rate, parse_bytes, parse_duration, parse_rate, SimTime, KIB};

pub const DEFAULT_VECTOR_BYTES: u64 = 32 * KIB;

/// A parsed experiment, plus sweep axes when the file has a `sweep` table.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub spec: ExperimentSpec,
    pub sweep: Option<SweepAxes>,
}

pub fn parse_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

fn cfg_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Config { line, msg: msg.into() })
}

struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn lex(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return cfg_err(line, format!("malformed section header `{s}`"));
                };
                let name = name.trim();
                if name.is_empty() || !valid_key(name) {
                    return cfg_err(line, format!("malformed section name `{name}`"));
                }
                section = name.to_string();
                continue;
            }
            let Some((k, v)) = s.split_once('=') else {
                return cfg_err(line, format!("expected `key = value`, found `{s}`"));
            };
            let k = k.trim();
            let v = v.trim();
            if !valid_key(k) {
                return cfg_err(line, format!("malformed key `{k}`"));
            }
            if v.is_empty() {
                return cfg_err(line, format!("`{k}` has no value"));
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            if let Some((_, first)) = map.get(&key) {
                return cfg_err(line, format!("`{key}` already set on line {first}"));
            }
            map.insert(key, (v.to_string(), line));
        }
        Ok(Entries { map })
    }

    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.remove(key)
    }

    fn has_prefix(&self, prefix: &str) -> Option<(String, usize)> {
        self.map
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .min_by_key(|(_, (_, l))| *l)
            .map(|(k, (_, l))| (k.clone(), *l))
    }

    fn finish(self) -> Result<()> {
        if let Some((k, (_, line))) = self.map.iter().min_by_key(|(_, (_, l))| *l) {
            return cfg_err(*line, format!("unknown key `{k}`"));
        }
        Ok(())
    }
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.split('.')
            .all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'))
}

fn count<T: std::str::FromStr>(v: &str, line: usize, what: &str) -> Result<T> {
    v.parse().or_else(|_| cfg_err(line, format!("{what}: expected a whole number, found `{v}`")))
}

fn real(v: &str, line: usize, what: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => cfg_err(line, format!("{what}: expected a number, found `{v}`")),
    }
}

fn duration(v: &str, line: usize, what: &str) -> Result<SimTime> {
    parse_duration(v).ok_or_else(|| Error::Config {
        line,
        msg: format!("{what}: expected a duration with a unit (ps, ns, us, ms, s), found `{v}`"),
    })
}

fn bytes(v: &str, line: usize, what: &str) -> Result<u64> {
    parse_bytes(v).ok_or_else(|| Error::Config {
        line,
        msg: format!("{what}: expected a size such as 4096, 32KiB or 1MiB, found `{v}`"),
    })
}

fn rate(v: &str, line: usize, what: &str) -> Result<u64> {
    parse_rate(v).ok_or_else(|| Error::Config {
        line,
        msg: format!("{what}: expected a rate with a unit such as 200Gbps, found `{v}`"),
    })
}

fn boolean(v: &str, line: usize, what: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => cfg_err(line, format!("{what}: expected true or false, found `{v}`")),
    }
}

fn list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn burst(v: &str, line: usize) -> Result<BurstLength> {
    if let Some(k) = v.strip_suffix('c') {
        if let Ok(k) = k.trim().parse::<u32>() {
            return Ok(BurstLength::Collectives(k));
        }
    }
    match parse_duration(v) {
        Some(d) => Ok(BurstLength::Duration(d)),
        None => cfg_err(
            line,
            format!("burst: expected `<k>c` collectives or a duration with a unit, found `{v}`"),
        ),
    }
}

fn tier(v: &str, line: usize) -> Result<Tier> {
    Ok(match v {
        "single" => Tier::Single,
        "leaf" => Tier::Leaf,
        "spine" => Tier::Spine,
        "edge" => Tier::Edge,
        "aggregation" => Tier::Aggregation,
        "core" => Tier::Core,
        "router" => Tier::Router,
        "group_leaf" => Tier::GroupLeaf,
        "group_spine" => Tier::GroupSpine,
        _ => return cfg_err(line, format!("unknown switch tier `{v}`")),
    })
}

fn tier_name(t: Tier) -> &'static str {
    match t {
        Tier::Single => "single",
        Tier::Leaf => "leaf",
        Tier::Spine => "spine",
        Tier::Edge => "edge",
        Tier::Aggregation => "aggregation",
        Tier::Core => "core",
        Tier::Router => "router",
        Tier::GroupLeaf => "group_leaf",
        Tier::GroupSpine => "group_spine",
    }
}

fn ecn(e: &mut Entries, prefix: &str, base: EcnConfig) -> Result<EcnConfig> {
    let mut c = base;
    if let Some((v, l)) = e.take(&format!("{prefix}.kmin")) {
        c.kmin_bytes = bytes(&v, l, "kmin")?;
    }
    if let Some((v, l)) = e.take(&format!("{prefix}.kmax")) {
        c.kmax_bytes = bytes(&v, l, "kmax")?;
    }
    if let Some((v, l)) = e.take(&format!("{prefix}.pmax")) {
        c.pmax = real(&v, l, "pmax")?;
    }
    Ok(c)
}

fn parse_cc(e: &mut Entries, preset_cc: CcPolicy) -> Result<(CcPolicy, usize)> {
    let (name, line) = match e.take("cc") {
        Some((v, l)) => (v, l),
        None => (preset_cc.name().to_string(), 0),
    };
    let inherit = preset_cc.name() == name;
    let cc = match name.as_str() {
        "none" => CcPolicy::None,
        "dcqcn" => {
            let mut p = match (e.take("cc.dcqcn.preset"), preset_cc) {
                (Some((v, l)), _) => match v.as_str() {
                    "published" => DcqcnParams::published(),
                    "stable" => DcqcnParams::stable(),
                    "unstable" => DcqcnParams::unstable(),
                    _ => return cfg_err(l, format!("unknown dcqcn preset `{v}` (published, stable, unstable)")),
                },
                (None, CcPolicy::Dcqcn(p)) if inherit => p,
                _ => DcqcnParams::published(),
            };
            let k = "cc.dcqcn";
            if let Some((v, l)) = e.take(&format!("{k}.g")) {
                p.g = real(&v, l, "g")?;
            }
            if let Some((v, l)) = e.take(&format!("{k}.alpha_init")) {
                p.alpha_init = real(&v, l, "alpha_init")?;
            }
            if let Some((v, l)) = e.take(&format!("{k}.alpha_timer")) {
                p.alpha_timer = duration(&v, l, "alpha_timer")?;
            }
            if let Some((v, l)) = e.take(&format!("{k}.increase_timer")) {
                p.increase_timer = duration(&v, l, "increase_timer")?;
            }
            if let Some((v, l)) = e.take(&format!("{k}.byte_counter")) {
                p.byte_counter = bytes(&v, l, "byte_counter")?;
            }
            if let Some((v, l)) = e.take(&format!("{k}.fast_recovery_steps")) {
                p.fast_recovery_steps = count(&v, l, "fast_recovery_steps")?;
            }
            if let Some((v, l)) = e.take(&format!("{k}.rai")) {
                p.rai_frac = real(&v, l, "rai")?;
            }
            if let Some((v, l)) = e.take(&format!("{k}.rhai")) {
                p.rhai_frac = real(&v, l, "rhai")?;
            }
            if let Some((v, l)) = e.take(&format!("{k}.min_rate")) {
                p.min_rate_frac = real(&v, l, "min_rate")?;
            }
            if let Some((v, l)) = e.take(&format!("{k}.cnp_interval")) {
                p.cnp_interval = duration(&v, l, "cnp_interval")?;
            }
            p.ecn = ecn(e, "cc.dcqcn.ecn", p.ecn)?;
            CcPolicy::Dcqcn(p)
        }
        "ib" => {
            let mut p = match preset_cc {
                CcPolicy::Ib(p) if inherit => p,
                _ => IbCcParams::default(),
            };
            if let Some((v, l)) = e.take("cc.ib.ipd_step") {
                p.ipd_step = duration(&v, l, "ipd_step")?;
            }
            if let Some((v, l)) = e.take("cc.ib.ipd_max") {
                p.ipd_max = duration(&v, l, "ipd_max")?;
            }
            if let Some((v, l)) = e.take("cc.ib.recovery_interval") {
                p.recovery_interval = duration(&v, l, "recovery_interval")?;
            }
            if let Some((v, l)) = e.take("cc.ib.recovery_step") {
                p.recovery_step = duration(&v, l, "recovery_step")?;
            }
            p.fecn = ecn(e, "cc.ib.fecn", p.fecn)?;
            CcPolicy::Ib(p)
        }
        "flow_granular" => {
            let mut p = match preset_cc {
                CcPolicy::FlowGranular(p) if inherit => p,
                _ => FlowGranularParams::default(),
            };
            if let Some((v, l)) = e.take("cc.flow_granular.window") {
                p.window = duration(&v, l, "window")?;
            }
            if let Some((v, l)) = e.take("cc.flow_granular.threshold") {
                p.threshold_bytes = bytes(&v, l, "threshold")?;
            }
            if let Some((v, l)) = e.take("cc.flow_granular.hold") {
                p.hold = duration(&v, l, "hold")?;
            }
            if let Some((v, l)) = e.take("cc.flow_granular.target_utilization") {
                p.target_utilization = real(&v, l, "target_utilization")?;
            }
            CcPolicy::FlowGranular(p)
        }
        other => {
            return cfg_err(line, format!("unknown cc `{other}` (none, dcqcn, ib, flow_granular)"));
        }
    };
    if let Some((k, l)) = e.has_prefix("cc.") {
        return cfg_err(l, format!("`{k}` does not apply to cc = {}", cc.name()));
    }
    Ok((cc, line))
}

fn parse_lb(e: &mut Entries, preset_lb: LbPolicy) -> Result<(LbPolicy, usize)> {
    let (name, line) = match e.take("lb") {
        Some((v, l)) => (v, l),
        None => (preset_lb.name().to_string(), 0),
    };
    let lb = match name.as_str() {
        "deterministic" => LbPolicy::Deterministic,
        "nslb" => LbPolicy::Nslb,
        "ecmp" => {
            let seed = match e.take("lb.ecmp.seed") {
                Some((v, l)) => count(&v, l, "ecmp seed")?,
                None => match preset_lb {
                    LbPolicy::Ecmp { seed } => seed,
                    _ => 0,
                },
            };
            LbPolicy::Ecmp { seed }
        }
        "adaptive" => {
            let mut p = match preset_lb {
                LbPolicy::Adaptive(p) => p,
                _ => AdaptiveParams::default(),
            };
            if let Some((v, l)) = e.take("lb.adaptive.nonminimal_bias") {
                p.nonminimal_bias = real(&v, l, "nonminimal_bias")?;
            }
            if let Some((v, l)) = e.take("lb.adaptive.reevaluate") {
                p.reevaluate = if v == "off" { None } else { Some(duration(&v, l, "reevaluate")?) };
            }
            if let Some((v, l)) = e.take("lb.adaptive.staleness") {
                p.staleness = duration(&v, l, "staleness")?;
            }
            LbPolicy::Adaptive(p)
        }
        other => {
            return cfg_err(line, format!("unknown lb `{other}` (deterministic, ecmp, adaptive, nslb)"));
        }
    };
    if let Some((k, l)) = e.has_prefix("lb.") {
        return cfg_err(l, format!("`{k}` does not apply to lb = {}", lb.name()));
    }
    Ok((lb, line))
}

fn parse_custom(e: &mut Entries, line: usize) -> Result<CustomTopology> {
    let p = "topology.custom";
    let name = e.take(&format!("{p}.name")).map(|(v, _)| v).unwrap_or_else(|| "custom".to_string());
    let Some((ep, epl)) = e.take(&format!("{p}.endpoints")) else {
        return cfg_err(line, "custom topology needs `topology.custom.endpoints`");
    };
    let endpoints = count(&ep, epl, "endpoints")?;
    let Some((sw, swl)) = e.take(&format!("{p}.switches")) else {
        return cfg_err(line, "custom topology needs `topology.custom.switches`");
    };
    let switches = list(&sw).into_iter().map(|t| tier(t, swl)).collect::<Result<Vec<_>>>()?;
    let Some((cs, csl)) = e.take(&format!("{p}.cables")) else {
        return cfg_err(line, "custom topology needs `topology.custom.cables`");
    };
    let mut cables = Vec::new();
    for c in list(&cs) {
        // a:b:rate[:latency]
        let parts: Vec<&str> = c.split(':').map(str::trim).collect();
        if parts.len() != 3 && parts.len() != 4 {
            return cfg_err(csl, format!("cable `{c}`: expected a:b:rate or a:b:rate:latency"));
        }
        cables.push(Cable {
            a: count(parts[0], csl, "cable end")?,
            b: count(parts[1], csl, "cable end")?,
            rate_bps: rate(parts[2], csl, "cable rate")?,
            latency: match parts.get(3) {
                Some(l) => duration(l, csl, "cable latency")?,
                None => crate::topology::DEFAULT_LINK_LATENCY,
            },
        });
    }
    Ok(CustomTopology {
        name,
        endpoints,
        switches,
        cables,
    })
}

pub fn parse_config_str(text: &str) -> Result<Config> {
    let mut e = Entries::lex(text)?;

    let Some((topo, topo_line)) = e.take("topology") else {
        return cfg_err(1, "missing required key `topology`");
    };
    let (preset, custom) = if topo == "custom" {
        let base = match e.take("topology.custom.defaults") {
            Some((v, l)) => Preset::from_name(&v)
                .ok_or_else(|| Error::Config { line: l, msg: format!("unknown preset `{v}`") })?,
            None => Preset::HaicguSw,
        };
        (base, Some(parse_custom(&mut e, topo_line)?))
    } else {
        let Some(p) = Preset::from_name(&topo) else {
            let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
            return cfg_err(topo_line, format!("unknown preset `{topo}` ({}, custom)", names.join(", ")));
        };
        (p, None)
    };
    if let Some((k, l)) = e.has_prefix("topology.") {
        return cfg_err(l, format!("`{k}` needs topology = custom"));
    }

    let Some((n, nodes_line)) = e.take("nodes") else {
        return cfg_err(1, "missing required key `nodes`");
    };
    let nodes: usize = count(&n, nodes_line, "nodes")?;
    if nodes < 4 || nodes % 2 != 0 {
        return cfg_err(nodes_line, format!("nodes = {nodes}: must be even and at least 4"));
    }
    let Some((v, vl)) = e.take("victim.collective") else {
        return cfg_err(1, "missing required key `victim.collective`");
    };
    let victim = match CollectiveKind::from_name(&v) {
        Some(k @ (CollectiveKind::AllGather | CollectiveKind::AlltoAll)) => k,
        _ => return cfg_err(vl, format!("victim.collective must be allgather or alltoall, found `{v}`")),
    };
    let vectors = match e.take("vector_bytes") {
        Some((v, l)) => {
            let vs = list(&v).into_iter().map(|s| bytes(s, l, "vector_bytes")).collect::<Result<Vec<_>>>()?;
            if vs.is_empty() || vs.contains(&0) {
                return cfg_err(l, "vector_bytes must list positive sizes");
            }
            vs
        }
        None => vec![DEFAULT_VECTOR_BYTES],
    };

    let mut spec = ExperimentSpec::new(preset, nodes, victim, vectors);
    spec.fabric.custom = custom;
    let defaults = preset_defaults(preset);

    if let Some((v, l)) = e.take("aggressor.pattern") {
        spec.aggressor = AggressorPattern::from_name(&v)
            .ok_or_else(|| Error::Config { line: l, msg: format!("aggressor.pattern must be alltoall or incast, found `{v}`") })?;
    }
    if let Some((v, l)) = e.take("aggressor.bytes") {
        let b = bytes(&v, l, "aggressor.bytes")?;
        if b == 0 {
            return cfg_err(l, "aggressor.bytes must be positive");
        }
        spec.aggressor_bytes = Some(b);
    }

    let mode = e.take("injection.mode");
    let burst_v = e.take("injection.burst");
    let gap_v = e.take("injection.idle_gap");
    spec.injection = match mode.as_ref().map(|(v, l)| (v.as_str(), *l)) {
        None | Some(("steady", _)) => {
            if let Some((_, l)) = burst_v.as_ref().or(gap_v.as_ref()) {
                return cfg_err(*l, "burst settings need injection.mode = bursty");
            }
            InjectionMode::Steady
        }
        Some(("bursty", l)) => {
            let Some((b, bl)) = burst_v else {
                return cfg_err(l, "bursty injection needs `injection.burst`");
            };
            let Some((g, gl)) = gap_v else {
                return cfg_err(l, "bursty injection needs `injection.idle_gap`");
            };
            let burst = burst(&b, bl)?;
            if matches!(burst, BurstLength::Collectives(0)) || burst == BurstLength::Duration(SimTime::ZERO) {
                return cfg_err(bl, "burst length must be positive");
            }
            InjectionMode::Bursty {
                burst,
                gap: duration(&g, gl, "idle_gap")?,
            }
        }
        Some((other, l)) => return cfg_err(l, format!("injection.mode must be steady or bursty, found `{other}`")),
    };

    let (cc, cc_line) = parse_cc(&mut e, defaults.cc)?;
    spec.cc = cc;
    let (lb, lb_line) = parse_lb(&mut e, defaults.lb)?;
    spec.lb = lb;

    let mut fc_line = 0;
    if let Some((v, l)) = e.take("flow_control") {
        fc_line = l;
        spec.flow_control = match v.as_str() {
            "credit" => FlowControl::Credit,
            "pfc" => match defaults.flow_control {
                FlowControl::Pfc(t) => FlowControl::Pfc(t),
                FlowControl::Credit => FlowControl::Pfc(PfcThresholds::for_capacity(
                    spec.buffer_cells.unwrap_or(crate::engine::DEFAULT_BUFFER_CELLS),
                )),
            },
            _ => return cfg_err(l, format!("flow_control must be credit or pfc, found `{v}`")),
        };
    }

    if let Some((v, l)) = e.take("engine.cell_bytes") {
        spec.cell_bytes = bytes(&v, l, "cell_bytes")?;
        if spec.cell_bytes == 0 {
            return cfg_err(l, "cell_bytes must be positive");
        }
    }
    if let Some((v, l)) = e.take("engine.buffer_cells") {
        spec.buffer_cells = if v == "infinite" { None } else { Some(count(&v, l, "buffer_cells")?) };
        if spec.buffer_cells == Some(0) {
            return cfg_err(l, "buffer_cells must be positive");
        }
        if let (FlowControl::Pfc(_), Some(c)) = (spec.flow_control, spec.buffer_cells) {
            spec.flow_control = FlowControl::Pfc(PfcThresholds::for_capacity(c));
        }
    }
    if let FlowControl::Pfc(mut t) = spec.flow_control {
        if let Some((v, l)) = e.take("flow_control.pfc.xoff_cells") {
            t.xoff_cells = count(&v, l, "xoff_cells")?;
        }
        if let Some((v, l)) = e.take("flow_control.pfc.xon_cells") {
            t.xon_cells = count(&v, l, "xon_cells")?;
        }
        spec.flow_control = FlowControl::Pfc(t);
    }
    if let Some((k, l)) = e.has_prefix("flow_control.") {
        return cfg_err(l, format!("`{k}` does not apply to flow_control = {}", spec.flow_control.name()));
    }

    if let Some((v, l)) = e.take("fabric.rate") {
        spec.fabric.rate_bps = Some(rate(&v, l, "fabric.rate")?);
    }
    if let Some((v, l)) = e.take("fabric.uplink_rate") {
        spec.fabric.uplink_rate_bps = Some(rate(&v, l, "fabric.uplink_rate")?);
    }
    if let Some((v, l)) = e.take("fabric.taper") {
        let t = real(&v, l, "fabric.taper")?;
        if t < 1.0 {
            return cfg_err(l, "fabric.taper must be at least 1");
        }
        spec.fabric.taper = Some(t);
    }
    if let Some((v, l)) = e.take("fabric.latency") {
        spec.fabric.latency = duration(&v, l, "fabric.latency")?;
    }
    if let Some((v, l)) = e.take("fabric.host_rx") {
        spec.host_rx_fraction = if v == "off" {
            None
        } else {
            let f = real(&v, l, "fabric.host_rx")?;
            if !(f > 0.0 && f <= 1.0) {
                return cfg_err(l, "fabric.host_rx must be a fraction in (0, 1] or `off`");
            }
            Some(f)
        };
    }
    if let Some((v, l)) = e.take("alltoall.window") {
        spec.alltoall_window = count(&v, l, "alltoall.window")?;
        if spec.alltoall_window == 0 {
            return cfg_err(l, "alltoall.window must be positive");
        }
    }
    let it = e.take("iterations");
    let wu = e.take("warmup");
    if let Some((v, l)) = &it {
        spec.iterations = count(v, *l, "iterations")?;
    }
    if let Some((v, l)) = &wu {
        spec.warmup = count(v, *l, "warmup")?;
    }
    if spec.warmup >= spec.iterations {
        let l = wu.as_ref().or(it.as_ref()).map(|x| x.1).unwrap_or(1);
        return cfg_err(l, format!("warmup {} must be below iterations {}", spec.warmup, spec.iterations));
    }
    if let Some((v, l)) = e.take("seed") {
        spec.seed = count(&v, l, "seed")?;
    }

    let sweep = parse_sweep(&mut e, &spec)?;
    e.finish()?;

    // engine-level checks against the concrete fabric
    let topo = spec.fabric.build(sweep.as_ref().and_then(|s| s.nodes.iter().copied().max()).unwrap_or(nodes).max(nodes));
    let topo = topo.map_err(|err| Error::Config { line: topo_line, msg: err.to_string() })?;
    if let Err(err) = spec.engine_config(spec.seed).validate(&topo) {
        let l = [cc_line, lb_line, fc_line].into_iter().find(|&l| l > 0).unwrap_or(topo_line);
        return cfg_err(l, err.to_string());
    }
    spec.validate().map_err(|err| Error::Config { line: topo_line, msg: err.to_string() })?;
    Ok(Config { spec, sweep })
}

fn parse_sweep(e: &mut Entries, spec: &ExperimentSpec) -> Result<Option<SweepAxes>> {
    let nodes = e.take("sweep.nodes");
    let vectors = e.take("sweep.vector_bytes");
    let bursts = e.take("sweep.bursts");
    let gaps = e.take("sweep.idle_gaps");
    let steady = e.take("sweep.steady");
    if nodes.is_none() && vectors.is_none() && bursts.is_none() && gaps.is_none() && steady.is_none() {
        return Ok(None);
    }
    let nodes = match nodes {
        Some((v, l)) => {
            let ns = list(&v).into_iter().map(|s| count::<usize>(s, l, "sweep.nodes")).collect::<Result<Vec<_>>>()?;
            if let Some(bad) = ns.iter().find(|&&n| n < 4 || n % 2 != 0) {
                return cfg_err(l, format!("sweep.nodes: {bad} must be even and at least 4"));
            }
            if ns.is_empty() {
                return cfg_err(l, "sweep.nodes is empty");
            }
            ns
        }
        None => vec![spec.nodes],
    };
    let vectors = match vectors {
        Some((v, l)) => {
            let vs = list(&v).into_iter().map(|s| bytes(s, l, "sweep.vector_bytes")).collect::<Result<Vec<_>>>()?;
            if vs.is_empty() || vs.contains(&0) {
                return cfg_err(l, "sweep.vector_bytes must list positive sizes");
            }
            vs
        }
        None => spec.vectors.clone(),
    };
    let mut injections = Vec::new();
    match (bursts, gaps) {
        (Some((b, bl)), Some((g, gl))) => {
            let bs = list(&b).into_iter().map(|s| burst(s, bl)).collect::<Result<Vec<_>>>()?;
            let gs = list(&g).into_iter().map(|s| duration(s, gl, "sweep.idle_gaps")).collect::<Result<Vec<_>>>()?;
            if bs.is_empty() || gs.is_empty() {
                return cfg_err(bl.min(gl), "sweep bursts and idle_gaps must be nonempty");
            }
            if bs.iter().any(|b| matches!(b, BurstLength::Collectives(0)) || *b == BurstLength::Duration(SimTime::ZERO)) {
                return cfg_err(bl, "burst length must be positive");
            }
            for &burst in &bs {
                for &gap in &gs {
                    injections.push(InjectionMode::Bursty { burst, gap });
                }
            }
        }
        (Some((_, l)), None) | (None, Some((_, l))) => {
            return cfg_err(l, "sweep.bursts and sweep.idle_gaps must be given together");
        }
        (None, None) => {}
    }
    let with_steady = match steady {
        Some((v, l)) => boolean(&v, l, "sweep.steady")?,
        None => injections.is_empty(),
    };
    if with_steady {
        injections.insert(0, InjectionMode::Steady);
    }
    if injections.is_empty() {
        return cfg_err(1, "sweep has no injection modes");
    }
    Ok(Some(SweepAxes {
        nodes,
        vectors,
        injections,
    }))
}

fn ecn_lines(out: &mut String, prefix: &str, e: &EcnConfig) {
    let _ = writeln!(out, "{prefix}.kmin = {}", fmt_bytes(e.kmin_bytes));
    let _ = writeln!(out, "{prefix}.kmax = {}", fmt_bytes(e.kmax_bytes));
    let _ = writeln!(out, "{prefix}.pmax = {}", e.pmax);
}

fn burst_text(b: &BurstLength) -> String {
    match b {
        BurstLength::Collectives(k) => format!("{k}c"),
        BurstLength::Duration(d) => fmt_duration(*d),
    }
}

impl Config {
    pub fn from_spec(spec: ExperimentSpec) -> Self {
        Config { spec, sweep: None }
    }

    /// Normalized text with every default written out; parses back to
    /// an identical config.
    pub fn dump(&self) -> String {
        let s = &self.spec;
        let mut o = String::new();
        let w = &mut o;
        match &s.fabric.custom {
            None => {
                let _ = writeln!(w, "topology = {}", s.fabric.preset.name());
            }
            Some(c) => {
                let _ = writeln!(w, "topology = custom");
                let _ = writeln!(w, "topology.custom.defaults = {}", s.fabric.preset.name());
                let _ = writeln!(w, "topology.custom.name = {}", c.name);
                let _ = writeln!(w, "topology.custom.endpoints = {}", c.endpoints);
                let tiers: Vec<_> = c.switches.iter().map(|t| tier_name(*t)).collect();
                let _ = writeln!(w, "topology.custom.switches = {}", tiers.join(", "));
                let cables: Vec<_> = c
                    .cables
                    .iter()
                    .map(|c| format!("{}:{}:{}:{}", c.a, c.b, fmt_rate(c.rate_bps), fmt_duration(c.latency)))
                    .collect();
                let _ = writeln!(w, "topology.custom.cables = {}", cables.join(", "));
            }
        }
        let _ = writeln!(w, "nodes = {}", s.nodes);
        let vs: Vec<_> = s.vectors.iter().map(|v| fmt_bytes(*v)).collect();
        let _ = writeln!(w, "vector_bytes = {}", vs.join(", "));
        let _ = writeln!(w, "iterations = {}", s.iterations);
        let _ = writeln!(w, "warmup = {}", s.warmup);
        let _ = writeln!(w, "seed = {}", s.seed);
        let _ = writeln!(w, "cc = {}", s.cc.name());
        let _ = writeln!(w, "lb = {}", s.lb.name());
        let _ = writeln!(w, "flow_control = {}", s.flow_control.name());

        let _ = writeln!(w, "\n[victim]\ncollective = {}", s.victim.name());
        let _ = writeln!(w, "\n[aggressor]\npattern = {}", s.aggressor.name());
        match s.aggressor_bytes {
            Some(b) => {
                let _ = writeln!(w, "bytes = {}", fmt_bytes(b));
            }
            None => {
                let _ = writeln!(w, "# bytes defaults to the largest victim vector");
            }
        }
        let _ = writeln!(w, "\n[injection]\nmode = {}", s.injection.name());
        if let InjectionMode::Bursty { burst, gap } = &s.injection {
            let _ = writeln!(w, "burst = {}", burst_text(burst));
            let _ = writeln!(w, "idle_gap = {}", fmt_duration(*gap));
        }

        let _ = writeln!(w, "\n[fabric]");
        match s.fabric.rate_bps {
            Some(r) => {
                let _ = writeln!(w, "rate = {}", fmt_rate(r));
            }
            None => {
                let _ = writeln!(w, "# rate = {} (preset default)", fmt_rate(s.fabric.rate()));
            }
        }
        if let Some(u) = s.fabric.uplink_rate_bps {
            let _ = writeln!(w, "uplink_rate = {}", fmt_rate(u));
        }
        if let Some(t) = s.fabric.taper {
            let _ = writeln!(w, "taper = {t}");
        }
        let _ = writeln!(w, "latency = {}", fmt_duration(s.fabric.latency));
        match s.host_rx_fraction {
            Some(f) => {
                let _ = writeln!(w, "host_rx = {f}");
            }
            None => {
                let _ = writeln!(w, "host_rx = off");
            }
        }

        let _ = writeln!(w, "\n[engine]");
        let _ = writeln!(w, "cell_bytes = {}", fmt_bytes(s.cell_bytes));
        match s.buffer_cells {
            Some(c) => {
                let _ = writeln!(w, "buffer_cells = {c}");
            }
            None => {
                let _ = writeln!(w, "buffer_cells = infinite");
            }
        }
        let _ = writeln!(w, "\n[alltoall]\nwindow = {}", s.alltoall_window);

        if let FlowControl::Pfc(t) = s.flow_control {
            let _ = writeln!(w, "\n[flow_control.pfc]");
            let _ = writeln!(w, "xoff_cells = {}", t.xoff_cells);
            let _ = writeln!(w, "xon_cells = {}", t.xon_cells);
        }

        match &s.cc {
            CcPolicy::None => {}
            CcPolicy::Dcqcn(p) => {
                let _ = writeln!(w, "\n[cc.dcqcn]");
                let _ = writeln!(w, "g = {}", p.g);
                let _ = writeln!(w, "alpha_init = {}", p.alpha_init);
                let _ = writeln!(w, "alpha_timer = {}", fmt_duration(p.alpha_timer));
                let _ = writeln!(w, "increase_timer = {}", fmt_duration(p.increase_timer));
                let _ = writeln!(w, "byte_counter = {}", fmt_bytes(p.byte_counter));
                let _ = writeln!(w, "fast_recovery_steps = {}", p.fast_recovery_steps);
                let _ = writeln!(w, "rai = {}", p.rai_frac);
                let _ = writeln!(w, "rhai = {}", p.rhai_frac);
                let _ = writeln!(w, "min_rate = {}", p.min_rate_frac);
                let _ = writeln!(w, "cnp_interval = {}", fmt_duration(p.cnp_interval));
                ecn_lines(w, "ecn", &p.ecn);
            }
            CcPolicy::Ib(p) => {
                let _ = writeln!(w, "\n[cc.ib]");
                let _ = writeln!(w, "ipd_step = {}", fmt_duration(p.ipd_step));
                let _ = writeln!(w, "ipd_max = {}", fmt_duration(p.ipd_max));
                let _ = writeln!(w, "recovery_interval = {}", fmt_duration(p.recovery_interval));
                let _ = writeln!(w, "recovery_step = {}", fmt_duration(p.recovery_step));
                ecn_lines(w, "fecn", &p.fecn);
            }
            CcPolicy::FlowGranular(p) => {
                let _ = writeln!(w, "\n[cc.flow_granular]");
                let _ = writeln!(w, "window = {}", fmt_duration(p.window));
                let _ = writeln!(w, "threshold = {}", fmt_bytes(p.threshold_bytes));
                let _ = writeln!(w, "hold = {}", fmt_duration(p.hold));
                let _ = writeln!(w, "target_utilization = {}", p.target_utilization);
            }
        }
        match &s.lb {
            LbPolicy::Ecmp { seed } => {
                let _ = writeln!(w, "\n[lb.ecmp]\nseed = {seed}");
            }
            LbPolicy::Adaptive(p) => {
                let _ = writeln!(w, "\n[lb.adaptive]");
                let _ = writeln!(w, "nonminimal_bias = {}", p.nonminimal_bias);
                match p.reevaluate {
                    Some(t) => {
                        let _ = writeln!(w, "reevaluate = {}", fmt_duration(t));
                    }
                    None => {
                        let _ = writeln!(w, "reevaluate = off");
                    }
                }
                let _ = writeln!(w, "staleness = {}", fmt_duration(p.staleness));
            }
            _ => {}
        }

        if let Some(sw) = &self.sweep {
            let _ = writeln!(w, "\n[sweep]");
            let ns: Vec<_> = sw.nodes.iter().map(|n| n.to_string()).collect();
            let _ = writeln!(w, "nodes = {}", ns.join(", "));
            let vs: Vec<_> = sw.vectors.iter().map(|v| fmt_bytes(*v)).collect();
            let _ = writeln!(w, "vector_bytes = {}", vs.join(", "));
            let mut bursts = Vec::new();
            let mut gaps = Vec::new();
            let mut steady = false;
            for m in &sw.injections {
                match m {
                    InjectionMode::Steady => steady = true,
                    InjectionMode::Bursty { burst, gap } => {
                        if !bursts.contains(burst) {
                            bursts.push(*burst);
                        }
                        if !gaps.contains(gap) {
                            gaps.push(*gap);
                        }
                    }
                }
            }
            if !bursts.is_empty() {
                let bs: Vec<_> = bursts.iter().map(burst_text).collect();
                let gs: Vec<_> = gaps.iter().map(|g| fmt_duration(*g)).collect();
                let _ = writeln!(w, "bursts = {}", bs.join(", "));
                let _ = writeln!(w, "idle_gaps = {}", gs.join(", "));
            }
            let _ = writeln!(w, "steady = {steady}");
        }
        o
    }
}

/// Builds the spec a preset would get from a minimal config.
pub fn minimal_spec(preset: Preset, nodes: usize, victim: CollectiveKind) -> ExperimentSpec {
    ExperimentSpec::new(preset, nodes, victim, vec![DEFAULT_VECTOR_BYTES])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_of(r: Result<Config>) -> (usize, String) {
        match r {
            Err(Error::Config { line, msg }) => (line, msg),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_applies_defaults() {
        let c = parse_config_str("topology = cresco8-ft\nnodes = 16\nvictim.collective = allgather\n").unwrap();
        assert_eq!(c.spec.iterations, 1000);
        assert_eq!(c.spec.warmup, 100);
        assert_eq!(c.spec, minimal_spec(Preset::Cresco8Ft, 16, CollectiveKind::AllGather));
        assert!(c.sweep.is_none());
    }

    #[test]
    fn sections_prefix_keys() {
        let a = parse_config_str("topology = haicgu-sw\nnodes = 4\nvictim.collective = allgather\naggressor.pattern = incast\n").unwrap();
        let b = parse_config_str("topology = haicgu-sw\nnodes = 4\n[victim]\ncollective = allgather\n[aggressor]\npattern = incast\n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unitless_idle_gap_is_rejected_with_line() {
        let text = "topology = haicgu-sw\nnodes = 4\nvictim.collective = allgather\ninjection.mode = bursty\ninjection.burst = 4c\ninjection.idle_gap = 100\n";
        let (line, msg) = line_of(parse_config_str(text));
        assert_eq!(line, 6);
        assert!(msg.contains("unit"), "{msg}");
    }

    #[test]
    fn unitless_burst_is_rejected() {
        let text = "topology = haicgu-sw\nnodes = 4\nvictim.collective = allgather\ninjection.mode = bursty\ninjection.burst = 4\ninjection.idle_gap = 10us\n";
        assert_eq!(line_of(parse_config_str(text)).0, 5);
    }

    #[test]
    fn odd_nodes_rejected_with_line() {
        let (line, msg) = line_of(parse_config_str("topology = haicgu-sw\n\nnodes = 7\nvictim.collective = allgather\n"));
        assert_eq!(line, 3);
        assert!(msg.contains("even"));
    }

    #[test]
    fn unknown_key_rejected() {
        let (line, msg) = line_of(parse_config_str("topology = haicgu-sw\nnodes = 4\nvictim.collective = allgather\nitersations = 5\n"));
        assert_eq!(line, 4);
        assert!(msg.contains("itersations"));
    }

    #[test]
    fn inapplicable_subtable_rejected() {
        let text = "topology = haicgu-sw\nnodes = 4\nvictim.collective = allgather\ncc = none\ncc.dcqcn.g = 0.5\n";
        assert_eq!(line_of(parse_config_str(text)).0, 5);
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = "topology = haicgu-sw\nnodes = 4\nnodes = 6\nvictim.collective = allgather\n";
        let (line, msg) = line_of(parse_config_str(text));
        assert_eq!(line, 3);
        assert!(msg.contains("line 2"));
    }

    #[test]
    fn warmup_must_be_below_iterations() {
        let text = "topology = haicgu-sw\nnodes = 4\nvictim.collective = allgather\niterations = 10\nwarmup = 10\n";
        assert_eq!(line_of(parse_config_str(text)).0, 5);
    }

    #[test]
    fn dump_round_trips() {
        let text = "topology = nanjing-ls\nnodes = 8\nvictim.collective = alltoall\nvector_bytes = 1MiB, 8B\n\
                    aggressor.bytes = 2MiB\ninjection.mode = bursty\ninjection.burst = 250us\ninjection.idle_gap = 1ms\n\
                    lb = ecmp\nlb.ecmp.seed = 59511\ncc.dcqcn.preset = unstable\nsweep.nodes = 8, 16\nsweep.bursts = 1c, 4c\nsweep.idle_gaps = 5us\nsweep.steady = true\n";
        let c = parse_config_str(text).unwrap();
        let d = c.dump();
        let c2 = parse_config_str(&d).unwrap();
        assert_eq!(c, c2, "{d}");
        assert_eq!(d, c2.dump());
        let sw = c.sweep.unwrap();
        assert_eq!(sw.injections.len(), 3);
        assert_eq!(sw.injections[0], InjectionMode::Steady);
    }

    #[test]
    fn custom_topology_round_trips() {
        let text = "topology = custom\nnodes = 4\nvictim.collective = allgather\n[topology.custom]\nendpoints = 4\nswitches = single\n\
                    cables = 0:4:100Gbps, 1:4:100Gbps, 2:4:100Gbps, 3:4:100Gbps:1us\n";
        let c = parse_config_str(text).unwrap();
        let custom = c.spec.fabric.custom.clone().unwrap();
        assert_eq!(custom.cables.len(), 4);
        assert_eq!(custom.cables[3].latency, SimTime::from_us(1));
        assert_eq!(parse_config_str(&c.dump()).unwrap(), c);
    }

    #[test]
    fn custom_topology_too_small() {
        let text = "topology = custom\nnodes = 6\nvictim.collective = allgather\n[topology.custom]\nendpoints = 4\nswitches = single\n\
                    cables = 0:4:100Gbps, 1:4:100Gbps, 2:4:100Gbps, 3:4:100Gbps\n";
        assert_eq!(line_of(parse_config_str(text)).0, 1);
    }

    #[test]
    fn ecn_above_buffer_rejected_at_cc_line() {
        let text = "topology = haicgu-sw\nnodes = 4\nvictim.collective = allgather\ncc = dcqcn\nengine.buffer_cells = 16\n";
        assert_eq!(line_of(parse_config_str(text)).0, 4);
    }
}
