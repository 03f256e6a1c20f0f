//! Time, rate and size units.
//!
//! Simulated time is an integer count of picoseconds so that the
//! serialization time of common cell sizes at 100/200/400/800 Gb/s is
//! exact.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

pub const PS_PER_NS: u64 = 1_000;
pub const PS_PER_US: u64 = 1_000_000;
pub const PS_PER_MS: u64 = 1_000_000_000;
pub const PS_PER_S: u64 = 1_000_000_000_000;

pub const GBPS: u64 = 1_000_000_000;
pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * PS_PER_NS)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * PS_PER_US)
    }

    pub const fn ps(self) -> u64 {
        self.0
    }

    pub fn as_ns_f64(self) -> f64 {
        self.0 as f64 / PS_PER_NS as f64
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 = self.0.saturating_add(rhs.0);
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.as_ns_f64())
    }
}

/// Time to push `bytes` onto a wire running at `rate_bps`, rounded up to
/// the next picosecond.
pub fn serialization_time(bytes: u64, rate_bps: u64) -> SimTime {
    debug_assert!(rate_bps > 0);
    let bits = bytes as u128 * 8 * PS_PER_S as u128;
    let rate = rate_bps as u128;
    SimTime(bits.div_ceil(rate) as u64)
}

/// Same as [`serialization_time`] for a fractional pacing rate.
pub fn pacing_time(bytes: u64, rate_bps: f64) -> SimTime {
    debug_assert!(rate_bps > 0.0);
    let ps = (bytes as f64 * 8.0 * PS_PER_S as f64 / rate_bps).ceil();
    SimTime(ps as u64)
}

/// Bits per second achieved by moving `bytes` in `dt`.
pub fn rate_of(bytes: u64, dt: SimTime) -> f64 {
    if dt.0 == 0 {
        return 0.0;
    }
    bytes as f64 * 8.0 * PS_PER_S as f64 / dt.0 as f64
}

/// Shortest exact rendering with the largest unit that divides the value,
/// e.g. `20us`, `1500ns`, `0ns`.
pub fn fmt_duration(t: SimTime) -> String {
    let ps = t.0;
    for (unit, scale) in [("s", PS_PER_S), ("ms", PS_PER_MS), ("us", PS_PER_US), ("ns", PS_PER_NS)] {
        if ps != 0 && ps % scale == 0 {
            return format!("{}{unit}", ps / scale);
        }
    }
    if ps == 0 {
        return "0ns".to_string();
    }
    format!("{ps}ps")
}

fn split_number(s: &str) -> Option<(f64, &str)> {
    let s = s.trim();
    let end = s
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_digit() || *c == '.' || *c == 'e' || *c == 'E' || *c == '+' || *c == '-'))
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(end);
    let v: f64 = num.parse().ok()?;
    if !v.is_finite() || v < 0.0 {
        return None;
    }
    Some((v, unit.trim()))
}

fn scaled(v: f64, scale: u64) -> Option<u64> {
    let x = (v * scale as f64).round();
    if x > u64::MAX as f64 {
        return None;
    }
    Some(x as u64)
}

/// Parses `250ns`, `5us`, `1.5ms`, `2s` or `800ps`. A bare number is
/// rejected.
pub fn parse_duration(s: &str) -> Option<SimTime> {
    let (v, unit) = split_number(s)?;
    let scale = match unit {
        "ps" => 1,
        "ns" => PS_PER_NS,
        "us" => PS_PER_US,
        "ms" => PS_PER_MS,
        "s" => PS_PER_S,
        _ => return None,
    };
    scaled(v, scale).map(SimTime)
}

/// Parses `4096`, `4096B`, `16KiB`, `2MiB`, `1GiB`, `10KB`, `1MB`.
pub fn parse_bytes(s: &str) -> Option<u64> {
    let (v, unit) = split_number(s)?;
    let scale = match unit {
        "" | "B" => 1,
        "KiB" => KIB,
        "MiB" => MIB,
        "GiB" => 1 << 30,
        "KB" | "kB" => 1_000,
        "MB" => 1_000_000,
        "GB" => 1_000_000_000,
        _ => return None,
    };
    scaled(v, scale)
}

pub fn fmt_bytes(b: u64) -> String {
    for (unit, scale) in [("GiB", 1u64 << 30), ("MiB", MIB), ("KiB", KIB)] {
        if b != 0 && b % scale == 0 {
            return format!("{}{unit}", b / scale);
        }
    }
    format!("{b}B")
}

/// Parses `100Gbps`, `400Mbps`, `1Tbps` or `1000bps`.
pub fn parse_rate(s: &str) -> Option<u64> {
    let (v, unit) = split_number(s)?;
    let scale = match unit {
        "bps" => 1,
        "Kbps" | "kbps" => 1_000,
        "Mbps" => 1_000_000,
        "Gbps" => GBPS,
        "Tbps" => 1_000 * GBPS,
        _ => return None,
    };
    scaled(v, scale).filter(|&r| r > 0)
}

pub fn fmt_rate(r: u64) -> String {
    for (unit, scale) in [("Tbps", 1_000 * GBPS), ("Gbps", GBPS), ("Mbps", 1_000_000)] {
        if r != 0 && r % scale == 0 {
            return format!("{}{unit}", r / scale);
        }
    }
    format!("{r}bps")
}
