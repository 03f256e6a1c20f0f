//! Congestion-control state machines.
//!
//! Switches only mark or observe; every rate decision is taken at the
//! source. The engine owns one state per flow and calls the transitions
//! below when notifications or timers fire.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::error::{invalid, Result};
pub use crate::flow::FlowKey;
use crate::units::SimTime;

/// RED-style marking thresholds on queue occupancy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcnConfig {
    pub kmin_bytes: u64,
    pub kmax_bytes: u64,
    pub pmax: f64,
}

impl EcnConfig {
    pub fn validate(&self, queue_capacity_bytes: u64) -> Result<()> {
        if self.kmin_bytes > self.kmax_bytes {
            return invalid("ECN kmin must not exceed kmax");
        }
        if self.kmax_bytes > queue_capacity_bytes {
            return invalid(format!(
                "ECN kmax {} exceeds queue capacity {}",
                self.kmax_bytes, queue_capacity_bytes
            ));
        }
        if !(self.pmax > 0.0 && self.pmax <= 1.0) {
            return invalid("ECN pmax must be in (0, 1]");
        }
        Ok(())
    }

    pub fn mark_probability(&self, occupancy_bytes: u64) -> f64 {
        if occupancy_bytes < self.kmin_bytes {
            0.0
        } else if occupancy_bytes >= self.kmax_bytes {
            1.0
        } else {
            let span = (self.kmax_bytes - self.kmin_bytes) as f64;
            self.pmax * (occupancy_bytes - self.kmin_bytes) as f64 / span
        }
    }

    /// Marking decision for a cell enqueued behind `occupancy_bytes`.
    pub fn should_mark<R: Rng + ?Sized>(&self, occupancy_bytes: u64, rng: &mut R) -> bool {
        let p = self.mark_probability(occupancy_bytes);
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            rng.random::<f64>() < p
        }
    }
}

/// Marks `marked` on enqueue according to `cfg`; returns the new flag.
pub fn ecn_mark_on_enqueue<R: Rng + ?Sized>(cfg: &EcnConfig, occupancy_bytes: u64, marked: bool, rng: &mut R) -> bool {
    marked || cfg.should_mark(occupancy_bytes, rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcqcnParams {
    /// Alpha gain.
    pub g: f64,
    pub alpha_init: f64,
    /// Alpha decay period without notifications.
    pub alpha_timer: SimTime,
    /// Rate increase timer.
    pub increase_timer: SimTime,
    /// Rate increase byte counter.
    pub byte_counter: u64,
    /// Number of fast-recovery steps before additive increase.
    pub fast_recovery_steps: u32,
    /// Additive increase step as a fraction of line rate.
    pub rai_frac: f64,
    /// Hyper increase step as a fraction of line rate.
    pub rhai_frac: f64,
    /// Rate floor as a fraction of line rate.
    pub min_rate_frac: f64,
    /// Minimum spacing of notifications generated for one flow.
    pub cnp_interval: SimTime,
    pub ecn: EcnConfig,
}

impl DcqcnParams {
    /// Published defaults of the original scheme (40 Gb/s reference,
    /// increments expressed relative to line rate).
    pub fn published() -> Self {
        DcqcnParams {
            g: 1.0 / 256.0,
            alpha_init: 1.0,
            alpha_timer: SimTime::from_us(55),
            increase_timer: SimTime::from_us(55),
            byte_counter: 10 * 1_000_000,
            fast_recovery_steps: 5,
            rai_frac: 40e6 / 40e9,
            rhai_frac: 400e6 / 40e9,
            min_rate_frac: 1e-3,
            cnp_interval: SimTime::from_us(50),
            ecn: EcnConfig {
                kmin_bytes: 5 * 1024,
                kmax_bytes: 200 * 1024,
                pmax: 0.01,
            },
        }
    }

    /// Gentle reaction and quick recovery: small cuts, rates settle near
    /// the bottleneck.
    pub fn stable() -> Self {
        DcqcnParams {
            g: 1.0 / 256.0,
            alpha_init: 0.0625,
            alpha_timer: SimTime::from_us(55),
            increase_timer: SimTime::from_us(55),
            byte_counter: 10 * 1_000_000,
            fast_recovery_steps: 5,
            rai_frac: 0.001,
            rhai_frac: 0.01,
            min_rate_frac: 1e-3,
            cnp_interval: SimTime::from_us(50),
            ecn: EcnConfig {
                kmin_bytes: 16 * 1024,
                kmax_bytes: 160 * 1024,
                pmax: 0.01,
            },
        }
    }

    /// Aggressive marking with slow recovery: deep cuts followed by a long
    /// linear climb.
    pub fn unstable() -> Self {
        DcqcnParams {
            g: 0.5,
            alpha_init: 1.0,
            alpha_timer: SimTime::from_us(500),
            increase_timer: SimTime::from_us(40),
            byte_counter: 1 << 40,
            fast_recovery_steps: 1,
            rai_frac: 0.01,
            rhai_frac: 0.01,
            min_rate_frac: 1e-3,
            cnp_interval: SimTime::from_us(4),
            ecn: EcnConfig {
                kmin_bytes: 4 * 1024,
                kmax_bytes: 32 * 1024,
                pmax: 1.0,
            },
        }
    }

    pub fn validate(&self, queue_capacity_bytes: u64) -> Result<()> {
        self.ecn.validate(queue_capacity_bytes)?;
        if !(self.g > 0.0 && self.g <= 1.0) {
            return invalid("dcqcn g must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.alpha_init) {
            return invalid("dcqcn alpha_init must be in [0, 1]");
        }
        if !(self.min_rate_frac > 0.0 && self.min_rate_frac <= 1.0) {
            return invalid("dcqcn min_rate must be in (0, 1] of line rate");
        }
        if self.alpha_timer == SimTime::ZERO || self.increase_timer == SimTime::ZERO {
            return invalid("dcqcn timers must be positive");
        }
        if self.byte_counter == 0 {
            return invalid("dcqcn byte counter must be positive");
        }
        if self.rai_frac < 0.0 || self.rhai_frac < 0.0 {
            return invalid("dcqcn increase steps must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcqcnState {
    pub line_rate: f64,
    pub current: f64,
    pub target: f64,
    pub alpha: f64,
    pub timer_count: u32,
    pub byte_count: u32,
    pub bytes_since_increase: u64,
    /// A notification arrived since the last alpha timer expiry.
    pub notified: bool,
}

impl DcqcnState {
    pub fn new(line_rate: f64, p: &DcqcnParams) -> Self {
        DcqcnState {
            line_rate,
            current: line_rate,
            target: line_rate,
            alpha: p.alpha_init,
            timer_count: 0,
            byte_count: 0,
            bytes_since_increase: 0,
            notified: false,
        }
    }

    fn floor(&self, p: &DcqcnParams) -> f64 {
        self.line_rate * p.min_rate_frac
    }

    /// Rate decrease on a congestion notification.
    pub fn on_cnp(&mut self, p: &DcqcnParams) {
        self.target = self.current;
        self.current = (self.current * (1.0 - self.alpha / 2.0)).max(self.floor(p));
        self.alpha = ((1.0 - p.g) * self.alpha + p.g).min(1.0);
        self.timer_count = 0;
        self.byte_count = 0;
        self.bytes_since_increase = 0;
        self.notified = true;
    }

    /// Alpha timer expiry.
    pub fn on_alpha_timer(&mut self, p: &DcqcnParams) {
        if !self.notified {
            self.alpha *= 1.0 - p.g;
        }
        self.notified = false;
    }

    /// One rate-increase event (timer or byte counter).
    pub fn recover(&mut self, p: &DcqcnParams) {
        let f = p.fast_recovery_steps;
        let hi = self.timer_count.max(self.byte_count);
        let lo = self.timer_count.min(self.byte_count);
        if hi < f {
            // fast recovery
        } else if lo > f {
            let i = (lo - f) as f64;
            self.target += i * p.rhai_frac * self.line_rate;
        } else {
            self.target += p.rai_frac * self.line_rate;
        }
        self.target = self.target.min(self.line_rate);
        self.current = ((self.target + self.current) / 2.0).min(self.line_rate);
    }

    pub fn on_increase_timer(&mut self, p: &DcqcnParams) {
        self.timer_count = self.timer_count.saturating_add(1);
        self.recover(p);
    }

    /// Accounts sent bytes; returns true when the byte counter fired.
    pub fn on_bytes_sent(&mut self, bytes: u64, p: &DcqcnParams) -> bool {
        if self.current >= self.line_rate {
            return false;
        }
        self.bytes_since_increase += bytes;
        if self.bytes_since_increase >= p.byte_counter {
            self.bytes_since_increase = 0;
            self.byte_count = self.byte_count.saturating_add(1);
            self.recover(p);
            return true;
        }
        false
    }

    pub fn at_line_rate(&self) -> bool {
        self.current >= self.line_rate
    }
}

pub fn dcqcn_on_cnp(mut state: DcqcnState, p: &DcqcnParams) -> DcqcnState {
    state.on_cnp(p);
    state
}

pub fn dcqcn_recover(mut state: DcqcnState, p: &DcqcnParams) -> DcqcnState {
    state.recover(p);
    state
}

/// InfiniBand-style forward marking with source inter-packet delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbCcParams {
    pub fecn: EcnConfig,
    pub ipd_step: SimTime,
    pub ipd_max: SimTime,
    pub recovery_interval: SimTime,
    pub recovery_step: SimTime,
}

impl Default for IbCcParams {
    fn default() -> Self {
        IbCcParams {
            fecn: EcnConfig {
                kmin_bytes: 32 * 1024,
                kmax_bytes: 192 * 1024,
                pmax: 0.5,
            },
            ipd_step: SimTime::from_ns(100),
            ipd_max: SimTime::from_us(20),
            recovery_interval: SimTime::from_us(5),
            recovery_step: SimTime::from_ns(200),
        }
    }
}

impl IbCcParams {
    pub fn validate(&self, queue_capacity_bytes: u64) -> Result<()> {
        self.fecn.validate(queue_capacity_bytes)?;
        if self.recovery_interval == SimTime::ZERO {
            return invalid("ib recovery interval must be positive");
        }
        if self.ipd_max < self.ipd_step {
            return invalid("ib ipd_max must be at least ipd_step");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IbCcState {
    pub ipd: SimTime,
    /// A BECN arrived since the last recovery tick.
    pub notified: bool,
}

impl IbCcState {
    pub fn on_becn(&mut self, p: &IbCcParams) {
        self.ipd = (self.ipd + p.ipd_step).min(p.ipd_max);
        self.notified = true;
    }

    pub fn on_recovery_tick(&mut self, p: &IbCcParams) {
        if !self.notified {
            self.ipd = self.ipd.saturating_sub(p.recovery_step);
        }
        self.notified = false;
    }

    /// Rate after inserting the inter-packet delay between cells.
    pub fn effective_rate(&self, cell_time: SimTime, line_rate: f64) -> f64 {
        let c = cell_time.ps() as f64;
        line_rate * c / (c + self.ipd.ps() as f64)
    }
}

pub fn ib_apply_ipd(mut state: IbCcState, p: &IbCcParams) -> IbCcState {
    state.on_becn(p);
    state
}

/// A backward notification produced by a destination for a marked cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Becn {
    pub key: FlowKey,
    pub at: SimTime,
}

/// Destination-side reaction to a delivered cell: one BECN per marked
/// cell, due after the reverse-path delay.
pub fn ib_on_fecn(key: FlowKey, marked: bool, now: SimTime, reverse_delay: SimTime) -> Option<Becn> {
    marked.then_some(Becn {
        key,
        at: now + reverse_delay,
    })
}

/// Source throttling driven by per-flow contribution tracking at each
/// switch port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowGranularParams {
    pub window: SimTime,
    /// Port occupancy above which contributors are examined.
    pub threshold_bytes: u64,
    /// How long a cap holds before it is relaxed.
    pub hold: SimTime,
    /// Fraction of port capacity shared out as fair share.
    pub target_utilization: f64,
}

impl Default for FlowGranularParams {
    fn default() -> Self {
        FlowGranularParams {
            window: SimTime::from_us(4),
            threshold_bytes: 16 * 1024,
            hold: SimTime::from_us(100),
            target_utilization: 0.95,
        }
    }
}

impl FlowGranularParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == SimTime::ZERO {
            return invalid("flow_granular window must be positive");
        }
        if !(self.target_utilization > 0.0 && self.target_utilization <= 1.0) {
            return invalid("flow_granular target_utilization must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowGranularCcState {
    pub contributions: BTreeMap<FlowKey, u64>,
    pub throttle: BTreeSet<FlowKey>,
    pub caps: BTreeMap<FlowKey, f64>,
}

/// Rebuilds the throttle decision for one port from the bytes each flow
/// contributed during the last window.
pub fn flow_granular_update(
    contributions: &BTreeMap<FlowKey, u64>,
    occupancy_bytes: u64,
    port_rate_bps: u64,
    p: &FlowGranularParams,
) -> FlowGranularCcState {
    let mut st = FlowGranularCcState {
        contributions: contributions.clone(),
        ..Default::default()
    };
    let active = contributions.values().filter(|b| **b > 0).count();
    if active < 2 || occupancy_bytes <= p.threshold_bytes {
        return st;
    }
    let fair_bps = p.target_utilization * port_rate_bps as f64 / active as f64;
    let window_s = p.window.ps() as f64 * 1e-12;
    let fair_bytes = port_rate_bps as f64 * window_s / active as f64 / 8.0;
    for (&key, &bytes) in contributions {
        if bytes as f64 > fair_bytes {
            st.throttle.insert(key);
            st.caps.insert(key, fair_bps);
        }
    }
    st
}

/// Congestion-control policy of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CcPolicy {
    None,
    Dcqcn(DcqcnParams),
    Ib(IbCcParams),
    FlowGranular(FlowGranularParams),
}

impl CcPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            CcPolicy::None => "none",
            CcPolicy::Dcqcn(_) => "dcqcn",
            CcPolicy::Ib(_) => "ib",
            CcPolicy::FlowGranular(_) => "flow_granular",
        }
    }

    pub fn marking(&self) -> Option<&EcnConfig> {
        match self {
            CcPolicy::Dcqcn(p) => Some(&p.ecn),
            CcPolicy::Ib(p) => Some(&p.fecn),
            _ => None,
        }
    }

    pub fn validate(&self, queue_capacity_bytes: u64) -> Result<()> {
        match self {
            CcPolicy::None => Ok(()),
            CcPolicy::Dcqcn(p) => p.validate(queue_capacity_bytes),
            CcPolicy::Ib(p) => p.validate(queue_capacity_bytes),
            CcPolicy::FlowGranular(p) => p.validate(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ecn() -> EcnConfig {
        EcnConfig {
            kmin_bytes: 10_000,
            kmax_bytes: 50_000,
            pmax: 1.0,
        }
    }

    #[test]
    fn no_mark_below_kmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(!ecn().should_mark(0, &mut rng));
        }
    }

    #[test]
    fn always_mark_at_capacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(ecn().should_mark(64 * 4096, &mut rng));
        }
    }

    #[test]
    fn midway_mark_rate_is_half() {
        // Monte Carlo frequency oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 100_000;
        let marks = (0..trials)
            .filter(|_| ecn_mark_on_enqueue(&ecn(), 30_000, false, &mut rng))
            .count();
        let rate = marks as f64 / trials as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn marked_cells_stay_marked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(ecn_mark_on_enqueue(&ecn(), 0, true, &mut rng));
    }

    #[test]
    fn ecn_validation() {
        assert!(ecn().validate(64 * 4096).is_ok());
        assert!(ecn().validate(40_000).is_err());
        let bad = EcnConfig { pmax: 0.0, ..ecn() };
        assert!(bad.validate(1 << 20).is_err());
        let inverted = EcnConfig {
            kmin_bytes: 60_000,
            ..ecn()
        };
        assert!(inverted.validate(1 << 20).is_err());
    }

    #[test]
    fn cnp_with_alpha_one_halves_rate() {
        let p = DcqcnParams::published();
        let mut s = DcqcnState::new(100e9, &p);
        s.alpha = 1.0;
        let s = dcqcn_on_cnp(s, &p);
        assert_eq!(s.current, 50e9);
        assert_eq!(s.target, 100e9);
    }

    #[test]
    fn cnp_with_alpha_zero_keeps_rate() {
        let p = DcqcnParams::published();
        let mut s = DcqcnState::new(100e9, &p);
        s.alpha = 0.0;
        let s = dcqcn_on_cnp(s, &p);
        assert_eq!(s.current, 100e9);
        assert!(s.alpha > 0.0);
    }

    #[test]
    fn repeated_cnps_decrease_to_floor() {
        let p = DcqcnParams::published();
        let mut s = DcqcnState::new(100e9, &p);
        let floor = 100e9 * p.min_rate_frac;
        let mut prev = s.current;
        for _ in 0..200 {
            s.on_cnp(&p);
            assert!(s.current >= floor);
            if prev > floor {
                assert!(s.current < prev);
            }
            prev = s.current;
        }
        assert_eq!(s.current, floor);
    }

    #[test]
    fn recovery_midpoint_rule() {
        let p = DcqcnParams::published();
        let mut s = DcqcnState::new(100e9, &p);
        s.target = 80e9;
        s.current = 40e9;
        let s = dcqcn_recover(s, &p);
        assert_eq!(s.current, 60e9);
        assert_eq!(s.target, 80e9);
    }

    #[test]
    fn additive_stage_increments_target() {
        let p = DcqcnParams::published();
        let mut s = DcqcnState::new(100e9, &p);
        s.target = 50e9;
        s.current = 50e9;
        s.timer_count = p.fast_recovery_steps;
        let s = dcqcn_recover(s, &p);
        let rai = p.rai_frac * 100e9;
        assert!((s.target - (50e9 + rai)).abs() < 1.0);
        assert!((s.current - (50e9 + rai / 2.0)).abs() < 1.0);
    }

    #[test]
    fn cnp_free_run_converges_to_line_rate() {
        // Iterate the rule from a deep cut and count steps.
        let p = DcqcnParams::stable();
        let mut s = DcqcnState::new(100e9, &p);
        for _ in 0..8 {
            s.on_cnp(&p);
        }
        let mut steps = 0;
        while s.current < 100e9 * 0.999 {
            s.on_increase_timer(&p);
            steps += 1;
            assert!(steps < 10_000);
        }
        assert!(steps > p.fast_recovery_steps as usize);
        assert!(s.current <= 100e9);
    }

    #[test]
    fn alpha_decays_without_notifications() {
        let p = DcqcnParams::published();
        let mut s = DcqcnState::new(100e9, &p);
        s.on_cnp(&p);
        s.on_alpha_timer(&p);
        let a = s.alpha;
        s.on_alpha_timer(&p);
        assert!(s.alpha < a);
        assert!((0.0..=1.0).contains(&s.alpha));
    }

    #[test]
    fn presets_validate() {
        for p in [DcqcnParams::published(), DcqcnParams::stable(), DcqcnParams::unstable()] {
            p.validate(64 * 4096).unwrap();
        }
        IbCcParams::default().validate(64 * 4096).unwrap();
    }

    #[test]
    fn ipd_step_and_recovery() {
        let p = IbCcParams::default();
        let s = ib_apply_ipd(IbCcState::default(), &p);
        assert_eq!(s.ipd, p.ipd_step);
        let mut s = s;
        s.on_recovery_tick(&p); // notified flag consumed
        s.on_recovery_tick(&p);
        assert_eq!(s.ipd, SimTime::ZERO);
    }

    #[test]
    fn ipd_effective_rate() {
        let s = IbCcState {
            ipd: SimTime::from_ps(327_680),
            notified: false,
        };
        let r = s.effective_rate(SimTime::from_ps(327_680), 100e9);
        assert!((r - 50e9).abs() < 1.0);
    }

    #[test]
    fn becn_only_for_marked_cells() {
        let key = FlowKey::new(1, 2);
        assert!(ib_on_fecn(key, false, SimTime::ZERO, SimTime::from_ns(10)).is_none());
        let b = ib_on_fecn(key, true, SimTime::from_ns(5), SimTime::from_ns(10)).unwrap();
        assert_eq!(b.at, SimTime::from_ns(15));
    }

    #[test]
    fn becn_count_matches_marks() {
        let key = FlowKey::new(0, 1);
        let marks = [true, false, true, true, false, true];
        let becns: Vec<_> = marks
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| ib_on_fecn(key, m, SimTime::from_ns(i as u64 * 100), SimTime::from_ns(50)))
            .collect();
        assert_eq!(becns.len(), 4);
        assert!(becns.windows(2).all(|w| w[0].at < w[1].at));
    }

    #[test]
    fn single_flow_never_throttled() {
        let p = FlowGranularParams::default();
        let c = BTreeMap::from([(FlowKey::new(0, 9), 1_000_000)]);
        let st = flow_granular_update(&c, 1 << 20, 200_000_000_000, &p);
        assert!(st.throttle.is_empty());
    }

    #[test]
    fn aggressors_throttled_victim_spared() {
        let p = FlowGranularParams::default();
        let rate = 200_000_000_000u64;
        let window_bytes = rate as f64 * p.window.ps() as f64 * 1e-12 / 8.0;
        let fair = window_bytes / 8.0;
        let mut c = BTreeMap::new();
        // victim at 1/8 of its fair share, aggressors split the rest
        let victim = (fair / 8.0) as u64;
        let aggressor = ((window_bytes - victim as f64) / 7.0) as u64;
        for s in 1..=7 {
            c.insert(FlowKey::new(s, 0), aggressor);
        }
        c.insert(FlowKey::new(8, 9), victim);
        let st = flow_granular_update(&c, 1 << 20, rate, &p);
        assert_eq!(st.throttle.len(), 7);
        assert!(!st.throttle.contains(&FlowKey::new(8, 9)));
        assert!(!st.caps.contains_key(&FlowKey::new(8, 9)));
        for cap in st.caps.values() {
            assert!((cap - p.target_utilization * rate as f64 / 8.0).abs() < 1.0);
        }
    }

    #[test]
    fn empty_window_means_no_throttle() {
        let p = FlowGranularParams::default();
        let st = flow_granular_update(&BTreeMap::new(), 1 << 20, 1, &p);
        assert!(st.throttle.is_empty());
    }

    #[test]
    fn below_threshold_means_no_throttle() {
        let p = FlowGranularParams::default();
        let c = BTreeMap::from([(FlowKey::new(0, 9), 1_000_000), (FlowKey::new(1, 9), 1)]);
        let st = flow_granular_update(&c, p.threshold_bytes, 200_000_000_000, &p);
        assert!(st.throttle.is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn marking_monotone(kmin in 0u64..100_000, span in 1u64..100_000, pmax in 0.01f64..1.0,
                                a in 0u64..300_000, b in 0u64..300_000) {
                let cfg = EcnConfig { kmin_bytes: kmin, kmax_bytes: kmin + span, pmax };
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(cfg.mark_probability(lo) <= cfg.mark_probability(hi));
            }

            #[test]
            fn dcqcn_rate_bounds(ops in proptest::collection::vec(0u8..3, 1..300)) {
                let p = DcqcnParams::published();
                let line = 200e9;
                let mut s = DcqcnState::new(line, &p);
                for op in ops {
                    match op {
                        0 => s.on_cnp(&p),
                        1 => s.on_increase_timer(&p),
                        _ => s.on_alpha_timer(&p),
                    }
                    prop_assert!(s.current > 0.0 && s.current <= line);
                    prop_assert!((0.0..=1.0).contains(&s.alpha));
                }
            }

            #[test]
            fn ipd_never_negative(ops in proptest::collection::vec(any::<bool>(), 1..300)) {
                let p = IbCcParams::default();
                let mut s = IbCcState::default();
                for becn in ops {
                    if becn { s.on_becn(&p) } else { s.on_recovery_tick(&p) }
                    prop_assert!(s.ipd <= p.ipd_max);
                }
            }
        }
    }
}
