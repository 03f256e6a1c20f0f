//! Result tables, CSV and SVG output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::units::{fmt_bytes, parse_duration, rate_of, SimTime};

pub const CSV_HEADER: &str = "topology,nodes,victim,vector_bytes,aggressor,injection,burst,idle_gap,cc,lb,\
baseline_mean_ns,congested_mean_ns,ratio,stdev_ns,p50_ns,p99_ns,seed";

fn round3(x: f64) -> f64 {
    (x * 1e3).round() / 1e3
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub topology: String,
    pub nodes: usize,
    pub victim: String,
    pub vector_bytes: u64,
    pub aggressor: String,
    pub injection: String,
    pub burst: Option<String>,
    pub idle_gap: Option<String>,
    pub cc: String,
    pub lb: String,
    pub baseline_mean_ns: f64,
    pub congested_mean_ns: Option<f64>,
    pub ratio: Option<f64>,
    pub stdev_ns: f64,
    pub p50_ns: f64,
    pub p99_ns: f64,
    pub seed: u64,
}

impl ResultRow {
    /// Means are rounded to the CSV precision first so the stored ratio is
    /// recomputable from the file.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        topology: String,
        nodes: usize,
        victim: String,
        vector_bytes: u64,
        aggressor: String,
        injection: String,
        burst: Option<String>,
        idle_gap: Option<String>,
        cc: String,
        lb: String,
        baseline_mean_ns: f64,
        congested_mean_ns: Option<f64>,
        stdev_ns: f64,
        p50_ns: f64,
        p99_ns: f64,
        seed: u64,
    ) -> Self {
        let b = round3(baseline_mean_ns);
        let c = congested_mean_ns.map(round3);
        ResultRow {
            topology,
            nodes,
            victim,
            vector_bytes,
            aggressor,
            injection,
            burst,
            idle_gap,
            cc,
            lb,
            baseline_mean_ns: b,
            congested_mean_ns: c,
            ratio: c.map(|c| b / c),
            stdev_ns: round3(stdev_ns),
            p50_ns: round3(p50_ns),
            p99_ns: round3(p99_ns),
            seed,
        }
    }

    /// Key over every axis plus the seed.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
            self.topology,
            self.nodes,
            self.victim,
            self.vector_bytes,
            self.aggressor,
            self.injection,
            self.burst.as_deref().unwrap_or(""),
            self.idle_gap.as_deref().unwrap_or(""),
            self.cc,
            self.lb,
            self.seed
        )
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>, prec: usize| v.map(|x| format!("{x:.prec$}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.3},{},{},{:.3},{:.3},{:.3},{}",
            self.topology,
            self.nodes,
            self.victim,
            self.vector_bytes,
            self.aggressor,
            self.injection,
            self.burst.as_deref().unwrap_or(""),
            self.idle_gap.as_deref().unwrap_or(""),
            self.cc,
            self.lb,
            self.baseline_mean_ns,
            opt(self.congested_mean_ns, 3),
            opt(self.ratio, 6),
            self.stdev_ns,
            self.p50_ns,
            self.p99_ns,
            self.seed
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 17 {
            return invalid(format!("expected 17 columns, found {}", f.len()));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("column {} is not a number: {:?}", i + 1, f[i])))
        };
        let opt_num = |i: usize| -> Result<Option<f64>> { if f[i].is_empty() { Ok(None) } else { num(i).map(Some) } };
        let opt_str = |i: usize| (!f[i].is_empty()).then(|| f[i].to_string());
        let int = |i: usize| -> Result<u64> {
            f[i].parse::<u64>()
                .map_err(|_| Error::InvalidParameter(format!("column {} is not an integer: {:?}", i + 1, f[i])))
        };
        Ok(ResultRow {
            topology: f[0].to_string(),
            nodes: int(1)? as usize,
            victim: f[2].to_string(),
            vector_bytes: int(3)?,
            aggressor: f[4].to_string(),
            injection: f[5].to_string(),
            burst: opt_str(6),
            idle_gap: opt_str(7),
            cc: f[8].to_string(),
            lb: f[9].to_string(),
            baseline_mean_ns: num(10)?,
            congested_mean_ns: opt_num(11)?,
            ratio: opt_num(12)?,
            stdev_ns: num(13)?,
            p50_ns: num(14)?,
            p99_ns: num(15)?,
            seed: int(16)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    rows: Vec<ResultRow>,
    keys: BTreeSet<String>,
}

impl ResultTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: ResultRow) -> Result<()> {
        for s in [&row.topology, &row.victim, &row.aggressor, &row.injection, &row.cc, &row.lb]
            .into_iter()
            .chain(row.burst.iter())
            .chain(row.idle_gap.iter())
        {
            if s.contains([',', '"', '\n', '\r']) {
                return invalid(format!("field {s:?} cannot be written to CSV"));
            }
        }
        if !self.keys.insert(row.key()) {
            return invalid(format!("duplicate result row {}", row.key()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == CSV_HEADER => {}
            _ => return invalid("missing or unexpected CSV header"),
        }
        let mut t = ResultTable::new();
        for (i, l) in lines.enumerate() {
            if l.is_empty() {
                continue;
            }
            let row = ResultRow::from_csv(l).map_err(|e| Error::InvalidParameter(format!("row {}: {e}", i + 2)))?;
            t.push(row)?;
        }
        Ok(t)
    }

    /// Checks that each stored ratio matches the mean columns.
    pub fn check_ratios(&self) -> Result<()> {
        for r in &self.rows {
            if let (Some(c), Some(q)) = (r.congested_mean_ns, r.ratio) {
                if ((r.baseline_mean_ns / c) - q).abs() > 5e-7 {
                    return invalid(format!("ratio mismatch in row {}", r.key()));
                }
            }
        }
        Ok(())
    }
}

/// Columns usable as heatmap axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Nodes,
    Vector,
    Burst,
    IdleGap,
}

impl Axis {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "nodes" => Some(Axis::Nodes),
            "vector" | "vector_bytes" => Some(Axis::Vector),
            "burst" => Some(Axis::Burst),
            "idle_gap" | "gap" => Some(Axis::IdleGap),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Axis::Nodes => "nodes",
            Axis::Vector => "vector size",
            Axis::Burst => "burst length",
            Axis::IdleGap => "burst pause",
        }
    }

    fn value(self, r: &ResultRow) -> Option<AxisValue> {
        match self {
            Axis::Nodes => Some(AxisValue::num(r.nodes as u64, r.nodes.to_string())),
            Axis::Vector => Some(AxisValue::num(r.vector_bytes, fmt_bytes(r.vector_bytes))),
            Axis::Burst => r.burst.as_deref().map(AxisValue::timed),
            Axis::IdleGap => r.idle_gap.as_deref().map(AxisValue::timed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct AxisValue {
    order: (u8, u64),
    label: String,
}

impl AxisValue {
    fn num(v: u64, label: String) -> Self {
        AxisValue { order: (0, v), label }
    }

    /// Collective counts (`4c`) sort before durations.
    fn timed(s: &str) -> Self {
        let order = if let Some(k) = s.strip_suffix('c').and_then(|k| k.parse::<u64>().ok()) {
            (0, k)
        } else if let Some(d) = parse_duration(s) {
            (1, d.ps())
        } else {
            (2, 0)
        };
        AxisValue { order, label: s.to_string() }
    }
}

/// Dark at ratio 0, light at ratio 1 and above.
pub fn ratio_color(ratio: f64) -> String {
    const DARK: (f64, f64, f64) = (0x20 as f64, 0x10 as f64, 0x48 as f64);
    const LIGHT: (f64, f64, f64) = (0xfc as f64, 0xf5 as f64, 0xd8 as f64);
    let t = if ratio.is_finite() { ratio.clamp(0.0, 1.0) } else { 0.0 };
    let c = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(DARK.0, LIGHT.0), c(DARK.1, LIGHT.1), c(DARK.2, LIGHT.2))
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One annotated cell per (x, y) grid point. Rows sort along each axis by
/// value; power-of-two vector sizes therefore land on a log2 scale.
pub fn render_heatmap(table: &ResultTable, x: Axis, y: Axis, title: &str) -> Result<String> {
    if x == y {
        return invalid("heatmap axes must differ");
    }
    let mut cells: BTreeMap<(AxisValue, AxisValue), Option<f64>> = BTreeMap::new();
    let mut xs = BTreeSet::new();
    let mut ys = BTreeSet::new();
    for r in table.rows() {
        let (Some(xv), Some(yv)) = (x.value(r), y.value(r)) else {
            return invalid(format!("row {} has no value for a heatmap axis", r.key()));
        };
        xs.insert(xv.clone());
        ys.insert(yv.clone());
        if cells.insert((xv.clone(), yv.clone()), r.ratio).is_some() {
            return invalid(format!("more than one row for cell {} / {}", xv.label, yv.label));
        }
    }
    if xs.is_empty() {
        return invalid("empty result table");
    }
    let mut missing = Vec::new();
    for yv in &ys {
        for xv in &xs {
            match cells.get(&(xv.clone(), yv.clone())) {
                Some(Some(_)) => {}
                _ => missing.push(format!("{}={} {}={}", x.label(), xv.label, y.label(), yv.label)),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid(missing));
    }

    let (cw, ch) = (72.0, 28.0);
    let (left, top) = (96.0, 48.0);
    let w = left + cw * xs.len() as f64 + 24.0;
    let h = top + ch * ys.len() as f64 + 64.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, esc(title));
    // largest y at the top
    for (row, yv) in ys.iter().rev().enumerate() {
        let cy = top + ch * row as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 6.0,
            cy + ch / 2.0 + 4.0,
            esc(&yv.label)
        );
        for (col, xv) in xs.iter().enumerate() {
            let ratio = cells[&(xv.clone(), yv.clone())].unwrap();
            let cx = left + cw * col as f64;
            let fg = if ratio < 0.5 { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                s,
                r##"<rect x="{cx}" y="{cy}" width="{cw}" height="{ch}" fill="{}" stroke="#ffffff"/>"##,
                ratio_color(ratio)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{fg}">{ratio:.2}</text>"#,
                cx + cw / 2.0,
                cy + ch / 2.0 + 4.0
            );
        }
    }
    let by = top + ch * ys.len() as f64;
    for (col, xv) in xs.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            left + cw * (col as f64 + 0.5),
            by + 16.0,
            esc(&xv.label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + cw * xs.len() as f64 / 2.0,
        by + 40.0,
        x.label()
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ch * ys.len() as f64 / 2.0,
        top + ch * ys.len() as f64 / 2.0,
        y.label()
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Achieved rate sampled at a fixed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputTrace {
    pub id: String,
    pub interval_ns: f64,
    pub capacity_bps: Option<f64>,
    /// (bin start in ns, bits per second)
    pub samples: Vec<(f64, f64)>,
}

pub const TRACE_CSV_HEADER: &str = "id,time_ns,rate_bps,capacity_bps";

impl ThroughputTrace {
    /// Converts delivered-bytes bins into rates. The final bin is dropped
    /// when `end` cuts it short.
    pub fn from_bins(id: String, bin: SimTime, bins: &[u64], end: SimTime) -> Self {
        let full = (end.ps() / bin.ps().max(1)) as usize;
        let samples = bins
            .iter()
            .take(full)
            .enumerate()
            .map(|(i, &b)| (i as f64 * bin.as_ns_f64(), rate_of(b, bin)))
            .collect();
        ThroughputTrace {
            id,
            interval_ns: bin.as_ns_f64(),
            capacity_bps: None,
            samples,
        }
    }

    pub fn with_capacity(mut self, bps: f64) -> Self {
        self.capacity_bps = Some(bps);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return invalid("empty throughput trace");
        }
        for w in self.samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return invalid("trace times must be strictly increasing");
            }
        }
        for &(_, r) in &self.samples {
            if !(r >= 0.0) || self.capacity_bps.is_some_and(|c| r > c * (1.0 + 1e-6)) {
                return invalid(format!("rate {r} outside [0, capacity]"));
            }
        }
        Ok(())
    }

    /// Drops idle bins before the first and after the last nonzero sample.
    pub fn trimmed(&self) -> ThroughputTrace {
        let first = self.samples.iter().position(|s| s.1 > 0.0);
        let last = self.samples.iter().rposition(|s| s.1 > 0.0);
        let samples = match (first, last) {
            (Some(a), Some(b)) => self.samples[a..=b].to_vec(),
            _ => Vec::new(),
        };
        ThroughputTrace {
            samples,
            ..self.clone()
        }
    }

    pub fn to_csv(&self) -> String {
        let cap = self.capacity_bps.map(|c| format!("{c:.0}")).unwrap_or_default();
        let mut s = String::from(TRACE_CSV_HEADER);
        s.push('\n');
        for &(t, r) in &self.samples {
            let _ = writeln!(s, "{},{t:.3},{r:.3},{cap}", self.id);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_CSV_HEADER) {
            return invalid("missing or unexpected trace header");
        }
        let mut id = None;
        let mut cap = None;
        let mut samples = Vec::new();
        for (i, l) in lines.enumerate() {
            if l.is_empty() {
                continue;
            }
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::InvalidParameter(format!("trace row {} is malformed", i + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            id.get_or_insert_with(|| f[0].to_string());
            let t: f64 = f[1].parse().map_err(|_| bad())?;
            let r: f64 = f[2].parse().map_err(|_| bad())?;
            if !f[3].is_empty() {
                cap = Some(f[3].parse::<f64>().map_err(|_| bad())?);
            }
            samples.push((t, r));
        }
        let interval_ns = if samples.len() > 1 { samples[1].0 - samples[0].0 } else { 0.0 };
        let t = ThroughputTrace {
            id: id.unwrap_or_default(),
            interval_ns,
            capacity_bps: cap,
            samples,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn stats(&self) -> Result<TraceStats> {
        if self.samples.is_empty() {
            return invalid("empty throughput trace");
        }
        let rates: Vec<f64> = self.samples.iter().map(|s| s.1).collect();
        let n = rates.len() as f64;
        let mean = rates.iter().sum::<f64>() / n;
        let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        let peak = rates.iter().copied().fold(f64::MIN, f64::max);
        let trough = rates.iter().copied().fold(f64::MAX, f64::min);
        let cov = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
        let peak_to_trough = if trough > 0.0 {
            peak / trough
        } else if peak > 0.0 {
            f64::INFINITY
        } else {
            1.0
        };
        Ok(TraceStats {
            mean_bps: mean,
            cov,
            peak_bps: peak,
            trough_bps: trough,
            peak_to_trough,
            cycles: count_cycles(&rates),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStats {
    pub mean_bps: f64,
    pub cov: f64,
    pub peak_bps: f64,
    pub trough_bps: f64,
    pub peak_to_trough: f64,
    pub cycles: usize,
}

/// Oscillations between the 25% and 75% levels of the trace's range; a
/// cycle completes on each rise above 75% that follows a dip below 25%.
pub fn count_cycles(rates: &[f64]) -> usize {
    let lo = rates.iter().copied().fold(f64::MAX, f64::min);
    let hi = rates.iter().copied().fold(f64::MIN, f64::max);
    if !(hi > lo) {
        return 0;
    }
    let low = lo + 0.25 * (hi - lo);
    let high = lo + 0.75 * (hi - lo);
    let mut state_low = None;
    let mut cycles = 0;
    for &r in rates {
        if r <= low {
            state_low = Some(true);
        } else if r >= high {
            if state_low == Some(true) {
                cycles += 1;
            }
            state_low = Some(false);
        }
    }
    cycles
}

pub fn render_timeseries(trace: &ThroughputTrace) -> Result<String> {
    trace.validate()?;
    let st = trace.stats()?;
    let (w, h) = (720.0, 360.0);
    let (left, right, top, bottom) = (72.0, 16.0, 32.0, 96.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let t0 = trace.samples[0].0;
    let t1 = trace.samples.last().unwrap().0.max(t0 + trace.interval_ns.max(1.0));
    let ymax = trace.capacity_bps.unwrap_or(st.peak_bps).max(st.peak_bps).max(1.0) * 1.05;
    let px = |t: f64| left + (t - t0) / (t1 - t0) * pw;
    let py = |r: f64| top + ph - r / ymax * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, esc(&trace.id));
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#888888"/>"##
    );
    if let Some(c) = trace.capacity_bps {
        let y = py(c);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#c03030" stroke-dasharray="6 4"/>"##,
            left + pw
        );
        let _ = writeln!(s, r##"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="#c03030">capacity</text>"##, left + pw - 4.0, y - 4.0);
    }
    let pts: Vec<String> = trace
        .samples
        .iter()
        .map(|&(t, r)| format!("{:.2},{:.2}", px(t), py(r)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#2050a0" stroke-width="1.5" points="{}"/>"##,
        pts.join(" ")
    );
    for i in 0..=4 {
        let r = ymax * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{:.0}</text>"#,
            left - 6.0,
            py(r) + 4.0,
            r / 1e9
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.2}" text-anchor="middle" transform="rotate(-90 16 {0:.2})">Gb/s</text>"#,
        top + ph / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{:.2}">{:.0} ns</text>"#,
        top + ph + 16.0,
        t0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.0} ns</text>"#,
        left + pw,
        top + ph + 16.0,
        t1
    );
    let ptt = if st.peak_to_trough.is_finite() { format!("{:.2}", st.peak_to_trough) } else { "inf".to_string() };
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{:.2}">mean {:.2} Gb/s  CoV {:.4}  peak/trough {ptt}  cycles {}</text>"#,
        top + ph + 44.0,
        st.mean_bps / 1e9,
        st.cov,
        st.cycles
    );
    s.push_str("</svg>\n");
    Ok(s)
}
