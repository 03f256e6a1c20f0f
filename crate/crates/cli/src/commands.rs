use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use fabsim_core::config::{parse_config, Config};
use fabsim_core::harness::{
    preset_defaults, row_for, run_baseline, run_congested, sweep as run_sweep, victim_throughput_trace,
    CellCoord, ExperimentSpec, InjectionMode, SweepOptions,
};
use fabsim_core::report::{render_heatmap, render_timeseries, Axis, ResultRow, ResultTable, ThroughputTrace, CSV_HEADER};
use fabsim_core::topology::Preset;
use fabsim_core::units::{fmt_bytes, fmt_duration, fmt_rate, parse_duration};
use fabsim_core::Error;
use log::{info, warn};

use crate::manifest::{digest, Manifest};
use crate::{ReportKind, RunArgs, SweepArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Grid(String),
    #[error("{0}")]
    Failed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidParameter(_) => CliError::Config(e.to_string()),
            Error::Io(_) | Error::Manifest(_) => CliError::Io(e.to_string()),
            Error::IncompleteGrid(_) => CliError::Grid(e.to_string()),
            Error::Internal(_) => CliError::Failed(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn load(path: &Path, seed: Option<u64>) -> Result<Config, CliError> {
    let mut cfg = parse_config(path).map_err(|e| match e {
        Error::Io(io) => io_err(path, io),
        e => CliError::Config(format!("{}: {e}", path.display())),
    })?;
    if let Some(s) = seed {
        cfg.spec.seed = s;
    }
    Ok(cfg)
}

/// Writes via a temporary file so readers never see a partial file.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn metadata(command: &str, cfg: &Config, baseline_only: bool) -> String {
    let s = &cfg.spec;
    let agg = match s.aggressor_bytes {
        Some(b) => fmt_bytes(b),
        None => {
            let max = cfg.sweep.as_ref().map(|a| a.vectors.clone()).unwrap_or_else(|| s.vectors.clone());
            format!("{} (default: largest victim vector)", fmt_bytes(max.into_iter().max().unwrap_or(0)))
        }
    };
    format!(
        "# fabsim {} metadata\ncommand = {command}\nbaseline_only = {baseline_only}\naggressor_bytes = {agg}\n\n# normalized config\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.dump()
    )
}

fn single_vector(spec: &ExperimentSpec, v: u64) -> ExperimentSpec {
    let mut s = spec.clone();
    if s.aggressor_bytes.is_none() {
        s.aggressor_bytes = Some(spec.aggressor_size());
    }
    s.vectors = vec![v];
    s
}

pub fn run(a: RunArgs) -> Result<(), CliError> {
    let cfg = load(&a.config, a.seed)?;
    let bin = match &a.trace {
        Some(t) => Some(
            parse_duration(t)
                .filter(|d| d.ps() > 0)
                .ok_or_else(|| CliError::Config(format!("--trace expects a positive duration with a unit, got `{t}`")))?,
        ),
        None => None,
    };
    let spec = &cfg.spec;
    let mut table = ResultTable::new();
    for &v in &spec.vectors {
        let s = single_vector(spec, v);
        info!("vector {}: baseline", fmt_bytes(v));
        let base = run_baseline(&s)?;
        let cong = if a.baseline {
            None
        } else {
            info!("vector {}: congested", fmt_bytes(v));
            Some(run_congested(&s)?)
        };
        let row = row_for(&s, &base, cong.as_ref(), s.seed);
        if let Some(r) = row.ratio {
            info!("vector {}: ratio {r:.3}", fmt_bytes(v));
        }
        table.push(row)?;
    }
    ensure_dir(&a.out)?;
    if let Some(bin) = bin {
        let s = single_vector(spec, spec.vector());
        let trace = victim_throughput_trace(&s, bin, 0)?;
        write_atomic(&a.out.join("trace.csv"), &trace.to_csv())?;
    }
    write_atomic(&a.out.join("results.meta"), &metadata(if a.baseline { "baseline" } else { "run" }, &cfg, a.baseline))?;
    write_atomic(&a.out.join("results.csv"), &table.to_csv())?;
    Ok(())
}

type CellKey = (usize, u64, Option<String>, Option<String>);

fn cell_key(c: &CellCoord) -> CellKey {
    let (b, g) = match c.injection {
        InjectionMode::Steady => (None, None),
        InjectionMode::Bursty { burst, gap } => (Some(burst.to_string()), Some(fmt_duration(gap))),
    };
    (c.nodes, c.vector, b, g)
}

fn row_key(r: &ResultRow) -> CellKey {
    (r.nodes, r.vector_bytes, r.burst.clone(), r.idle_gap.clone())
}

fn read_rows(path: &Path) -> Result<Vec<ResultRow>, String> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.to_string()),
    };
    let mut lines = text.lines();
    match lines.next() {
        None => return Ok(Vec::new()),
        Some(h) if h == CSV_HEADER => {}
        Some(_) => return Err("unexpected CSV header".into()),
    }
    lines.map(|l| ResultRow::from_csv(l).map_err(|e| e.to_string())).collect()
}

pub fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let cfg = load(&a.config, a.seed)?;
    let Some(axes) = cfg.sweep.clone() else {
        return Err(CliError::Config(format!("{}: no [sweep] table", a.config.display())));
    };
    ensure_dir(&a.out)?;
    let csv_path = a.out.join("results.csv");
    let man_path = a.out.join("manifest");
    let cells = axes.cells();
    let index: HashMap<CellKey, usize> = cells.iter().enumerate().map(|(i, c)| (cell_key(c), i)).collect();
    let dig = digest(&format!("{}baseline_only = {}\n", cfg.dump(), a.baseline));

    let mut rows: Vec<Option<ResultRow>> = vec![None; cells.len()];
    let mut done = BTreeSet::new();
    let existing = man_path.exists();
    if existing && !a.fresh {
        if !a.resume {
            return Err(CliError::Io(format!(
                "{} holds a previous sweep; pass --resume to continue it or --fresh to discard it",
                a.out.display()
            )));
        }
        let corrupt = |why: String| {
            CliError::Io(format!("cannot resume, {why}; rerun with --fresh to start over"))
        };
        let text = fs::read_to_string(&man_path).map_err(|e| io_err(&man_path, e))?;
        let m = Manifest::parse(&text).map_err(|e| corrupt(format!("corrupted manifest: {e}")))?;
        if m.digest != dig || m.cells != cells.len() {
            return Err(corrupt("the manifest belongs to a different configuration".into()));
        }
        for r in read_rows(&csv_path).map_err(|e| corrupt(format!("unreadable results: {e}")))? {
            let Some(&i) = index.get(&row_key(&r)) else {
                return Err(corrupt("results contain a row outside the grid".into()));
            };
            // rows written after the last manifest entry are redone
            if m.done.contains(&i) {
                rows[i] = Some(r);
            }
        }
        if let Some(i) = m.done.iter().find(|&&i| rows[i].is_none()) {
            return Err(corrupt(format!("completed cell {} has no result row", cells[*i])));
        }
        done = m.done;
        info!("resuming: {} of {} cells already complete", done.len(), cells.len());
    }

    let mut man = if done.is_empty() {
        Manifest::create(&man_path, dig, cells.len()).map_err(|e| io_err(&man_path, e))?
    } else {
        Manifest::append_to(&man_path).map_err(|e| io_err(&man_path, e))?
    };
    // committed rows first, new rows are appended as they finish
    let mut committed = String::from(CSV_HEADER);
    committed.push('\n');
    for r in rows.iter().flatten() {
        committed.push_str(&r.to_csv());
        committed.push('\n');
    }
    write_atomic(&csv_path, &committed)?;
    write_atomic(&a.out.join("results.meta"), &metadata("sweep", &cfg, a.baseline))?;
    let mut csv = fs::OpenOptions::new().append(true).open(&csv_path).map_err(|e| io_err(&csv_path, e))?;

    let opts = SweepOptions {
        threads: SweepOptions::threads_from_env(),
        baseline_only: a.baseline,
        skip: done.clone(),
        limit: a.max_cells,
    };
    let mut simulated = 0usize;
    let mut failures = Vec::new();
    run_sweep(&cfg.spec, &axes, &opts, &mut |i, c, res| {
        simulated += 1;
        match res {
            Ok(row) => {
                info!("cell {c}: ratio {}", row.ratio.map(|r| format!("{r:.3}")).unwrap_or_else(|| "-".into()));
                writeln!(csv, "{}", row.to_csv()).and_then(|_| csv.sync_data())?;
                Manifest::record(&mut man, i)?;
                rows[i] = Some(row.clone());
            }
            Err(e) => {
                warn!("cell {c} failed: {e}");
                failures.push(format!("{c}: {e}"));
            }
        }
        Ok(())
    })?;
    info!("simulated {simulated} cells");

    let complete = rows.iter().all(Option::is_some);
    if complete {
        // grid order, independent of how the sweep was interrupted
        let mut t = ResultTable::new();
        for r in rows.into_iter().flatten() {
            t.push(r)?;
        }
        write_atomic(&csv_path, &t.to_csv())?;
    }
    if !failures.is_empty() {
        return Err(CliError::Failed(format!("{} cells failed: {}", failures.len(), failures.join("; "))));
    }
    if !complete {
        info!("sweep stopped early; rerun with --resume to finish");
    }
    Ok(())
}

pub fn report(kind: ReportKind) -> Result<(), CliError> {
    match kind {
        ReportKind::Heatmap { input, x, y, title, out } => {
            let axis = |s: &str| {
                Axis::from_name(s).ok_or_else(|| CliError::Config(format!("unknown axis `{s}` (nodes, vector, burst, idle_gap)")))
            };
            let (x, y) = (axis(&x)?, axis(&y)?);
            let text = fs::read_to_string(&input).map_err(|e| io_err(&input, e))?;
            let table = ResultTable::from_csv(&text).map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
            let title = title.unwrap_or_else(|| default_title(&table));
            let svg = render_heatmap(&table, x, y, &title)?;
            ensure_dir(&out)?;
            write_atomic(&out.join("heatmap.svg"), &svg)
        }
        ReportKind::Timeseries { input, out } => {
            let text = fs::read_to_string(&input).map_err(|e| io_err(&input, e))?;
            let trace = ThroughputTrace::from_csv(&text).map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
            let svg = render_timeseries(&trace)?;
            let st = trace.stats()?;
            println!(
                "mean {:.3} Gb/s  cov {:.4}  peak/trough {:.3}  cycles {}",
                st.mean_bps / 1e9,
                st.cov,
                st.peak_to_trough,
                st.cycles
            );
            ensure_dir(&out)?;
            write_atomic(&out.join("timeseries.svg"), &svg)
        }
    }
}

fn default_title(t: &ResultTable) -> String {
    match t.rows().first() {
        Some(r) => format!("{} {} victim, {} aggressor, cc {}, lb {}", r.topology, r.victim, r.aggressor, r.cc, r.lb),
        None => String::new(),
    }
}

pub fn presets_list() -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    for p in Preset::ALL {
        let d = preset_defaults(p);
        let rx = d.host_rx_fraction.map(|f| format!("{f}")).unwrap_or_else(|| "off".into());
        let _ = writeln!(
            out,
            "{:<13} {}\n{:<13} rate {}, cc {}, lb {}, flow_control {}, host_rx {}",
            p.name(),
            p.description(),
            "",
            fmt_rate(p.default_rate()),
            d.cc.name(),
            d.lb.name(),
            d.flow_control.name(),
            rx
        );
    }
    Ok(())
}
