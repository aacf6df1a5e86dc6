//! Experiment execution and CSV output behind the `gpfl` binary.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::DVector;

use crate::analysis::{trace_for_records, BoundTrace, RoundAverages, T0Form};
use crate::config::{RunConfig, T0FormName};
use crate::engine::{run_method, MethodKind, RoundRecord, World};
use crate::error::{Error, Result};

/// Environment variable that replaces `run.output_dir`.
pub const OUTPUT_ENV: &str = "GPFL_OUTPUT_DIR";

pub const METRICS_COLUMNS: [&str; 12] = [
    "method",
    "seed",
    "round",
    "loss",
    "accuracy",
    "dist_to_opt",
    "g_tilde_norm",
    "eta",
    "alpha",
    "c_norm",
    "delta_probe",
    "wall_ms",
];

pub const BOUNDS_COLUMNS: [&str; 14] = [
    "method",
    "round",
    "observed_dist",
    "observed_gap",
    "delta",
    "mu",
    "t0",
    "gamma",
    "regime",
    "noise_term",
    "theorem1",
    "theorem1_recursive",
    "theorem2",
    "theorem2_recursive",
];

pub const SUMMARY_COLUMNS: [&str; 6] = ["param", "value", "method", "final_loss", "final_accuracy", "final_dist_to_opt"];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Bounds of one method.
#[derive(Debug, Clone)]
pub struct MethodBounds {
    pub method: MethodKind,
    pub trace: BoundTrace,
    pub averages: RoundAverages,
    /// Seed mean of `f(θ_t) − f*` per round.
    pub gap: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    /// Sorted by method name, then seed, then round.
    pub records: Vec<RoundRecord>,
    pub bounds: Vec<MethodBounds>,
}

impl Experiment {
    pub fn method_records(&self, method: MethodKind) -> Vec<RoundRecord> {
        self.records.iter().filter(|r| r.method == method).cloned().collect()
    }

    /// Median over seeds of the last row per method, as
    /// `(loss, accuracy, dist_to_opt)`.
    pub fn final_medians(&self) -> BTreeMap<&'static str, (f64, f64, f64)> {
        let mut last: BTreeMap<(&'static str, u64), &RoundRecord> = BTreeMap::new();
        for r in &self.records {
            let slot = last.entry((r.method.name(), r.seed)).or_insert(r);
            if r.round >= slot.round {
                *slot = r;
            }
        }
        let mut grouped: BTreeMap<&'static str, Vec<&RoundRecord>> = BTreeMap::new();
        for ((m, _), r) in last {
            grouped.entry(m).or_default().push(r);
        }
        grouped
            .into_iter()
            .map(|(m, rows)| {
                let pick = |f: fn(&RoundRecord) -> f64| median(rows.iter().map(|r| f(r)).collect());
                (m, (pick(|r| r.loss), pick(|r| r.accuracy), pick(|r| r.dist_to_opt)))
            })
            .collect()
    }
}

/// Median with NaNs ordered last; the mean of the middle pair for even
/// lengths.
pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn t0_form(cfg: &RunConfig) -> T0Form {
    match cfg.bounds.t0_form {
        T0FormName::Corrected => T0Form::Corrected,
        T0FormName::Printed => T0Form::Printed,
    }
}

/// Runs every `(method, seed)` cell of `cfg` on a prepared world.
/// Cells run on worker threads; the output order does not depend on
/// scheduling.
pub fn run_cells(cfg: &RunConfig, world: &World) -> Result<Vec<RoundRecord>> {
    let methods = cfg.methods()?;
    let mut cells: Vec<(MethodKind, u64)> = Vec::new();
    for &m in &methods {
        for &s in &cfg.run.seeds {
            if !cells.contains(&(m, s)) {
                cells.push((m, s));
            }
        }
    }
    cells.sort_by(|a, b| (a.0.name(), a.1).cmp(&(b.0.name(), b.1)));
    let theta0 = DVector::zeros(world.objective.dim());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Vec<RoundRecord>>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cells.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(method, seed)) = cells.get(i) else { break };
                let out = cfg
                    .method_options(method)
                    .and_then(|opts| run_method(world, opts, seed, theta0.clone(), cfg.run.rounds));
                log::debug!("finished {method} seed {seed}");
                results.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    let mut records = Vec::new();
    for r in results.into_inner().expect("no worker panicked") {
        records.extend(r.expect("every cell ran")?);
    }
    Ok(records)
}

/// Bounds for every method that builds a quasi-Newton direction.
pub fn method_bounds(cfg: &RunConfig, world: &World, records: &[RoundRecord]) -> Result<Vec<MethodBounds>> {
    let Some(optimum) = world.optimum.as_ref() else {
        return Ok(Vec::new());
    };
    let f_star = world.objective.loss(optimum)?;
    let g0_norm = world.objective.gradient(&DVector::zeros(world.objective.dim()))?.norm();
    let mut methods = cfg.methods()?;
    methods.sort_by_key(|m| m.name());
    methods.dedup();
    let mut out = Vec::new();
    for m in methods.into_iter().filter(|&m| m != MethodKind::FedavgAir) {
        let rows: Vec<RoundRecord> = records.iter().filter(|r| r.method == m).cloned().collect();
        let delta = match m {
            MethodKind::NewtonIdeal => Some(cfg.bounds.delta.unwrap_or(0.0)),
            _ => cfg.bounds.delta,
        };
        let (trace, averages) = trace_for_records(world.constants, g0_norm, delta, t0_form(cfg), &rows)?;
        let mut gap_sum = vec![0.0; averages.dist.len()];
        let mut count = vec![0usize; averages.dist.len()];
        for r in &rows {
            gap_sum[r.round] += r.loss - f_star;
            count[r.round] += 1;
        }
        let gap = gap_sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
        out.push(MethodBounds {
            method: m,
            trace,
            averages,
            gap,
        });
    }
    Ok(out)
}

pub fn run_experiment(cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    let world = cfg.world()?;
    let records = run_cells(cfg, &world)?;
    let bounds = method_bounds(cfg, &world, &records)?;
    Ok(Experiment { records, bounds })
}

pub fn write_metrics<W: Write>(out: W, records: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for r in records {
        w.write_record([
            r.method.name().to_string(),
            r.seed.to_string(),
            r.round.to_string(),
            fmt_f64(r.loss),
            fmt_f64(r.accuracy),
            fmt_f64(r.dist_to_opt),
            fmt_f64(r.g_tilde_norm),
            fmt_f64(r.eta),
            fmt_f64(r.alpha),
            fmt_f64(r.c_norm),
            fmt_f64(r.delta_probe),
            fmt_f64(r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bounds<W: Write>(out: W, bounds: &[MethodBounds]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BOUNDS_COLUMNS)?;
    for b in bounds {
        for (row, t) in b.trace.rows.iter().zip(0..) {
            w.write_record([
                b.method.name().to_string(),
                row.round.to_string(),
                fmt_f64(b.averages.dist[t]),
                fmt_f64(b.gap[t]),
                fmt_f64(b.trace.inputs.delta),
                fmt_f64(row.mu),
                row.t0.to_string(),
                fmt_f64(row.gamma),
                match row.regime {
                    crate::analysis::Regime::PreT0 => "pre_t0".to_string(),
                    crate::analysis::Regime::PostT0 => "post_t0".to_string(),
                },
                fmt_f64(b.trace.inputs.noise_at(t)),
                fmt_f64(row.theorem1),
                fmt_f64(row.theorem1_recursive),
                fmt_f64(row.theorem2),
                fmt_f64(row.theorem2_recursive),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `dir` from the environment override when set, else from the config.
pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.run.output_dir.clone(),
    }
}

/// Runs `cfg` and writes `metrics.csv`, `bounds.csv` and
/// `config.resolved` into `dir`.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path) -> Result<Experiment> {
    let exp = run_experiment(cfg)?;
    std::fs::create_dir_all(dir)?;
    let mut resolved = cfg.clone();
    resolved.run.output_dir = dir.to_path_buf();
    std::fs::write(dir.join("config.resolved"), resolved.to_toml())?;
    write_metrics(std::fs::File::create(dir.join("metrics.csv"))?, &exp.records)?;
    write_bounds(std::fs::File::create(dir.join("bounds.csv"))?, &exp.bounds)?;
    Ok(exp)
}

/// Parses a comma-separated value list. Brackets and quotes are kept
/// inside a value, so `[1, 2]` is not split.
pub fn split_values(values: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut quoted = false;
    let mut cur = String::new();
    for ch in values.chars() {
        match ch {
            '"' => quoted = !quoted,
            '[' if !quoted => depth += 1,
            ']' if !quoted => depth -= 1,
            ',' if !quoted && depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    out.push(cur);
    let out: Vec<String> = out.into_iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if out.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    Ok(out)
}

/// Directory name for one sweep value.
fn value_dir(param: &str, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    format!("{param}={clean}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub method: String,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub final_dist: f64,
}

/// Runs one experiment per value of `param` under `dir/<param>=<value>`
/// and writes `dir/summary.csv` with final-round medians over seeds.
/// Every value is checked before anything runs.
pub fn sweep_to_dir(cfg: &RunConfig, param: &str, values: &[String], dir: &Path) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.set_param(param, v)?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (value, c) in values.iter().zip(&configs) {
        let sub = dir.join(value_dir(param, value));
        log::info!("sweep {param} = {value} -> {}", sub.display());
        let exp = run_to_dir(c, &sub)?;
        for (method, (loss, acc, dist)) in exp.final_medians() {
            rows.push(SweepRow {
                value: value.clone(),
                method: method.to_string(),
                final_loss: loss,
                final_accuracy: acc,
                final_dist: dist,
            });
        }
    }
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in &rows {
        w.write_record([
            param.to_string(),
            r.value.clone(),
            r.method.clone(),
            fmt_f64(r.final_loss),
            fmt_f64(r.final_accuracy),
            fmt_f64(r.final_dist),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

/// Process exit code for an error: 2 for configuration problems, 1 for
/// everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}
