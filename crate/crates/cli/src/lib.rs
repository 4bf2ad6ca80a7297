//! Seeded, file-configured experiment runner for `met_core`.
//!
//! `met run <config>` executes one experiment for every listed seed and writes a
//! result table; `met report <result>` summarises one.

pub mod config;
pub mod error;
pub mod experiments;
pub mod table;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use met_core::dynsys::Estimate;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, Format};
pub use error::CliError;
pub use table::{ResultTable, Row};

/// Environment variable capping the number of seeds run in parallel.
pub const WORKERS_ENV: &str = "MET_WORKERS";

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    Sha256::digest(cfg.to_canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn worker_count() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::validation(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Runs every seed of `cfg`; rows are ordered by `(seed, quantity, index)`.
pub fn run_config(cfg: &ExperimentConfig) -> Result<ResultTable, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::validation(format!("cannot start worker pool: {e}")))?;
    let per_seed: Vec<Result<Vec<Row>, CliError>> =
        pool.install(|| cfg.seeds.par_iter().map(|&seed| experiments::run_seed(cfg, seed)).collect());
    let mut table = ResultTable::default();
    for rows in per_seed {
        table.rows.extend(rows?);
    }
    table.sort();
    table.checks = cfg.checks.clone();
    let meta = &mut table.metadata;
    meta.insert("experiment".into(), cfg.experiment.name().into());
    meta.insert("config-hash".into(), config_hash(cfg));
    meta.insert("met-version".into(), env!("CARGO_PKG_VERSION").into());
    meta.insert("seeds".into(), cfg.seeds.len().to_string());
    meta.insert(table::WALL_TIME_KEY.into(), format!("{:.3}", start.elapsed().as_secs_f64()));
    Ok(table)
}

/// Parses `config_path`, runs it and writes the table atomically.
///
/// Returns the path written. `output` and `format` override the config.
pub fn run_file(config_path: &Path, output: Option<PathBuf>, format: Option<Format>) -> Result<(PathBuf, ResultTable), CliError> {
    let text = std::fs::read_to_string(config_path).map_err(|e| CliError::io(config_path.display().to_string(), e))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let format = format.unwrap_or(cfg.format);
    let output = match output.or_else(|| cfg.output.as_ref().map(PathBuf::from)) {
        Some(p) => p,
        None => config_path.with_extension(match format {
            Format::Csv => "csv",
            Format::Json => "json",
        }),
    };
    let table = run_config(&cfg)?;
    table::write_atomic(&output, &table.render(format))?;
    Ok((output, table))
}

/// Outcome of one check over the matching rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub check: config::Check,
    pub rows: usize,
    /// Value furthest from passing, if any row matched.
    pub worst: Option<f64>,
    pub pass: bool,
}

pub fn evaluate_checks(table: &ResultTable) -> Vec<CheckOutcome> {
    table
        .checks
        .iter()
        .map(|c| {
            let values: Vec<f64> = table
                .rows
                .iter()
                .filter(|r| r.quantity == c.quantity && (c.index.is_none() || r.index == c.index))
                .map(|r| r.value)
                .collect();
            let badness = |v: f64| match c.kind {
                config::CheckKind::Within => (v - c.expected).abs(),
                config::CheckKind::AtMost => v - c.expected,
            };
            let worst = values.iter().copied().max_by(|a, b| badness(*a).total_cmp(&badness(*b)));
            let pass = !values.is_empty() && values.iter().all(|v| c.passes(*v));
            CheckOutcome { check: c.clone(), rows: values.len(), worst, pass }
        })
        .collect()
}

/// Indices shown per quantity before the report switches to the trace tail.
const FULL_LISTING: usize = 8;
const TAIL: usize = 3;

fn fmt_num(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e6) {
        format!("{x:.6e}")
    } else {
        format!("{x:.6}")
    }
}

/// Human-readable summary: mean and standard error across seeds for each
/// quantity, the tail of long traces, and the stored checks.
pub fn report(table: &ResultTable) -> (String, bool) {
    let mut out = String::new();
    let meta = |k: &str| table.metadata.get(k).map(String::as_str).unwrap_or("?");
    let hash = meta("config-hash");
    let _ = writeln!(
        out,
        "experiment {} ({} seeds, config {}, met {})",
        meta("experiment"),
        meta("seeds"),
        &hash[..hash.len().min(12)],
        meta("met-version")
    );
    let mut groups: BTreeMap<&str, BTreeMap<Option<u64>, Vec<&Row>>> = BTreeMap::new();
    for r in &table.rows {
        groups.entry(&r.quantity).or_default().entry(r.index).or_default().push(r);
    }
    for (q, by_index) in &groups {
        let shown: Vec<_> = if by_index.len() > FULL_LISTING {
            let _ = writeln!(out, "{q}: {} indices, last {TAIL}:", by_index.len());
            by_index.iter().skip(by_index.len() - TAIL).collect()
        } else {
            by_index.iter().collect()
        };
        for (index, rows) in shown {
            let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
            let est = Estimate::from_samples(&values);
            let stderr = match rows.as_slice() {
                [r] => r.stderr.unwrap_or(0.0),
                _ => est.stderr,
            };
            let label = index.map_or_else(|| q.to_string(), |i| format!("{q}[{i}]"));
            let _ = writeln!(out, "  {label:<32} {} ± {}  (n = {})", fmt_num(est.mean), fmt_num(stderr), rows.len());
        }
    }
    let outcomes = evaluate_checks(table);
    let mut all = true;
    for o in &outcomes {
        all &= o.pass;
        let c = &o.check;
        let target = c.index.map_or_else(|| c.quantity.clone(), |i| format!("{}[{i}]", c.quantity));
        let (lhs, rhs, worst) = match c.kind {
            config::CheckKind::Within if c.expected == 0.0 => (format!("|{target}|"), fmt_num(c.tolerance), o.worst.map(f64::abs)),
            config::CheckKind::Within => {
                (format!("|{target} - {}|", fmt_num(c.expected)), fmt_num(c.tolerance), o.worst.map(|w| (w - c.expected).abs()))
            }
            config::CheckKind::AtMost if c.expected == 0.0 => (target, fmt_num(c.tolerance), o.worst),
            config::CheckKind::AtMost => (target, format!("{} + {}", fmt_num(c.expected), fmt_num(c.tolerance)), o.worst),
        };
        let worst = worst.map_or_else(|| "no matching rows".to_string(), |w| format!("worst {} over {} rows", fmt_num(w), o.rows));
        let _ = writeln!(out, "{} {lhs} <= {rhs}: {worst}", if o.pass { "PASS" } else { "FAIL" });
    }
    if !outcomes.is_empty() {
        let passed = outcomes.iter().filter(|o| o.pass).count();
        let _ = writeln!(out, "{passed} of {} checks passed", outcomes.len());
    }
    (out, all)
}

pub fn report_file(path: &Path) -> Result<(String, bool), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    Ok(report(&ResultTable::parse(&text)?))
}
