//! JSON manifests of experiments, run in parallel, one record file per experiment.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Map;
use sha2::{Digest, Sha256};

use crate::csv::{self, Cell};
use crate::experiment::{execute, Command};
use crate::{read_file, write_file, LabError, Result};

pub const WORKERS_ENV: &str = "MISFITLAB_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub command: Command,
    #[serde(default)]
    pub parameters: Map<String, serde_json::Value>,
    #[serde(default)]
    pub seed: u64,
    pub output_path: PathBuf,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub accept: Vec<Predicate>,
}

impl ExperimentSpec {
    /// SHA-256 of the spec's JSON form. Object keys are sorted, so the hash does not depend on
    /// the key order in the manifest.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("specs always serialize");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

/// Acceptance test `metrics[metric] <op> value`. A missing metric fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub metric: String,
    pub op: Op,
    pub value: f64,
}

impl Predicate {
    pub fn holds(&self, metrics: &BTreeMap<String, f64>) -> bool {
        let Some(&x) = metrics.get(&self.metric) else {
            return false;
        };
        match self.op {
            Op::Lt => x < self.value,
            Op::Le => x <= self.value,
            Op::Gt => x > self.value,
            Op::Ge => x >= self.value,
            Op::Eq => x == self.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateResult {
    #[serde(flatten)]
    pub predicate: Predicate,
    pub observed: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub name: String,
    pub command: Command,
    pub spec_hash: String,
    pub timestamp: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub series: BTreeMap<String, Vec<f64>>,
    pub runtime_seconds: f64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub predicates: Vec<PredicateResult>,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub records: Vec<ResultRecord>,
    pub aggregate_csv: Option<PathBuf>,
}

impl SuiteReport {
    pub fn failed(&self) -> bool {
        self.records.iter().any(|r| !r.passed)
    }
}

/// `MISFITLAB_WORKERS` if set to a positive integer, otherwise `requested`, at least one.
pub fn worker_count(requested: Option<usize>) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .or(requested)
        .unwrap_or(1)
        .max(1)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ExperimentSpec>> {
    let text = read_file(path)?;
    let specs: Vec<ExperimentSpec> = serde_json::from_str(&text)
        .map_err(|e| LabError::BadManifest(format!("{}: {e}", path.display())))?;
    let mut names = BTreeSet::new();
    for s in &specs {
        if !names.insert(s.name.as_str()) {
            return Err(LabError::BadManifest(format!(
                "duplicate experiment name `{}`",
                s.name
            )));
        }
    }
    Ok(specs)
}

/// Runs one spec and writes its record. Failures end up in the record, never in the caller.
pub fn run_spec(spec: &ExperimentSpec, base: &Path) -> ResultRecord {
    let timestamp = chrono::Utc::now().to_rfc3339();
    let start = Instant::now();
    let result = execute(spec.command, &spec.parameters, spec.seed, base);
    let runtime_seconds = start.elapsed().as_secs_f64();
    let mut record = ResultRecord {
        name: spec.name.clone(),
        command: spec.command,
        spec_hash: spec.hash(),
        timestamp,
        seed: spec.seed,
        metrics: BTreeMap::new(),
        series: BTreeMap::new(),
        runtime_seconds,
        status: Status::Ok,
        error: None,
        predicates: Vec::new(),
        passed: false,
    };
    match result {
        Ok(outcome) => {
            record.metrics = outcome.metrics;
            record.series = outcome.series;
        }
        Err(e) => {
            record.status = Status::Error;
            record.error = Some(e.to_string());
        }
    }
    record.predicates = spec
        .accept
        .iter()
        .map(|p| PredicateResult {
            predicate: p.clone(),
            observed: record.metrics.get(&p.metric).copied(),
            passed: p.holds(&record.metrics),
        })
        .collect();
    record.passed = record.status == Status::Ok && record.predicates.iter().all(|p| p.passed);
    let written = serde_json::to_string_pretty(&record)
        .map_err(LabError::from)
        .and_then(|text| write_file(&base.join(&spec.output_path), &(text + "\n")));
    if let Err(e) = written {
        record.status = Status::Error;
        record.error = Some(e.to_string());
        record.passed = false;
    }
    record
}

/// Runs every spec of the manifest on up to `workers` threads. Record files and relative file
/// parameters resolve against the manifest's directory; the aggregate CSV is written next to
/// the manifest as `<stem>.results.csv`.
pub fn run_suite(manifest: &Path, workers: usize) -> Result<SuiteReport> {
    let specs = load_manifest(manifest)?;
    if specs.is_empty() {
        return Ok(SuiteReport::default());
    }
    let base = manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, specs.len()) {
            let tx = tx.clone();
            let (specs, next, base) = (&specs, &next, &base);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = specs.get(i) else { break };
                if tx.send((i, run_spec(spec, base))).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut slots: Vec<Option<ResultRecord>> = vec![None; specs.len()];
    for (i, record) in rx {
        slots[i] = Some(record);
    }
    let records: Vec<ResultRecord> = slots
        .into_iter()
        .map(|r| r.expect("every spec reports"))
        .collect();
    let stem = manifest
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("manifest");
    let path = base.join(format!("{stem}.results.csv"));
    write_file(&path, &aggregate_csv(&records))?;
    Ok(SuiteReport {
        records,
        aggregate_csv: Some(path),
    })
}

/// One row per record; metric columns are the union of all metric names.
pub fn aggregate_csv(records: &[ResultRecord]) -> String {
    let keys: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.metrics.keys().map(String::as_str))
        .collect();
    let mut header = vec![
        "name",
        "command",
        "seed",
        "status",
        "passed",
        "runtime_seconds",
    ];
    header.extend(keys.iter().copied());
    let rows: Vec<Vec<Cell>> = records
        .iter()
        .map(|r| {
            let command = serde_json::to_value(r.command)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned));
            let status = if r.status == Status::Ok {
                "ok"
            } else {
                "error"
            };
            let mut row = vec![
                Cell::Text(r.name.clone()),
                Cell::Text(command.unwrap_or_default()),
                Cell::Int(r.seed),
                Cell::Text(status.into()),
                Cell::Text(r.passed.to_string()),
                Cell::Real(r.runtime_seconds),
            ];
            row.extend(keys.iter().map(|k| match r.metrics.get(*k) {
                Some(&x) => Cell::Real(x),
                None => Cell::Text(String::new()),
            }));
            row
        })
        .collect();
    csv::table(&header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicate_on_missing_metric_fails() {
        let p = Predicate {
            metric: "c_l".into(),
            op: Op::Gt,
            value: 0.0,
        };
        assert!(!p.holds(&BTreeMap::new()));
        assert!(p.holds(&BTreeMap::from([("c_l".to_string(), 0.1)])));
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: ExperimentSpec = serde_json::from_str(
            r#"{"name":"a","command":"circle-minimize","parameters":{"n":3,"rho":0.1},"output_path":"a.json"}"#,
        )
        .unwrap();
        let b: ExperimentSpec = serde_json::from_str(
            r#"{"output_path":"a.json","parameters":{"rho":0.1,"n":3},"command":"circle-minimize","name":"a"}"#,
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.seed, 0);
    }

    #[test]
    fn ops_parse_from_symbols() {
        let p: Predicate =
            serde_json::from_str(r#"{"metric":"x","op":"<=","value":1e-6}"#).unwrap();
        assert_eq!(p.op, Op::Le);
    }
}
