//! Benchmark reports: flat per-trial records plus aggregates derived from them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Campaign {
    Q1,
    Q2,
}

impl fmt::Display for Campaign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Campaign::Q1 => "Q1",
            Campaign::Q2 => "Q2",
        })
    }
}

/// `group` names the arm or cell, `metric` the measured quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub group: String,
    pub metric: String,
    pub trial: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    pub max: f64,
    pub p50: f64,
    pub p95: f64,
}

/// Nearest-rank percentile of sorted values; `q` in (0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Aggregate {
        if values.is_empty() {
            return Aggregate::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Aggregate {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v[v.len() - 1],
            p50: percentile(&v, 0.5),
            p95: percentile(&v, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub host: String,
    pub os: String,
    pub clock_resolution_ns: u64,
    pub config_hash: String,
    pub seed: u64,
}

impl Environment {
    pub fn capture<C: Serialize>(config: &C, seed: u64) -> Environment {
        let host = std::env::var("HOSTNAME")
            .ok()
            .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
            .map(|h| h.trim().to_owned())
            .filter(|h| !h.is_empty())
            .unwrap_or_else(|| "unknown".into());
        let json = serde_json::to_vec(config).unwrap_or_default();
        Environment {
            host,
            os: format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH),
            clock_resolution_ns: clock_resolution_ns(),
            config_hash: hex::encode(Sha256::digest(&json)),
            seed,
        }
    }
}

/// Smallest nonzero step observed between consecutive monotonic clock reads.
pub fn clock_resolution_ns() -> u64 {
    let mut best = u64::MAX;
    for _ in 0..1000 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min((b - a).as_nanos() as u64);
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub campaign: Campaign,
    pub environment: Environment,
    pub records: Vec<TrialRecord>,
    /// Keyed by `group/metric`.
    pub aggregates: BTreeMap<String, Aggregate>,
    /// Campaign-specific derived figures.
    pub summary: serde_json::Value,
}

impl BenchReport {
    pub fn new(campaign: Campaign, environment: Environment, records: Vec<TrialRecord>, summary: serde_json::Value) -> Self {
        let aggregates = aggregate(&records);
        BenchReport {
            campaign,
            environment,
            records,
            aggregates,
            summary,
        }
    }

    pub fn values(&self, group: &str, metric: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.group == group && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn aggregate(&self, group: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates.get(&format!("{group}/{metric}"))
    }

    /// Refuses to overwrite an existing file.
    pub fn write_json(&self, path: &Path) -> Result<(), HarnessError> {
        let mut f = OpenOptions::new().write(true).create_new(true).open(path)?;
        serde_json::to_writer_pretty(&mut f, self).map_err(|e| HarnessError::Report(e.to_string()))?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// One row per trial record, same order as the JSON.
    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let f = OpenOptions::new().write(true).create_new(true).open(path)?;
        let mut w = csv::Writer::from_writer(f);
        for r in &self.records {
            w.serialize(r).map_err(|e| HarnessError::Report(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<TrialRecord>, HarnessError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Report(e.to_string()))?;
        r.deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| HarnessError::Report(e.to_string()))
    }
}

pub fn aggregate(records: &[TrialRecord]) -> BTreeMap<String, Aggregate> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(format!("{}/{}", r.group, r.metric)).or_default().push(r.value);
    }
    groups.into_iter().map(|(k, v)| (k, Aggregate::of(&v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 10.0);
        assert_eq!(percentile(&v, 0.95), 19.0);
        assert_eq!(percentile(&v, 1.0), 20.0);
        assert_eq!(percentile(&[7.0], 0.5), 7.0);
        let a = Aggregate::of(&[3.0, 1.0, 2.0]);
        assert_eq!((a.count, a.mean, a.max, a.p50), (3, 2.0, 3.0, 2.0));
    }

    #[test]
    fn csv_matches_json_records() {
        let records = vec![
            TrialRecord { group: "a".into(), metric: "x".into(), trial: 0, value: 1.5 },
            TrialRecord { group: "a".into(), metric: "x".into(), trial: 1, value: 2.5 },
            TrialRecord { group: "b,c".into(), metric: "y".into(), trial: 0, value: -1.0 },
        ];
        let env = Environment::capture(&"cfg", 1);
        let report = BenchReport::new(Campaign::Q1, env, records.clone(), serde_json::Value::Null);
        assert_eq!(report.aggregate("a", "x").unwrap().mean, 2.0);
        let dir = tempfile::tempdir().unwrap();
        let (json, csv) = (dir.path().join("r.json"), dir.path().join("r.csv"));
        report.write_json(&json).unwrap();
        report.write_csv(&csv).unwrap();
        assert!(report.write_json(&json).is_err(), "reports are never overwritten");
        let back: BenchReport = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
        assert_eq!(back.records, records);
        assert_eq!(BenchReport::read_csv(&csv).unwrap(), records);
        assert_eq!(aggregate(&back.records), back.aggregates);
    }
}
