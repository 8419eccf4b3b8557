//! Measurement campaigns. Q1 times the gateway's packet path and whole
//! handshakes with validation off and on. Q2 simulates ledger propagation
//! per link preset, certificate size and layer.

use std::time::Duration;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use trustgate_core::dataplane::{ClassStats, DropMode, PacketRecord};
use trustgate_core::ledger::{
    simulate_l1, simulate_l2, AdminKey, CertificateAction, DistancePreset, L1Params, L2Params, Layer,
};
use trustgate_core::time::Timestamp;

use crate::endpoint::{handshake, run_server, ClientConfig, Outcome, ServerConfig};
use crate::report::{percentile, Aggregate, BenchReport, Campaign, Environment, TrialRecord};
use crate::scenarios::Cast;
use crate::testbed::{pipeline, Testbed};
use crate::HarnessError;

pub const ARMS: [(&str, bool); 2] = [("baseline", false), ("enabled", true)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Q1Options {
    pub handshakes: usize,
    pub warmup: usize,
    pub timeout_ms: u64,
    pub layer: Layer,
}

impl Default for Q1Options {
    fn default() -> Self {
        Q1Options {
            handshakes: 1000,
            warmup: 20,
            timeout_ms: 2000,
            layer: Layer::L2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Q1Arm {
    pub name: String,
    pub validation_enabled: bool,
    pub established: usize,
    pub tagged: ClassStats,
    pub untagged: ClassStats,
    pub handshake_ms: Aggregate,
}

/// Records still in flight when the last handshake returns.
async fn settle() {
    tokio::time::sleep(Duration::from_millis(50)).await;
}

/// Both arms face the same endpoints through their own gateway. Handshakes
/// alternate between arms in ABBA order, one at a time, so slow drift in
/// the host affects both equally.
pub async fn run_q1(opts: &Q1Options, environment: Environment) -> Result<BenchReport, HarnessError> {
    let cast = Cast::new()?;
    let bed = Testbed::start(opts.layer).await;
    bed.issue(&cast.client).await?;
    bed.issue(&cast.server).await?;
    let srv = run_server(TcpListener::bind("127.0.0.1:0").await?, ServerConfig::new(cast.server.clone()))?;
    let client = ClientConfig::new(cast.client.clone()).with_timeout(Duration::from_millis(opts.timeout_ms));

    let mut gateways = Vec::new();
    for (_, enabled) in ARMS {
        gateways.push(bed.gateway(srv.local_addr(), pipeline(enabled, DropMode::Reset)).await?);
    }
    for _ in 0..opts.warmup {
        for gw in &gateways {
            handshake(gw.local_addr(), &client).await;
        }
    }
    settle().await;
    for gw in &gateways {
        gw.metrics.take();
    }

    let mut times = vec![Vec::with_capacity(opts.handshakes); ARMS.len()];
    let mut established = [0usize; 2];
    for i in 0..opts.handshakes {
        let order: [usize; 2] = if i % 2 == 0 { [0, 1] } else { [1, 0] };
        for a in order {
            let r = handshake(gateways[a].local_addr(), &client).await;
            if r.outcome == Outcome::Established {
                established[a] += 1;
            }
            times[a].push(r.duration_ms);
        }
    }
    settle().await;

    let mut records = Vec::new();
    let mut arms = Vec::new();
    for (a, (name, enabled)) in ARMS.into_iter().enumerate() {
        for (i, t) in times[a].iter().enumerate() {
            records.push(TrialRecord {
                group: name.into(),
                metric: "handshake_ms".into(),
                trial: i,
                value: *t,
            });
        }
        let packets: Vec<PacketRecord> = gateways[a].metrics.take();
        let (mut t, mut u) = (0, 0);
        for p in &packets {
            let (metric, idx) = if p.tagged {
                t += 1;
                ("tagged_processing_ns", t - 1)
            } else {
                u += 1;
                ("untagged_processing_ns", u - 1)
            };
            records.push(TrialRecord {
                group: name.into(),
                metric: metric.into(),
                trial: idx,
                value: p.processing_ns as f64,
            });
            if let (true, Some(d)) = (p.tagged, p.dequeue_ns) {
                records.push(TrialRecord {
                    group: name.into(),
                    metric: "tagged_dequeue_ns".into(),
                    trial: idx,
                    value: d as f64,
                });
            }
        }
        arms.push(Q1Arm {
            name: name.into(),
            validation_enabled: enabled,
            established: established[a],
            tagged: ClassStats::from_records(packets.iter().filter(|p| p.tagged)),
            untagged: ClassStats::from_records(packets.iter().filter(|p| !p.tagged)),
            handshake_ms: Aggregate::of(&times[a]),
        });
    }

    let (b, e) = (&arms[0], &arms[1]);
    let summary = json!({
        "options": opts,
        "arms": arms,
        "processing_delta_ns": e.tagged.mean_processing_ns - b.tagged.mean_processing_ns,
        "processing_ratio": ratio(e.tagged.mean_processing_ns, b.tagged.mean_processing_ns),
        "dequeue_delta_ns": e.tagged.mean_dequeue_ns - b.tagged.mean_dequeue_ns,
        "dequeue_ratio": ratio(e.tagged.mean_dequeue_ns, b.tagged.mean_dequeue_ns),
        "handshake_delta_ms": e.handshake_ms.mean - b.handshake_ms.mean,
        "handshake_ratio": ratio(e.handshake_ms.mean, b.handshake_ms.mean),
        "handshake_median_ratio": ratio(e.handshake_ms.p50, b.handshake_ms.p50),
    });
    Ok(BenchReport::new(Campaign::Q1, environment, records, summary))
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        f64::NAN
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Q2Options {
    pub trials: usize,
    pub presets: Vec<DistancePreset>,
    /// Certificate sizes in bytes.
    pub sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub seed: u64,
    pub l1: L1Params,
    pub l2: L2Params,
}

impl Default for Q2Options {
    fn default() -> Self {
        Q2Options {
            trials: 300,
            presets: DistancePreset::ALL.to_vec(),
            sizes: vec![1024, 4096, 16384],
            layers: vec![Layer::L1, Layer::L2],
            seed: 1,
            l1: L1Params::default(),
            l2: L2Params::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Q2Cell {
    pub layer: Layer,
    pub preset: DistancePreset,
    pub size: usize,
    pub delivered: usize,
    /// Past the simulation horizon.
    pub lost: usize,
    pub median_s: f64,
    pub p95_s: f64,
    pub max_s: f64,
    pub mean_s: f64,
    /// Above the upper Tukey fence (Q3 + 1.5 IQR).
    pub outliers: usize,
}

pub fn cell_group(layer: Layer, preset: DistancePreset, size: usize) -> String {
    let l = match layer {
        Layer::L1 => "l1",
        Layer::L2 => "l2",
    };
    format!("{l}/{}/{size}", preset.name())
}

/// A DER-shaped blob of exactly `size` bytes, deterministic per seed.
pub fn synthetic_certificate(size: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut der: Vec<u8> = (0..size).map(|_| rng.random()).collect();
    if let Some(b) = der.first_mut() {
        *b = 0x30;
    }
    der
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ trial as u64
}

struct CellRun {
    cell: Q2Cell,
    delays: Vec<Option<f64>>,
}

fn run_cell(opts: &Q2Options, layer: Layer, preset: DistancePreset, size: usize) -> Result<CellRun, HarnessError> {
    let admin = AdminKey::from_seed([0xAD; 32]);
    let der = synthetic_certificate(size, opts.seed);
    let action = CertificateAction::issue(der, Timestamp::from_secs(4_000_000_000));
    let payload = action.encode()?;
    let link = preset.link();
    let mut delays = Vec::with_capacity(opts.trials);
    for t in 0..opts.trials {
        let seed = trial_seed(opts.seed, t);
        let d = match layer {
            Layer::L1 => simulate_l1(&opts.l1, link, &admin, &payload, seed)?.delay,
            Layer::L2 => Some(simulate_l2(&opts.l2, link, payload.len(), seed)),
        };
        delays.push(d.map(|d| d.as_secs_f64()));
    }
    let mut got: Vec<f64> = delays.iter().flatten().copied().collect();
    got.sort_by(f64::total_cmp);
    let agg = Aggregate::of(&got);
    let fence = if got.is_empty() {
        f64::INFINITY
    } else {
        let (q1, q3) = (percentile(&got, 0.25), percentile(&got, 0.75));
        q3 + 1.5 * (q3 - q1)
    };
    Ok(CellRun {
        cell: Q2Cell {
            layer,
            preset,
            size,
            delivered: got.len(),
            lost: delays.len() - got.len(),
            median_s: agg.p50,
            p95_s: agg.p95,
            max_s: agg.max,
            mean_s: agg.mean,
            outliers: got.iter().filter(|&&d| d > fence).count(),
        },
        delays,
    })
}

/// Cells run on separate threads; every trial's seed depends only on the
/// campaign seed and the trial index, so presets and sizes share draws.
pub fn run_q2(opts: &Q2Options, environment: Environment) -> Result<BenchReport, HarnessError> {
    let mut specs = Vec::new();
    for &layer in &opts.layers {
        for &preset in &opts.presets {
            for &size in &opts.sizes {
                specs.push((layer, preset, size));
            }
        }
    }
    let runs: Vec<Result<CellRun, HarnessError>> = std::thread::scope(|s| {
        let handles: Vec<_> = specs
            .iter()
            .map(|&(l, p, z)| s.spawn(move || run_cell(opts, l, p, z)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(HarnessError::Report("cell panicked".into()))))
            .collect()
    });

    let mut records = Vec::new();
    let mut cells = Vec::new();
    for run in runs {
        let run = run?;
        let group = cell_group(run.cell.layer, run.cell.preset, run.cell.size);
        for (trial, d) in run.delays.iter().enumerate() {
            if let Some(v) = d {
                records.push(TrialRecord {
                    group: group.clone(),
                    metric: "delay_s".into(),
                    trial,
                    value: *v,
                });
            }
        }
        cells.push(run.cell);
    }
    let summary = json!({ "options": opts, "cells": cells });
    Ok(BenchReport::new(Campaign::Q2, environment, records, summary))
}

/// Cells from a Q2 report's summary.
pub fn q2_cells(report: &BenchReport) -> Vec<Q2Cell> {
    report
        .summary
        .get("cells")
        .and_then(|c| serde_json::from_value(c.clone()).ok())
        .unwrap_or_default()
}

/// Arms from a Q1 report's summary.
pub fn q1_arms(report: &BenchReport) -> Vec<Q1Arm> {
    report
        .summary
        .get("arms")
        .and_then(|c| serde_json::from_value(c.clone()).ok())
        .unwrap_or_default()
}
