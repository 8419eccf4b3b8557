use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use trustgate_core::ledger::{DistancePreset, Layer};
use trustgate_harness::bench::{q1_arms, q2_cells, run_q1, run_q2, Q1Options, Q2Options};
use trustgate_harness::report::{BenchReport, Environment};

use crate::{load_config, op, CliError};

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Packet and handshake timing with validation off, then on.
    Q1 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        handshakes: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        timeout_ms: Option<u64>,
    },
    /// Simulated ledger propagation per preset, size and layer.
    Q2 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        /// Repeatable; defaults to short, medium and long.
        #[arg(long = "preset", value_delimiter = ',')]
        presets: Vec<DistancePreset>,
        /// Certificate sizes in bytes; repeatable.
        #[arg(long = "size", value_delimiter = ',')]
        sizes: Vec<usize>,
        /// Repeatable; defaults to both layers.
        #[arg(long = "layer", value_delimiter = ',')]
        layers: Vec<Layer>,
        /// Seed for link delays and tip selection.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Reads defaults from the `harness` section.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// JSON report; must not exist yet.
    #[arg(long)]
    out: PathBuf,
    /// CSV with one row per trial record; defaults to the JSON path with a `.csv` extension.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl Common {
    fn write(&self, report: &BenchReport) -> Result<(), CliError> {
        let csv = self.csv.clone().unwrap_or_else(|| self.out.with_extension("csv"));
        report.write_json(&self.out).map_err(op)?;
        report.write_csv(&csv).map_err(op)?;
        println!("wrote {} and {}", self.out.display(), display(&csv));
        Ok(())
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

pub fn run(cmd: BenchCommand) -> Result<(), CliError> {
    match cmd {
        BenchCommand::Q1 {
            common,
            handshakes,
            warmup,
            timeout_ms,
        } => {
            let h = load_config(common.config.as_ref())?.harness;
            let opts = Q1Options {
                handshakes: handshakes.unwrap_or(h.handshakes),
                warmup: warmup.unwrap_or(h.warmup),
                timeout_ms: timeout_ms.unwrap_or(h.handshake_timeout_ms),
                ..Q1Options::default()
            };
            let env = Environment::capture(&opts, 0);
            // One thread: endpoints and gateways never wait on cross-thread wakeups.
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(op)?;
            let report = rt.block_on(run_q1(&opts, env)).map_err(op)?;
            for a in q1_arms(&report) {
                println!(
                    "{:<8} established {}/{} tagged {} mean processing {:.0} ns mean dequeue {:.0} ns handshake mean {:.3} ms p95 {:.3} ms",
                    a.name,
                    a.established,
                    opts.handshakes,
                    a.tagged.count,
                    a.tagged.mean_processing_ns,
                    a.tagged.mean_dequeue_ns,
                    a.handshake_ms.mean,
                    a.handshake_ms.p95
                );
            }
            for k in [
                "processing_delta_ns",
                "processing_ratio",
                "dequeue_delta_ns",
                "handshake_delta_ms",
                "handshake_ratio",
                "handshake_median_ratio",
            ] {
                println!("{k} {}", report.summary[k]);
            }
            common.write(&report)
        }
        BenchCommand::Q2 {
            common,
            trials,
            presets,
            sizes,
            layers,
            seed,
        } => {
            let h = load_config(common.config.as_ref())?.harness;
            let opts = Q2Options {
                trials: trials.unwrap_or(h.trials),
                presets: if presets.is_empty() { h.presets } else { presets },
                sizes: if sizes.is_empty() { h.sizes } else { sizes },
                layers: if layers.is_empty() { vec![Layer::L1, Layer::L2] } else { layers },
                seed: seed.unwrap_or(h.seed),
                l1: h.l1,
                l2: h.l2,
            };
            let env = Environment::capture(&opts, opts.seed);
            let report = run_q2(&opts, env).map_err(op)?;
            println!("layer preset size median_s p95_s max_s outliers lost");
            for c in q2_cells(&report) {
                println!(
                    "{:?} {} {} {:.3} {:.3} {:.3} {} {}",
                    c.layer, c.preset, c.size, c.median_s, c.p95_s, c.max_s, c.outliers, c.lost
                );
            }
            common.write(&report)
        }
    }
}
