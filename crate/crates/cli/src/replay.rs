use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use trustgate_core::cert::{certificate_from_bytes, hash_thumbprint, Thumbprint};
use trustgate_core::dataplane::{replay_capture, Pipeline, ThumbprintTable};

use crate::{cfg, load_config, op, CliError};

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// pcap file with Ethernet framing.
    capture: PathBuf,
    /// Pipeline settings come from the `gateway` section.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Certificate to treat as trusted (DER or PEM); repeatable.
    #[arg(long = "trust-cert")]
    trust_certs: Vec<PathBuf>,
    /// Thumbprint (40 hex digits) to treat as trusted; repeatable.
    #[arg(long = "trust")]
    trust: Vec<Thumbprint>,
    /// Print the full report as JSON after the verdict lines.
    #[arg(long)]
    json: bool,
}

pub fn run(args: ReplayArgs) -> Result<(), CliError> {
    let config = load_config(args.config.as_ref())?;
    let pipeline_cfg = config.gateway.pipeline();
    let table = Arc::new(ThumbprintTable::new(pipeline_cfg.table_capacity));
    let mut trusted = args.trust.clone();
    for p in &args.trust_certs {
        let bytes = std::fs::read(p).map_err(|e| cfg(format!("{}: {e}", p.display())))?;
        let der = certificate_from_bytes(&bytes).map_err(|e| cfg(format!("{}: {e}", p.display())))?;
        trusted.push(hash_thumbprint(&der).map_err(cfg)?);
    }
    for t in trusted {
        table.install(t).map_err(cfg)?;
    }
    let file = File::open(&args.capture).map_err(|e| op(format!("{}: {e}", args.capture.display())))?;
    let report = replay_capture(BufReader::new(file), Pipeline::new(pipeline_cfg, table)).map_err(op)?;
    for v in &report.verdicts {
        println!("{} {} {}", v.flow, v.thumbprint.as_deref().unwrap_or("-"), v.verdict);
    }
    println!(
        "frames {} opn {} other {} blocked {} unparseable {}",
        report.frames, report.tagged_frames, report.non_opn_frames, report.blocked_frames, report.unparseable_frames
    );
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(op)?);
    }
    Ok(())
}
