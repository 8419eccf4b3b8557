use std::fs::OpenOptions;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Subcommand, ValueEnum};
use trustgate_core::cert::certificate_from_bytes;
use trustgate_core::ledger::{
    AdminKey, CertificateAction, ContractCall, Envelope, Layer, LedgerClient, LedgerTransaction, PayloadFormat,
    WireError, DEFAULT_TAG,
};
use trustgate_core::time::Timestamp;

use crate::{cfg, op, runtime, CliError, ADMIN_KEY_ENV};

#[derive(Debug, Subcommand)]
pub enum AdminCommand {
    /// Create a new administrator signing key.
    Keygen {
        /// PEM file to create; never overwritten.
        #[arg(long)]
        out: PathBuf,
    },
    /// Put a certificate on the trust list.
    Issue {
        #[command(flatten)]
        action: ActionArgs,
        /// Validity from now.
        #[arg(long, default_value_t = 365)]
        expire_days: u64,
    },
    /// Take a certificate off the trust list.
    Revoke {
        #[command(flatten)]
        action: ActionArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Der,
    Pem,
}

#[derive(Debug, Args)]
pub struct ActionArgs {
    /// Certificate file, DER or PEM.
    certificate: PathBuf,
    #[arg(long, default_value = "l1")]
    layer: Layer,
    /// Ledger node address.
    #[arg(long, default_value = "127.0.0.1:14265")]
    ledger: SocketAddr,
    /// Administrator key (PEM).
    #[arg(long, env = ADMIN_KEY_ENV)]
    key: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_TAG)]
    tag: String,
    /// Encoding of the certificate inside the ledger payload.
    #[arg(long, value_enum, default_value = "der")]
    format: Format,
    /// Return after submission instead of waiting for delivery.
    #[arg(long)]
    no_wait: bool,
    #[arg(long, default_value_t = 30_000)]
    wait_timeout_ms: u64,
}

pub fn run(cmd: AdminCommand) -> Result<(), CliError> {
    match cmd {
        AdminCommand::Keygen { out } => keygen(out),
        AdminCommand::Issue { action, expire_days } => {
            let der = read_certificate(&action)?;
            let expire = Timestamp::now() + Duration::from_secs(expire_days.saturating_mul(86_400));
            submit(&action, CertificateAction::issue(der, expire))
        }
        AdminCommand::Revoke { action } => {
            let der = read_certificate(&action)?;
            submit(&action, CertificateAction::revoke(der))
        }
    }
}

fn keygen(out: PathBuf) -> Result<(), CliError> {
    let key = AdminKey::from_seed(rand::random());
    let pem = key.to_pem().map_err(op)?;
    let mut f = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&out)
        .map_err(|e| op(format!("{}: {e}", out.display())))?;
    f.write_all(pem.as_bytes()).map_err(op)?;
    println!("public key {}", key.public());
    Ok(())
}

fn read_certificate(args: &ActionArgs) -> Result<Vec<u8>, CliError> {
    let bytes = std::fs::read(&args.certificate).map_err(|e| op(format!("{}: {e}", args.certificate.display())))?;
    certificate_from_bytes(&bytes).map_err(|e| op(format!("{}: {e}", args.certificate.display())))
}

fn load_key(args: &ActionArgs) -> Result<AdminKey, CliError> {
    let path = args
        .key
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("no administrator key; pass --key or set {ADMIN_KEY_ENV}")))?;
    let text = std::fs::read_to_string(path).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
    AdminKey::from_pem(&text).map_err(|e| cfg(format!("{}: {e}", path.display())))
}

fn submit(args: &ActionArgs, action: CertificateAction) -> Result<(), CliError> {
    let key = load_key(args)?;
    let action = action.with_format(match args.format {
        Format::Der => PayloadFormat::Der,
        Format::Pem => PayloadFormat::Pem,
    });
    let thumbprint = action.thumbprint().map_err(op)?;
    let verb = match action.kind {
        trustgate_core::ledger::ActionKind::Issue => "issue",
        trustgate_core::ledger::ActionKind::Revoke => "revoke",
    };
    runtime()?.block_on(async {
        let mut client = LedgerClient::connect(args.ledger).await.map_err(op)?;
        match args.layer {
            Layer::L1 => {
                let (a, b) = client.tips().await.map_err(op)?;
                let payload = action.encode().map_err(op)?;
                let tx = LedgerTransaction::new(&key, &args.tag, payload, vec![a, b], Timestamp::now()).map_err(op)?;
                let id = client.submit_l1(tx).await.map_err(op)?;
                println!("submitted {id}");
                if args.no_wait {
                    return Ok(());
                }
                let mut sub = LedgerClient::connect(args.ledger)
                    .await
                    .map_err(op)?
                    .subscribe(Layer::L1, &args.tag, 0)
                    .await
                    .map_err(op)?;
                let wait = async {
                    while let Some(ev) = sub.recv().await {
                        if matches!(&ev.envelope, Envelope::L1(tx) if tx.id == id) {
                            return Some(ev.seq);
                        }
                    }
                    None
                };
                match tokio::time::timeout(Duration::from_millis(args.wait_timeout_ms), wait).await {
                    Ok(Some(seq)) => {
                        println!("confirmed event {seq}: {verb} {thumbprint}");
                        Ok(())
                    }
                    Ok(None) => Err(op("ledger closed the event stream")),
                    Err(_) => Err(op(format!("{id} not confirmed within {} ms", args.wait_timeout_ms))),
                }
            }
            Layer::L2 => {
                let call = ContractCall::new(&key, &action, rand::random()).map_err(op)?;
                println!("calling {}", call.function.name());
                let event = client.call_l2(call).await.map_err(|e| match e {
                    WireError::Unauthorized => op(format!("key {} is not an authorized administrator", key.public())),
                    other => op(other),
                })?;
                let note = if event.noop { " (no change)" } else { "" };
                println!("executed: {verb} {}{note}", event.thumbprint);
                Ok(())
            }
        }
    })
}
