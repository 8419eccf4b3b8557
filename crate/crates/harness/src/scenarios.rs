//! End-to-end scenarios. Each builds a fresh testbed, so runs share no state.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use trustgate_core::dataplane::DropMode;
use trustgate_core::ledger::Layer;

use crate::actors::{spawn_middleperson, Middleperson};
use crate::endpoint::{connect, handshake, run_server, ClientConfig, HandshakeResult, Outcome, Phase, ServerConfig, ServerHandle};
use crate::identity::Identity;
use crate::report::Aggregate;
use crate::testbed::{pipeline, Testbed};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOptions {
    pub attempts: usize,
    pub timeout_ms: u64,
    pub drop_mode: DropMode,
    pub layer: Layer,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions {
            attempts: 20,
            timeout_ms: 2000,
            drop_mode: DropMode::Reset,
            layer: Layer::L1,
        }
    }
}

impl ScenarioOptions {
    fn client(&self, id: Identity) -> ClientConfig {
        ClientConfig::new(id).with_timeout(Duration::from_millis(self.timeout_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub options: ScenarioOptions,
    pub attempts: usize,
    pub established: usize,
    pub outcomes: BTreeMap<Outcome, usize>,
    pub phases: BTreeMap<Phase, usize>,
    pub duration_ms: Aggregate,
    pub results: Vec<HandshakeResult>,
    pub notes: Vec<String>,
}

impl ScenarioReport {
    pub fn new(name: &str, options: &ScenarioOptions, results: Vec<HandshakeResult>) -> Self {
        let mut outcomes = BTreeMap::new();
        let mut phases = BTreeMap::new();
        for r in &results {
            *outcomes.entry(r.outcome).or_insert(0) += 1;
            *phases.entry(r.phase_reached).or_insert(0) += 1;
        }
        let durations: Vec<f64> = results.iter().map(|r| r.duration_ms).collect();
        ScenarioReport {
            name: name.to_owned(),
            options: options.clone(),
            attempts: results.len(),
            established: outcomes.get(&Outcome::Established).copied().unwrap_or(0),
            outcomes,
            phases,
            duration_ms: Aggregate::of(&durations),
            results,
            notes: Vec::new(),
        }
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.outcomes.get(&outcome).copied().unwrap_or(0)
    }

    /// True when every attempt ended with `outcome` at `phase`.
    pub fn all(&self, outcome: Outcome, phase: Phase) -> bool {
        self.results.iter().all(|r| r.outcome == outcome && r.phase_reached == phase)
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario: {}", self.name)?;
        writeln!(
            f,
            "config: attempts={} timeout_ms={} drop_mode={:?} layer={:?}",
            self.options.attempts, self.options.timeout_ms, self.options.drop_mode, self.options.layer
        )?;
        writeln!(f, "established: {}/{}", self.established, self.attempts)?;
        for (o, n) in &self.outcomes {
            writeln!(f, "outcome {o:?}: {n}")?;
        }
        for (p, n) in &self.phases {
            writeln!(f, "phase {p:?}: {n}")?;
        }
        let d = &self.duration_ms;
        writeln!(f, "duration_ms: mean={:.3} p50={:.3} p95={:.3} max={:.3}", d.mean, d.p50, d.p95, d.max)?;
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        for (i, r) in self.results.iter().enumerate() {
            write!(f, "attempt {i}: {:?} phase={:?} {:.3} ms", r.outcome, r.phase_reached, r.duration_ms)?;
            if let Some(d) = &r.detail {
                write!(f, " ({d})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Identities used across scenarios; fixed seeds keep thumbprints stable.
pub struct Cast {
    pub server: Identity,
    pub client: Identity,
    pub rogue_server: Identity,
    pub rogue_client: Identity,
}

impl Cast {
    pub fn new() -> Result<Cast, HarnessError> {
        Ok(Cast {
            server: Identity::generate("plc-server", [0x51; 32])?,
            client: Identity::generate("hmi-client", [0xC1; 32])?,
            rogue_server: Identity::generate("plc-server", [0xE1; 32])?,
            rogue_client: Identity::generate("hmi-client", [0xE2; 32])?,
        })
    }
}

async fn server(id: Identity) -> Result<ServerHandle, HarnessError> {
    run_server(TcpListener::bind("127.0.0.1:0").await?, ServerConfig::new(id))
}

async fn attempts(addr: std::net::SocketAddr, client: &ClientConfig, n: usize) -> Vec<HandshakeResult> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(handshake(addr, client).await);
    }
    out
}

/// Client and server both either trusted or not.
pub async fn enforcement(opts: &ScenarioOptions, trusted: bool) -> Result<ScenarioReport, HarnessError> {
    let cast = Cast::new()?;
    let bed = Testbed::start(opts.layer).await;
    if trusted {
        bed.issue(&cast.client).await?;
        bed.issue(&cast.server).await?;
    }
    let srv = server(cast.server).await?;
    let gw = bed.gateway(srv.local_addr(), pipeline(true, opts.drop_mode)).await?;
    let results = attempts(gw.local_addr(), &opts.client(cast.client), opts.attempts).await;
    let name = if trusted { "trusted-endpoints" } else { "untrusted-endpoints" };
    Ok(ScenarioReport::new(name, opts, results))
}

/// A rogue server with its own certificate sits where the real one should be.
/// With `issued`, an administrator has put the rogue certificate on the ledger.
pub async fn rogue_server(opts: &ScenarioOptions, issued: bool) -> Result<ScenarioReport, HarnessError> {
    let cast = Cast::new()?;
    let bed = Testbed::start(opts.layer).await;
    bed.issue(&cast.client).await?;
    bed.issue(&cast.server).await?;
    if issued {
        bed.issue(&cast.rogue_server).await?;
    }
    let rogue = server(cast.rogue_server).await?;
    let gw = bed.gateway(rogue.local_addr(), pipeline(true, opts.drop_mode)).await?;
    let results = attempts(gw.local_addr(), &opts.client(cast.client), opts.attempts).await;
    let mut report = ScenarioReport::new(if issued { "rogue-server-issued" } else { "rogue-server" }, opts, results);
    report.notes.push(format!("rogue server activated {} sessions", rogue.sessions_activated()));
    Ok(report)
}

/// A rogue server presents the trusted server's certificate bytes without its key.
pub async fn certificate_replay(opts: &ScenarioOptions) -> Result<ScenarioReport, HarnessError> {
    let cast = Cast::new()?;
    let bed = Testbed::start(opts.layer).await;
    bed.issue(&cast.client).await?;
    bed.issue(&cast.server).await?;
    let thief = server(cast.server.with_stolen_certificate("thief", [0xE3; 32])).await?;
    let gw = bed.gateway(thief.local_addr(), pipeline(true, opts.drop_mode)).await?;
    let results = attempts(gw.local_addr(), &opts.client(cast.client), opts.attempts).await;
    let mut report = ScenarioReport::new("certificate-replay", opts, results);
    let allowed = gw.verdicts.events().iter().filter(|v| v.verdict.is_allow()).count();
    report.notes.push(format!("gateway allowed {allowed} OPN chunks"));
    Ok(report)
}

pub async fn rogue_client(opts: &ScenarioOptions) -> Result<ScenarioReport, HarnessError> {
    let cast = Cast::new()?;
    let bed = Testbed::start(opts.layer).await;
    bed.issue(&cast.client).await?;
    bed.issue(&cast.server).await?;
    let srv = server(cast.server).await?;
    let gw = bed.gateway(srv.local_addr(), pipeline(true, opts.drop_mode)).await?;
    let results = attempts(gw.local_addr(), &opts.client(cast.rogue_client), opts.attempts).await;
    let mut report = ScenarioReport::new("rogue-client", opts, results);
    report.notes.push(format!("server activated {} sessions", srv.sessions_activated()));
    Ok(report)
}

/// client -> gateway -> middleperson -> gateway -> server; both gateways
/// check against the same table.
pub async fn middleperson(opts: &ScenarioOptions, passive: bool) -> Result<ScenarioReport, HarnessError> {
    let cast = Cast::new()?;
    let bed = Testbed::start(opts.layer).await;
    bed.issue(&cast.client).await?;
    bed.issue(&cast.server).await?;
    let srv = server(cast.server).await?;
    let inner = bed.gateway(srv.local_addr(), pipeline(true, opts.drop_mode)).await?;
    let mode = if passive {
        Middleperson::Passive
    } else {
        Middleperson::Impersonate {
            as_server: cast.rogue_server,
            as_client: cast.rogue_client,
        }
    };
    let mp = spawn_middleperson(TcpListener::bind("127.0.0.1:0").await?, inner.local_addr(), mode)?;
    let outer = bed.gateway(mp.local_addr(), pipeline(true, opts.drop_mode)).await?;
    let results = attempts(outer.local_addr(), &opts.client(cast.client), opts.attempts).await;
    let name = if passive { "middleperson-passive" } else { "middleperson" };
    let mut report = ScenarioReport::new(name, opts, results);
    if !passive {
        // Upstream attempts may still be running when the last client gives up.
        tokio::time::sleep(Duration::from_millis(opts.timeout_ms.min(500))).await;
        let up = mp.upstream_results();
        let up_ok = up.iter().filter(|r| r.outcome == Outcome::Established).count();
        report
            .notes
            .push(format!("middleperson upstream channels established: {up_ok}/{}", up.len()));
    }
    report.notes.push(format!("server activated {} sessions", srv.sessions_activated()));
    Ok(report)
}

/// Opens a channel, revokes the client certificate, then renews the channel.
/// Each attempt reports the renewal as its outcome.
pub async fn renewal(opts: &ScenarioOptions) -> Result<ScenarioReport, HarnessError> {
    let cast = Cast::new()?;
    let bed = Testbed::start(opts.layer).await;
    bed.issue(&cast.server).await?;
    let srv = server(cast.server).await?;
    let gw = bed.gateway(srv.local_addr(), pipeline(true, opts.drop_mode)).await?;
    let client = opts.client(cast.client.clone());
    let mut results = Vec::with_capacity(opts.attempts);
    let mut kept = 0;
    for _ in 0..opts.attempts {
        bed.issue(&cast.client).await?;
        let mut session = match connect(gw.local_addr(), &client).await {
            Ok(s) => s,
            Err(r) => {
                results.push(r);
                continue;
            }
        };
        if session.renew().await.is_ok() {
            kept += 1;
        }
        bed.revoke(&cast.client).await?;
        let start = tokio::time::Instant::now();
        let outcome = match session.renew().await {
            Ok(()) => Outcome::Established,
            Err(o) => o,
        };
        results.push(HandshakeResult {
            outcome,
            duration_ms: start.elapsed().as_secs_f64() * 1e3,
            phase_reached: if outcome == Outcome::Established {
                Phase::ActivateSession
            } else {
                Phase::OpenSecureChannel
            },
            detail: Some("renewal after revocation".into()),
        });
        if outcome == Outcome::Established {
            session.close().await;
        }
    }
    let mut report = ScenarioReport::new("renewal-after-revocation", opts, results);
    report
        .notes
        .push(format!("renewals while trusted succeeded: {kept}/{}", opts.attempts));
    Ok(report)
}
