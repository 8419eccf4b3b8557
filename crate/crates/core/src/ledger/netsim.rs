//! Discrete-event model of certificate propagation between two distant
//! ledger nodes: the administrator's node `A` and the subscribers' node `B`.
//!
//! L1: the admin transaction is attached at `A` and gossiped to `B` over the
//! distance link. Background traffic issued at both
//! nodes approves tips from each node's own view. A subscriber at `B` sees the
//! action once `B`'s replica confirms it.
//!
//! L2: the registry call is executed by a committee spread over the same
//! link, so its cost is execution plus a fixed number of consensus rounds.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

use super::keys::AdminKey;
use super::tangle::{Tangle, DEFAULT_CONFIRMATION_K};
use super::transaction::{LedgerTransaction, TxId, DEFAULT_TAG};
use super::LedgerError;

const BACKGROUND_TAG: &str = "data";

/// One-way delay of a link: `base` scaled by a uniform factor in `1 ± jitter`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    #[serde(with = "millis")]
    pub one_way: Duration,
    pub jitter: f64,
}

impl LinkProfile {
    pub fn new(one_way: Duration, jitter: f64) -> Self {
        LinkProfile {
            one_way,
            jitter: jitter.clamp(0.0, 1.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Duration {
        let f = if self.jitter > 0.0 {
            rng.random_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        self.one_way.mul_f64(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistancePreset {
    /// Neighbouring European regions.
    Short,
    /// Europe to Australia.
    Medium,
    /// United States to Australia.
    Long,
}

impl DistancePreset {
    pub const ALL: [DistancePreset; 3] = [DistancePreset::Short, DistancePreset::Medium, DistancePreset::Long];

    pub fn link(self) -> LinkProfile {
        let ms = match self {
            DistancePreset::Short => 12,
            DistancePreset::Medium => 140,
            DistancePreset::Long => 200,
        };
        LinkProfile::new(Duration::from_millis(ms), 0.1)
    }

    pub fn name(self) -> &'static str {
        match self {
            DistancePreset::Short => "short",
            DistancePreset::Medium => "medium",
            DistancePreset::Long => "long",
        }
    }
}

impl fmt::Display for DistancePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistancePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "short" => Ok(DistancePreset::Short),
            "medium" => Ok(DistancePreset::Medium),
            "long" => Ok(DistancePreset::Long),
            other => Err(format!("unknown distance preset {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L1Params {
    /// Poisson issuance rate of other participants, per node, per second.
    pub background_rate: f64,
    pub confirmation_k: usize,
    /// Client to node, each way.
    #[serde(with = "millis")]
    pub local_delay: Duration,
    pub bandwidth_bps: f64,
    /// Background traffic before the admin submission.
    #[serde(with = "millis")]
    pub warmup: Duration,
    /// Submissions still unconfirmed after this long count as lost.
    #[serde(with = "millis")]
    pub horizon: Duration,
}

impl Default for L1Params {
    fn default() -> Self {
        L1Params {
            background_rate: 0.5,
            confirmation_k: DEFAULT_CONFIRMATION_K,
            local_delay: Duration::from_millis(1),
            bandwidth_bps: 100e6,
            warmup: Duration::from_secs(10),
            horizon: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L2Params {
    #[serde(with = "millis")]
    pub execution_mean: Duration,
    #[serde(with = "millis")]
    pub execution_sd: Duration,
    /// Each round is one exchange across the link and back.
    pub consensus_rounds: u32,
    #[serde(with = "millis")]
    pub local_delay: Duration,
    pub bandwidth_bps: f64,
}

impl Default for L2Params {
    fn default() -> Self {
        L2Params {
            execution_mean: Duration::from_millis(450),
            execution_sd: Duration::from_millis(40),
            consensus_rounds: 3,
            local_delay: Duration::from_millis(1),
            bandwidth_bps: 100e6,
        }
    }
}

fn transfer(bytes: usize, bandwidth_bps: f64) -> Duration {
    if bandwidth_bps <= 0.0 {
        return Duration::ZERO;
    }
    Duration::from_secs_f64(bytes as f64 * 8.0 / bandwidth_bps)
}

/// Independent random streams so that presets share everything except the
/// link itself.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Trial {
    /// Submission to delivery at the subscriber; `None` past the horizon.
    pub delay: Option<Duration>,
    pub tips_at_submission: usize,
    pub transactions: usize,
    pub admin_tx: TxId,
}

#[derive(Debug)]
enum Event {
    Issue { node: usize },
    AdminAttach,
    Arrive { node: usize, tx: Box<LedgerTransaction> },
}

struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

struct Sim<'a> {
    params: &'a L1Params,
    link: LinkProfile,
    replicas: [Tangle; 2],
    /// Last arrival time per destination, keeping each direction FIFO.
    last_arrival: [u64; 2],
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    background: Vec<AdminKey>,
    arrivals: [ChaCha8Rng; 2],
    jitter: ChaCha8Rng,
    tips: ChaCha8Rng,
    nonce: u64,
}

impl Sim<'_> {
    fn push(&mut self, at: u64, ev: Event) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { at, seq: self.seq, event: ev }));
    }

    fn schedule_issue(&mut self, node: usize, now: u64, exp: &Exp<f64>) {
        let gap = exp.sample(&mut self.arrivals[node]);
        self.push(now + (gap * 1e6) as u64, Event::Issue { node });
    }

    fn attach(&mut self, node: usize, now: u64, key: &AdminKey, tag: &str, payload: Vec<u8>) -> Result<TxId, LedgerError> {
        let (a, b) = self.replicas[node].select_tips(&mut self.tips)?;
        let tx = LedgerTransaction::new(key, tag, payload, vec![a, b], Timestamp(now / 1000))?;
        let id = tx.id;
        self.replicas[node].insert(tx.clone())?;
        let other = 1 - node;
        let hop = self.link.sample(&mut self.jitter) + transfer(tx.payload.len(), self.params.bandwidth_bps);
        let at = self.last_arrival[other].max(now + hop.as_micros() as u64);
        self.last_arrival[other] = at;
        self.push(at, Event::Arrive { node: other, tx: Box::new(tx) });
        Ok(id)
    }
}

/// Runs one submission of `payload` by `admin` and reports when node `B`
/// confirms it.
pub fn simulate_l1(
    params: &L1Params,
    link: LinkProfile,
    admin: &AdminKey,
    payload: &[u8],
    seed: u64,
) -> Result<L1Trial, LedgerError> {
    let rate = params.background_rate.max(1e-3);
    let exp = Exp::new(rate).map_err(|_| LedgerError::MalformedPayload("background rate"))?;
    let genesis_key = AdminKey::from_seed([0xA5; 32]);
    let genesis = LedgerTransaction::new(&genesis_key, BACKGROUND_TAG, vec![0], vec![], Timestamp::ZERO)?;
    let mut replicas = [Tangle::new(params.confirmation_k), Tangle::new(params.confirmation_k)];
    for r in &mut replicas {
        r.insert(genesis.clone())?;
    }
    let mut sim = Sim {
        params,
        link,
        replicas,
        last_arrival: [0; 2],
        queue: BinaryHeap::new(),
        seq: 0,
        background: (1..=4u8).map(|i| AdminKey::from_seed([i; 32])).collect(),
        arrivals: [stream(seed, 1), stream(seed, 2)],
        jitter: stream(seed, 3),
        tips: stream(seed, 4),
        nonce: 0,
    };
    let submitted = params.warmup.as_micros() as u64;
    let uplink = params.local_delay + transfer(payload.len(), params.bandwidth_bps);
    let downlink = params.local_delay + transfer(payload.len(), params.bandwidth_bps);
    sim.push(submitted + uplink.as_micros() as u64, Event::AdminAttach);
    sim.schedule_issue(0, 0, &exp);
    sim.schedule_issue(1, 0, &exp);

    let deadline = submitted + params.horizon.as_micros() as u64;
    let mut admin_tx = None;
    let mut tips_at_submission = 0;
    while let Some(Reverse(Scheduled { at: now, event: ev, .. })) = sim.queue.pop() {
        if now > deadline {
            break;
        }
        match ev {
            Event::Issue { node } => {
                let key = sim.background[sim.tips.random_range(0..sim.background.len())].clone();
                sim.nonce += 1;
                let payload = sim.nonce.to_le_bytes().to_vec();
                sim.attach(node, now, &key, BACKGROUND_TAG, payload)?;
                sim.schedule_issue(node, now, &exp);
            }
            Event::AdminAttach => {
                tips_at_submission = sim.replicas[0].tip_count();
                admin_tx = Some(sim.attach(0, now, admin, DEFAULT_TAG, payload.to_vec())?);
            }
            Event::Arrive { node, tx } => {
                sim.replicas[node].insert(*tx)?;
                if node == 1 {
                    if let Some(id) = admin_tx {
                        if sim.replicas[1].is_confirmed(&id) {
                            let delivered = now + downlink.as_micros() as u64;
                            return Ok(L1Trial {
                                delay: Some(Duration::from_micros(delivered - submitted)),
                                tips_at_submission,
                                transactions: sim.replicas[1].len(),
                                admin_tx: id,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(L1Trial {
        delay: None,
        tips_at_submission,
        transactions: sim.replicas[1].len(),
        admin_tx: admin_tx.unwrap_or(TxId([0; 32])),
    })
}

/// Submission to event delivery for one registry call.
pub fn simulate_l2(params: &L2Params, link: LinkProfile, payload_len: usize, seed: u64) -> Duration {
    let mut exec_rng = stream(seed, 5);
    let mut jitter = stream(seed, 6);
    let exec = Normal::new(params.execution_mean.as_secs_f64(), params.execution_sd.as_secs_f64())
        .map(|n| n.sample(&mut exec_rng).max(0.0))
        .unwrap_or(params.execution_mean.as_secs_f64());
    let size = transfer(payload_len, params.bandwidth_bps);
    let mut total = params.local_delay * 2 + size * 2 + Duration::from_secs_f64(exec);
    for _ in 0..params.consensus_rounds {
        total += link.sample(&mut jitter) + link.sample(&mut jitter);
    }
    // the emitted event crosses to the subscribers' node once
    total + link.sample(&mut jitter) + size
}

pub(crate) mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}
