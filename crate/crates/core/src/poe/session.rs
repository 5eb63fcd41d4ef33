use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::CandidateBlock;
use crate::digest::Digest;
use crate::poe::input::{bits_per_setting, combine};
use crate::poe::{BitString, MeasurementRecord, MinerIdentity, PoECertificate};
use crate::qstate::{
    channel_transmission, measure_pure, sample_round, BlochVector, LossModel, Outcome,
    TwoQubitState,
};
use crate::rng::fork;
use crate::steering::{evaluate_witness, make_strategy, LhsMixture};
use crate::steering::{CheatStrategyLHS, WitnessReport};
use crate::RandomStream;

/// Consecutive null events after which a server is flagged for maintenance.
pub const FLAG_AFTER_CONSECUTIVE_NULLS: u32 = 3;

/// Switches for the one-sided device-independence conditions. Each is on by
/// default; turning one off opens the matching loophole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnforcementFlags {
    /// The client accepts an outcome announcement only after declaring its
    /// setting, and only for a qubit announced before that declaration.
    pub ordering: bool,
    /// The client's random bits never leave the client before declaration.
    pub client_rng_secrecy: bool,
    /// The client draws fresh random bits every round.
    pub fresh_setting_per_round: bool,
}

impl Default for EnforcementFlags {
    fn default() -> Self {
        Self {
            ordering: true,
            client_rng_secrecy: true,
            fresh_setting_per_round: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionParams {
    /// Client-detected rounds per setting; the session runs `n` times this.
    pub rounds_per_setting: u64,
    /// Heralded rounds every setting needs before the witness counts.
    pub min_heralded: u64,
    /// Logical events in one mining window.
    pub window_events: u64,
    /// Largest tolerated z-score of a per-setting herald fraction.
    pub balance_z: f64,
    pub flags: EnforcementFlags,
}

impl Default for SessionParams {
    fn default() -> Self {
        Self {
            rounds_per_setting: 1000,
            min_heralded: 100,
            window_events: 600_000,
            balance_z: 5.0,
            flags: EnforcementFlags::default(),
        }
    }
}

/// Logical ticks `[start, end)` available to a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: u64,
    pub end: u64,
}

impl Window {
    pub fn starting_at(start: u64, events: u64) -> Self {
        Self {
            start,
            end: start.saturating_add(events),
        }
    }
}

/// How a server answers a session.
#[derive(Debug, Clone)]
pub enum ServerBehavior {
    /// Measures its half of each pair along the declared setting.
    Honest,
    /// The best local-hidden-state cheat heralding a fraction `eta`.
    FalseHeralds { eta: f64 },
    /// Sends unentangled qubits drawn from a mixture; `None` draws a fresh
    /// random cyclic mixture every session.
    FabricatedEncodings(Option<LhsMixture>),
    /// Prepares each qubit after hearing the setting.
    BackwardSignalling,
    /// Tries to learn the setting before preparing the qubit.
    SettingPrediction,
}

impl ServerBehavior {
    pub fn label(&self) -> &'static str {
        match self {
            ServerBehavior::Honest => "honest",
            ServerBehavior::FalseHeralds { .. } => "false_heralds",
            ServerBehavior::FabricatedEncodings(_) => "fabricated_encodings",
            ServerBehavior::BackwardSignalling => "backward_signalling",
            ServerBehavior::SettingPrediction => "setting_prediction",
        }
    }
}

/// A quantum server with its source, its own detection loss and its
/// protocol-visible standing.
#[derive(Debug, Clone)]
pub struct ServerHandle {
    pub id: u64,
    pub source: TwoQubitState,
    pub loss: LossModel,
    pub behavior: ServerBehavior,
    pub reputation: i64,
    pub consecutive_nulls: u32,
    pub flagged_for_maintenance: bool,
    pub ordering_violations: u64,
    /// Client random bits routed to this server; nonzero only when
    /// `client_rng_secrecy` is off.
    pub client_bits_seen: u64,
}

impl ServerHandle {
    pub fn new(id: u64, source: TwoQubitState, loss: LossModel, behavior: ServerBehavior) -> Self {
        Self {
            id,
            source,
            loss,
            behavior,
            reputation: 0,
            consecutive_nulls: 0,
            flagged_for_maintenance: false,
            ordering_violations: 0,
            client_bits_seen: 0,
        }
    }

    pub fn honest(id: u64, source: TwoQubitState, loss: LossModel) -> Self {
        Self::new(id, source, loss, ServerBehavior::Honest)
    }

    fn record_null(&mut self) {
        self.reputation -= 1;
        self.consecutive_nulls += 1;
        if self.consecutive_nulls >= FLAG_AFTER_CONSECUTIVE_NULLS {
            self.flagged_for_maintenance = true;
        }
    }
}

/// The outcome of client authentication, as presented to a server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthGrant {
    pub address: Digest,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NullReason {
    BoundNotViolated,
    InsufficientStatistics,
    HeraldingImbalance,
    WindowExpired,
}

impl NullReason {
    pub fn code(self) -> &'static str {
        match self {
            NullReason::BoundNotViolated => "bound_not_violated",
            NullReason::InsufficientStatistics => "insufficient_statistics",
            NullReason::HeraldingImbalance => "heralding_imbalance",
            NullReason::WindowExpired => "window_expired",
        }
    }
}

/// A session that did not certify entanglement.
#[derive(Debug, Clone, PartialEq)]
pub struct NullEvent {
    pub server_id: u64,
    pub miner: Digest,
    pub reason: NullReason,
    pub report: Option<WitnessReport>,
    pub reputation_delta: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionOutcome {
    Certified(Box<PoECertificate>),
    Null(NullEvent),
}

impl SessionOutcome {
    pub fn certificate(&self) -> Option<&PoECertificate> {
        match self {
            SessionOutcome::Certified(c) => Some(c),
            SessionOutcome::Null(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRun {
    pub outcome: SessionOutcome,
    /// First tick after the session.
    pub end_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("server {server_id} announced a qubit after the setting of round {round_index}")]
    OrderingViolation { server_id: u64, round_index: u64 },
    #[error("miner {0} is not authenticated")]
    NotAuthenticated(Digest),
    #[error("miner strategy unusable: {0}")]
    Strategy(String),
}

/// What the server does before the setting is declared.
enum Preparation {
    /// A pair from the source; the server keeps its half.
    Pair,
    /// An unentangled qubit; the server's announcement rule.
    Hidden(BlochVector, Option<CheatStrategyLHS>),
    /// Nothing yet; the qubit follows the setting declaration.
    Deferred,
}

/// Runs one mining session between `server` and `miner` for `block`.
///
/// Rounds the client fails to detect are discarded, along with their client
/// random bits; kept rounds are indexed consecutively. Every dialogue step
/// takes one tick, so a round spans three.
pub fn run_session(
    server: &mut ServerHandle,
    miner: &MinerIdentity,
    grant: &AuthGrant,
    block: &CandidateBlock,
    params: &SessionParams,
    window: Window,
    rng: &mut RandomStream,
) -> Result<SessionRun, SessionError> {
    if !grant.accepted || grant.address != miner.physical_address {
        return Err(SessionError::NotAuthenticated(miner.physical_address));
    }
    let strategy =
        make_strategy(miner.strategy_n).map_err(|e| SessionError::Strategy(e.to_string()))?;
    let n = strategy.n();
    let width = bits_per_setting(n);
    let block_hash = block.block_hash();
    let flags = params.flags;

    let mut client_rng = fork(rng);
    let mut server_rng = fork(rng);
    let mut nature = fork(rng);

    let mixture = match &server.behavior {
        ServerBehavior::FalseHeralds { eta } => Some(
            LhsMixture::optimal(&strategy, *eta)
                .map_err(|e| SessionError::Strategy(e.to_string()))?,
        ),
        ServerBehavior::FabricatedEncodings(Some(m)) => Some(m.clone()),
        ServerBehavior::FabricatedEncodings(None) => {
            Some(LhsMixture::random_cyclic(&strategy, &mut server_rng))
        }
        _ => None,
    };
    let link_transmission = channel_transmission(&miner.link);

    let target = params.rounds_per_setting.saturating_mul(n as u64);
    let mut records = Vec::with_capacity(target.min(1 << 20) as usize);
    let mut qrng = BitString::new();
    let mut tick = window.start;

    while (records.len() as u64) < target {
        if tick.saturating_add(3) > window.end {
            return Ok(null_run(
                server,
                miner,
                NullReason::WindowExpired,
                None,
                tick,
            ));
        }
        let round_index = records.len() as u64;
        let bits = if flags.fresh_setting_per_round {
            client_rng.random_range(0..1u64 << width)
        } else {
            0
        };

        let prep = match &server.behavior {
            ServerBehavior::Honest => Preparation::Pair,
            ServerBehavior::FalseHeralds { .. } | ServerBehavior::FabricatedEncodings(_) => {
                let hidden = mixture
                    .as_ref()
                    .expect("cheat mixture")
                    .sample(&mut server_rng);
                match hidden {
                    Some(c) => Preparation::Hidden(*c.bloch(), Some(c.clone())),
                    None => Preparation::Hidden(BlochVector::random(&mut server_rng), None),
                }
            }
            ServerBehavior::BackwardSignalling => Preparation::Deferred,
            ServerBehavior::SettingPrediction => {
                let guess_bits = if !flags.client_rng_secrecy {
                    server.client_bits_seen += width as u64;
                    bits
                } else if !flags.fresh_setting_per_round {
                    0
                } else {
                    server_rng.random_range(0..1u64 << width)
                };
                let predicted = combine(guess_bits, &block_hash, round_index, n);
                let sign = server_rng.random_bool(0.5);
                let axis = *strategy.setting(predicted);
                let v = if sign { axis } else { axis.negated() };
                let all: Vec<usize> = (0..n).collect();
                let rule = CheatStrategyLHS::new(v, all, n).expect("full herald set");
                Preparation::Hidden(v, Some(rule))
            }
        };

        let k = combine(bits, &block_hash, round_index, n);
        let axis = strategy.setting(k);

        let (t_qubit, t_setting, client, announcement) = match prep {
            Preparation::Pair => {
                let (raw, client) = sample_round(
                    &server.source,
                    axis,
                    axis,
                    &server.loss,
                    &miner.link,
                    &mut nature,
                );
                (tick, tick + 1, client, raw.negated())
            }
            Preparation::Hidden(v, rule) => {
                let client = client_measures(&v, axis, link_transmission, &mut nature);
                let a = rule.map_or(Outcome::Null, |r| r.announce(&strategy, k));
                (tick, tick + 1, client, a)
            }
            Preparation::Deferred => {
                if flags.ordering {
                    server.ordering_violations += 1;
                    return Err(SessionError::OrderingViolation {
                        server_id: server.id,
                        round_index,
                    });
                }
                let sign = server_rng.random_bool(0.5);
                let v = if sign { *axis } else { axis.negated() };
                let client = client_measures(&v, axis, link_transmission, &mut nature);
                (tick + 1, tick, client, Outcome::from_sign(sign))
            }
        };
        let t_server = tick + 2;
        tick += 3;

        if client.is_null() {
            continue;
        }
        for i in (0..width).rev() {
            qrng.push(bits >> i & 1 == 1);
        }
        records.push(MeasurementRecord {
            round_index,
            setting_k: k,
            client_outcome: client,
            server_announcement: announcement,
            t_qubit_announce: t_qubit,
            t_setting_declared: t_setting,
            t_server_announce: t_server,
        });
    }

    let report = evaluate_witness(&records, &strategy).expect("every setting has records");
    let reason = witness_verdict(&report, params.min_heralded, params.balance_z);
    if let Some(reason) = reason {
        return Ok(null_run(server, miner, reason, Some(report), tick));
    }
    server.consecutive_nulls = 0;
    let cert = PoECertificate {
        block_hash,
        server_id: server.id,
        miner: miner.clone(),
        report,
        transcript: records,
        qrng_transcript: qrng,
    };
    Ok(SessionRun {
        outcome: SessionOutcome::Certified(Box::new(cert)),
        end_tick: tick,
    })
}

/// The client's check of a finished transcript; `None` certifies.
pub(crate) fn witness_verdict(
    report: &WitnessReport,
    min_heralded: u64,
    balance_z: f64,
) -> Option<NullReason> {
    if report.min_heralded() < min_heralded {
        Some(NullReason::InsufficientStatistics)
    } else if report.herald_imbalance() > balance_z {
        Some(NullReason::HeraldingImbalance)
    } else if !report.violated {
        Some(NullReason::BoundNotViolated)
    } else {
        None
    }
}

fn client_measures(
    v: &BlochVector,
    axis: &BlochVector,
    transmission: f64,
    nature: &mut RandomStream,
) -> Outcome {
    let detected = nature.random::<f64>() < transmission;
    let outcome = measure_pure(v, axis, nature);
    if detected {
        outcome
    } else {
        Outcome::Null
    }
}

fn null_run(
    server: &mut ServerHandle,
    miner: &MinerIdentity,
    reason: NullReason,
    report: Option<WitnessReport>,
    tick: u64,
) -> SessionRun {
    server.record_null();
    SessionRun {
        outcome: SessionOutcome::Null(NullEvent {
            server_id: server.id,
            miner: miner.physical_address,
            reason,
            report,
            reputation_delta: -1,
        }),
        end_tick: tick,
    }
}
