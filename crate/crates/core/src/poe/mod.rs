//! The interactive proof-of-entanglement mining session, its certificates and
//! their offline verification.
//!
//! One session is a strictly ordered dialogue between a quantum server and a
//! client miner. Per round the server announces a qubit, the client measures
//! along a setting derived from its own random bits and the candidate block
//! hash, declares the setting, and only then accepts the server's outcome
//! announcement. The transcript feeds the steering witness.

mod certificate;
mod input;
mod mining;
mod session;
mod verify;

use std::collections::BTreeMap;

use crate::digest::Digest;
use crate::qstate::{LossModel, Outcome};

pub use input::{bits_per_setting, combine, derive_input, hash_window, BitString};
pub use mining::{mine_block, MiningReport, MiningTeam, ScoreRule, MAX_TEAM, MIN_TEAM};
pub use session::{
    run_session, AuthGrant, EnforcementFlags, NullEvent, NullReason, ServerBehavior, ServerHandle,
    SessionError, SessionOutcome, SessionParams, SessionRun, Window, FLAG_AFTER_CONSECUTIVE_NULLS,
};
pub use verify::{verify_poe, verify_poe_with, RejectReason, Verdict, VerifyRules};

use crate::steering::WitnessReport;

/// One kept protocol round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementRecord {
    pub round_index: u64,
    pub setting_k: usize,
    pub client_outcome: Outcome,
    pub server_announcement: Outcome,
    pub t_qubit_announce: u64,
    pub t_setting_declared: u64,
    pub t_server_announce: u64,
}

impl MeasurementRecord {
    pub fn is_ordered(&self) -> bool {
        self.t_qubit_announce < self.t_setting_declared
            && self.t_setting_declared < self.t_server_announce
    }
}

/// A client miner as seen by the server.
#[derive(Debug, Clone, PartialEq)]
pub struct MinerIdentity {
    /// Address of the miner's enrolled photonic key.
    pub physical_address: Digest,
    pub reputation: i64,
    pub strategy_n: usize,
    pub metadata: BTreeMap<String, String>,
    /// The miner's fiber link and detector.
    pub link: LossModel,
}

impl MinerIdentity {
    pub fn new(physical_address: Digest, strategy_n: usize, link: LossModel) -> Self {
        Self {
            physical_address,
            reputation: 0,
            strategy_n,
            metadata: BTreeMap::new(),
            link,
        }
    }
}

/// Proof that a miner witnessed entanglement from a server for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct PoECertificate {
    pub block_hash: Digest,
    pub server_id: u64,
    pub miner: MinerIdentity,
    pub report: WitnessReport,
    pub transcript: Vec<MeasurementRecord>,
    pub qrng_transcript: BitString,
}

impl PoECertificate {
    pub fn n(&self) -> usize {
        self.miner.strategy_n
    }
}
