use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::chain::{CandidateBlock, MinedBlock};
use crate::error::{Error, Result};
use crate::poe::session::{
    run_session, AuthGrant, NullEvent, ServerHandle, SessionError, SessionOutcome, SessionParams,
    Window,
};
use crate::poe::{MinerIdentity, PoECertificate};
use crate::RandomStream;

pub const MIN_TEAM: usize = 2;
pub const MAX_TEAM: usize = 20;

/// How a block's certificates turn into a mining score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreRule {
    /// One point per accepted certificate.
    #[default]
    CertificateCount,
    /// Sum of witness margins `s_n - bound`, in millionths.
    MarginMicros,
}

impl ScoreRule {
    pub fn score(self, certificates: &[PoECertificate]) -> u64 {
        match self {
            ScoreRule::CertificateCount => certificates.len() as u64,
            ScoreRule::MarginMicros => certificates
                .iter()
                .map(|c| (c.report.margin().max(0.0) * 1e6).floor() as u64)
                .sum(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MiningTeam {
    pub members: Vec<MinerIdentity>,
    pub server_id: u64,
    pub window: Window,
}

impl MiningTeam {
    /// Checks size bounds and rejects repeated physical addresses.
    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::domain("mining team is empty"));
        }
        if !(MIN_TEAM..=MAX_TEAM).contains(&self.members.len()) {
            return Err(Error::domain(format!(
                "mining team of {} outside {MIN_TEAM}..={MAX_TEAM}",
                self.members.len()
            )));
        }
        let mut seen = HashSet::new();
        for m in &self.members {
            if !seen.insert(m.physical_address) {
                return Err(Error::Duplicate(format!(
                    "address {} appears twice in the team",
                    m.physical_address
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningReport {
    /// `None` when the window closed without a certificate.
    pub block: Option<MinedBlock>,
    pub null_events: Vec<NullEvent>,
    pub aborted: Vec<SessionError>,
    /// First tick after the last session.
    pub end_tick: u64,
}

/// Runs the team's sessions one at a time inside the team window and attaches
/// every certificate to the block.
pub fn mine_block(
    server: &mut ServerHandle,
    team: &MiningTeam,
    grants: &[AuthGrant],
    block: &CandidateBlock,
    params: &SessionParams,
    score_rule: ScoreRule,
    rng: &mut RandomStream,
) -> Result<MiningReport> {
    team.validate()?;
    let mut certificates = Vec::new();
    let mut null_events = Vec::new();
    let mut aborted = Vec::new();
    let mut tick = team.window.start;
    for miner in &team.members {
        let grant = grants
            .iter()
            .find(|g| g.address == miner.physical_address)
            .copied()
            .unwrap_or(AuthGrant {
                address: miner.physical_address,
                accepted: false,
            });
        let window = Window {
            start: tick,
            end: team.window.end,
        };
        match run_session(server, miner, &grant, block, params, window, rng) {
            Ok(run) => {
                tick = run.end_tick;
                match run.outcome {
                    SessionOutcome::Certified(c) => certificates.push(*c),
                    SessionOutcome::Null(e) => null_events.push(e),
                }
            }
            Err(e) => aborted.push(e),
        }
    }
    let block = (!certificates.is_empty()).then(|| MinedBlock {
        block: block.clone(),
        mining_score: score_rule.score(&certificates),
        certificates,
    });
    Ok(MiningReport {
        block,
        null_events,
        aborted,
        end_tick: tick,
    })
}
