use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::consensus::ConsensusTranscript;
use crate::error::Result;

pub const ROUNDS_CSV: &str = "rounds.csv";
pub const SERVERS_CSV: &str = "servers.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CHAIN_LOG: &str = "chain.log";
pub const TRANSCRIPT_DIR: &str = "transcripts";

/// Schema tag in the first column header; bump on any column change.
pub const CSV_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub start_tick: u64,
    pub mine_start: u64,
    /// Candidate deliveries to clients, summed over servers.
    pub delivered: u64,
    pub undelivered: u64,
    pub team_members: u64,
    pub auth_failures: u64,
    pub certificates: u64,
    pub null_events: u64,
    pub aborted_sessions: u64,
    pub sybil_rejections: u64,
    pub winners: u64,
    pub attempts: u64,
    pub committed: bool,
    pub height: u64,
    pub head_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServerRoundMetrics {
    pub round: u64,
    pub server: u64,
    pub behavior: String,
    pub team: u64,
    pub certificates: u64,
    pub null_events: u64,
    pub score: u64,
    pub reputation: i64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub rounds: u64,
    pub committed_blocks: u64,
    pub stalled_rounds: u64,
    /// Rounds in which no server scored.
    pub idle_rounds: u64,
    pub chain_height: u64,
    pub head_hash: String,
    pub chain_audit_clean: bool,
    pub total_certificates: u64,
    /// Certificates earned by servers scripted to cheat at mining.
    pub adversarial_certificates: u64,
    pub certificates_by_server: BTreeMap<u64, u64>,
    pub null_events: u64,
    /// Sessions aborted because a server answered out of order.
    pub ordering_violations: u64,
    /// Records in any certificate whose timestamps break the round order.
    pub out_of_order_records: u64,
    /// Client random bits that reached a server.
    pub client_bits_leaked: u64,
    pub sybil_rejections: u64,
    /// Largest number of teams one photonic key joined in a single round.
    pub max_memberships_per_key: u64,
    pub undelivered: u64,
    pub consensus_penalties: u64,
    pub final_reputation: BTreeMap<u64, i64>,
    pub flagged_servers: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMetrics {
    pub rounds: Vec<RoundMetrics>,
    pub servers: Vec<ServerRoundMetrics>,
    pub summary: ScenarioSummary,
    /// One per round that reached consensus.
    pub transcripts: Vec<(u64, ConsensusTranscript)>,
}

impl ScenarioMetrics {
    pub fn rounds_csv(&self) -> String {
        let mut out = format!(
            "v{CSV_SCHEMA}_round,start_tick,mine_start,delivered,undelivered,team_members,auth_failures,certificates,null_events,aborted_sessions,sybil_rejections,winners,attempts,committed,height,head_hash\n"
        );
        for r in &self.rounds {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.round,
                r.start_tick,
                r.mine_start,
                r.delivered,
                r.undelivered,
                r.team_members,
                r.auth_failures,
                r.certificates,
                r.null_events,
                r.aborted_sessions,
                r.sybil_rejections,
                r.winners,
                r.attempts,
                r.committed,
                r.height,
                r.head_hash
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn servers_csv(&self) -> String {
        let mut out = format!(
            "v{CSV_SCHEMA}_round,server,behavior,team,certificates,null_events,score,reputation,flagged\n"
        );
        for s in &self.servers {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.round,
                s.server,
                s.behavior,
                s.team,
                s.certificates,
                s.null_events,
                s.score,
                s.reputation,
                s.flagged
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }

    /// Writes the CSVs, the summary and one transcript per consensus round
    /// into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(ROUNDS_CSV), self.rounds_csv())?;
        fs::write(dir.join(SERVERS_CSV), self.servers_csv())?;
        fs::write(dir.join(SUMMARY_JSON), self.summary_json())?;
        let tdir = dir.join(TRANSCRIPT_DIR);
        fs::create_dir_all(&tdir)?;
        for (round, t) in &self.transcripts {
            fs::write(tdir.join(format!("round-{round:04}.txt")), t.to_text())?;
        }
        Ok(())
    }
}
