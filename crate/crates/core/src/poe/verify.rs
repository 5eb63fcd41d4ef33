use std::fmt;

use crate::digest::Digest;
use crate::poe::input::{bits_per_setting, derive_input};
use crate::poe::session::{witness_verdict, NullReason, SessionParams};
use crate::poe::PoECertificate;
use crate::steering::{evaluate_witness, make_strategy, WitnessReport};

/// Network rules a verifier applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyRules {
    /// Enforce the three-tick round cadence on timestamps.
    pub ordering: bool,
    pub min_heralded: u64,
    pub balance_z: f64,
}

impl Default for VerifyRules {
    fn default() -> Self {
        SessionParams::default().into()
    }
}

impl From<SessionParams> for VerifyRules {
    fn from(p: SessionParams) -> Self {
        Self {
            ordering: p.flags.ordering,
            min_heralded: p.min_heralded,
            balance_z: p.balance_z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    Malformed(String),
    SettingMismatch { round: u64 },
    HashMismatch,
    OrderingViolation { round: u64 },
    ReportMismatch(&'static str),
    InsufficientStatistics,
    HeraldingImbalance,
    BoundNotViolated,
}

impl RejectReason {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::Malformed(_) => "malformed",
            RejectReason::SettingMismatch { .. } => "setting_mismatch",
            RejectReason::HashMismatch => "hash_mismatch",
            RejectReason::OrderingViolation { .. } => "ordering_violation",
            RejectReason::ReportMismatch(_) => "report_mismatch",
            RejectReason::InsufficientStatistics => "insufficient_statistics",
            RejectReason::HeraldingImbalance => "heralding_imbalance",
            RejectReason::BoundNotViolated => "bound_not_violated",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Malformed(d) => write!(f, "malformed: {d}"),
            RejectReason::SettingMismatch { round } | RejectReason::OrderingViolation { round } => {
                write!(f, "{} at round {round}", self.code())
            }
            RejectReason::ReportMismatch(field) => write!(f, "report_mismatch: {field}"),
            other => f.write_str(other.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected(RejectReason),
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted)
    }

    pub fn reason(&self) -> Option<&RejectReason> {
        match self {
            Verdict::Accepted => None,
            Verdict::Rejected(r) => Some(r),
        }
    }
}

/// Verifies `cert` for `block_hash` under default network rules.
pub fn verify_poe(cert: &PoECertificate, block_hash: &Digest) -> Verdict {
    verify_poe_with(cert, block_hash, &VerifyRules::default())
}

/// One pass over the transcript: re-derives every setting from the client
/// randomness and `block_hash`, checks timestamps, recomputes the witness and
/// compares it bit-for-bit with the report.
pub fn verify_poe_with(cert: &PoECertificate, block_hash: &Digest, rules: &VerifyRules) -> Verdict {
    match check(cert, block_hash, rules) {
        Ok(()) => Verdict::Accepted,
        Err(r) => Verdict::Rejected(r),
    }
}

fn check(
    cert: &PoECertificate,
    block_hash: &Digest,
    rules: &VerifyRules,
) -> Result<(), RejectReason> {
    let malformed = |d: String| RejectReason::Malformed(d);
    let strategy = make_strategy(cert.n()).map_err(|e| malformed(e.to_string()))?;
    let n = strategy.n();
    let records = &cert.transcript;
    if records.is_empty() {
        return Err(malformed("empty transcript".into()));
    }
    if cert.qrng_transcript.len() != bits_per_setting(n) * records.len() {
        return Err(malformed(
            "client randomness length does not match transcript".into(),
        ));
    }
    if cert.report.counts.len() != n {
        return Err(malformed("report tallies do not match settings".into()));
    }
    for (i, r) in records.iter().enumerate() {
        if r.round_index != i as u64 {
            return Err(malformed(format!(
                "record {i} has round index {}",
                r.round_index
            )));
        }
        if r.setting_k >= n {
            return Err(malformed(format!("record {i} has setting {}", r.setting_k)));
        }
        if r.client_outcome.is_null() {
            return Err(malformed(format!("record {i} has a null client outcome")));
        }
    }

    for r in records {
        let k = derive_input(&cert.qrng_transcript, block_hash, r.round_index, n)
            .map_err(|e| malformed(e.to_string()))?;
        if k != r.setting_k {
            return Err(RejectReason::SettingMismatch {
                round: r.round_index,
            });
        }
    }
    if cert.block_hash != *block_hash {
        return Err(RejectReason::HashMismatch);
    }

    if rules.ordering {
        let mut earliest = 0u64;
        for r in records {
            let cadence = r.t_qubit_announce >= earliest
                && r.t_setting_declared == r.t_qubit_announce.wrapping_add(1)
                && r.t_server_announce == r.t_setting_declared.wrapping_add(1)
                && r.t_server_announce > r.t_qubit_announce;
            if !cadence {
                return Err(RejectReason::OrderingViolation {
                    round: r.round_index,
                });
            }
            earliest = r.t_server_announce.saturating_add(1);
        }
    }

    let recomputed = evaluate_witness(records, &strategy).map_err(|e| malformed(e.to_string()))?;
    compare_reports(&recomputed, &cert.report)?;

    match witness_verdict(&recomputed, rules.min_heralded, rules.balance_z) {
        None => Ok(()),
        Some(NullReason::InsufficientStatistics) => Err(RejectReason::InsufficientStatistics),
        Some(NullReason::HeraldingImbalance) => Err(RejectReason::HeraldingImbalance),
        Some(_) => Err(RejectReason::BoundNotViolated),
    }
}

fn compare_reports(ours: &WitnessReport, theirs: &WitnessReport) -> Result<(), RejectReason> {
    let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
    let mismatch = RejectReason::ReportMismatch;
    if ours.counts != theirs.counts {
        return Err(mismatch("counts"));
    }
    if !same(ours.eta, theirs.eta) {
        return Err(mismatch("eta"));
    }
    if !same(ours.s_n, theirs.s_n) {
        return Err(mismatch("s_n"));
    }
    if !same(ours.bound, theirs.bound) {
        return Err(mismatch("bound"));
    }
    if !same(ours.std_error, theirs.std_error) {
        return Err(mismatch("std_error"));
    }
    if ours.violated != theirs.violated {
        return Err(mismatch("violated"));
    }
    Ok(())
}
