//! Delegated BFT round among the servers that won mining.
//!
//! Winners are ranked by score, reputation and id. Attempt `a` is led by the
//! speaker `subset[a mod |subset|]`, who nominates one mined block. Every
//! member then votes, and the nomination commits with at least
//! `ceil(2 |subset| / 3)` on-time approvals. A failed attempt costs the
//! speaker one reputation point and passes the lead on. After `|subset|`
//! failures the round stalls and the block is abandoned.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::chain::{prefer, validate_mined, Chain, MinedBlock, RuleSet};
use crate::codec::LineReader;
use crate::digest::Digest;
use crate::error::{Error, Result};

/// Approvals needed among `size` voters.
pub fn approval_threshold(size: usize) -> usize {
    (2 * size).div_ceil(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Speaker,
    Delegate,
    None,
}

/// Scripted conduct of a server in the voting round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConsensusBehavior {
    #[default]
    Honest,
    /// As speaker, nominates a block with a forged certificate.
    DishonestSpeaker,
    /// Votes against its own check of every nomination.
    DishonestVoter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerRecord {
    pub id: u64,
    pub reputation: i64,
    pub role: Role,
    pub behavior: ConsensusBehavior,
    /// Ground truth for metrics; protocol logic never reads it.
    pub honest_flag: bool,
}

impl ServerRecord {
    pub fn new(id: u64, behavior: ConsensusBehavior) -> Self {
        Self {
            id,
            reputation: 0,
            role: Role::None,
            behavior,
            honest_flag: behavior == ConsensusBehavior::Honest,
        }
    }
}

/// Picks the `subset_size` best servers by score, then reputation, then
/// lower id. Servers that scored zero are not eligible.
pub fn elect_winners(
    scores: &BTreeMap<u64, u64>,
    reputation: &BTreeMap<u64, i64>,
    subset_size: usize,
) -> Result<Vec<u64>> {
    if subset_size == 0 || subset_size > scores.len() {
        return Err(Error::domain(format!(
            "subset size {subset_size} outside 1..={}",
            scores.len()
        )));
    }
    let mut ranked: Vec<(u64, u64, i64)> = scores
        .iter()
        .filter(|(_, &s)| s > 0)
        .map(|(&id, &s)| (id, s, reputation.get(&id).copied().unwrap_or(0)))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
    Ok(ranked
        .into_iter()
        .take(subset_size)
        .map(|(id, _, _)| id)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vote {
    Approve,
    Reject,
    /// Arrived after the attempt closed.
    Late,
}

impl Vote {
    fn word(self) -> &'static str {
        match self {
            Vote::Approve => "approve",
            Vote::Reject => "reject",
            Vote::Late => "late",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "approve" => Vote::Approve,
            "reject" => Vote::Reject,
            "late" => Vote::Late,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteOutcome {
    Committed,
    Reelect,
    Stalled,
}

impl VoteOutcome {
    fn word(self) -> &'static str {
        match self {
            VoteOutcome::Committed => "committed",
            VoteOutcome::Reelect => "reelect",
            VoteOutcome::Stalled => "stalled",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "committed" => VoteOutcome::Committed,
            "reelect" => VoteOutcome::Reelect,
            "stalled" => VoteOutcome::Stalled,
            _ => return None,
        })
    }
}

/// One voting attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteRound {
    pub attempt: u32,
    pub speaker: u64,
    /// Hash of the nominated block; zero when the speaker had nothing.
    pub nomination: Digest,
    pub votes: Vec<(u64, Vote)>,
    pub approvals: usize,
    pub outcome: VoteOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsensusResult {
    Committed { block_hash: Digest, height: u64 },
    Stalled,
}

/// Audit record of one consensus round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusTranscript {
    pub height: u64,
    pub subset: Vec<u64>,
    pub threshold: usize,
    pub rounds: Vec<VoteRound>,
    pub result: ConsensusResult,
    /// Reputation change per server in this round.
    pub reputation_deltas: BTreeMap<u64, i64>,
}

/// Message timing between voters and the speaker. A vote whose delay exceeds
/// `timeout` ticks misses its attempt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VoteNetwork {
    pub timeout: u64,
    /// Injected delays keyed by (attempt, voter); absent means zero.
    pub delays: BTreeMap<(u32, u64), u64>,
}

impl VoteNetwork {
    pub fn synchronous() -> Self {
        Self {
            timeout: 1,
            delays: BTreeMap::new(),
        }
    }

    fn on_time(&self, attempt: u32, voter: u64) -> bool {
        self.delays.get(&(attempt, voter)).copied().unwrap_or(0) <= self.timeout
    }
}

/// Honest delegates refuse a block that reuses a committed payload, or that
/// claims a committed height with another payload.
pub fn conflicts_with_chain(mined: &MinedBlock, chain: &Chain) -> bool {
    let payload = mined.block.payload_digest;
    chain
        .blocks()
        .iter()
        .any(|b| b.block.payload_digest == payload)
        || chain
            .blocks()
            .get(mined.block.height as usize)
            .is_some_and(|b| b.block.payload_digest != payload)
}

fn honest_check(mined: &MinedBlock, chain: &Chain, rules: &RuleSet) -> bool {
    validate_mined(mined, chain, rules).is_ok() && !conflicts_with_chain(mined, chain)
}

/// The speaker's forgery: its best nomination with one report bit flipped,
/// which breaks certificate verification but leaves the block hash alone.
fn forge(mined: &MinedBlock) -> MinedBlock {
    let mut forged = mined.clone();
    match forged.certificates.first_mut() {
        Some(c) => c.report.s_n = f64::from_bits(c.report.s_n.to_bits() ^ 1),
        None => forged.mining_score += 1,
    }
    forged
}

/// Runs the voting attempts for the next block and appends the committed
/// block to `chain`.
///
/// `nominations` are the mined blocks on offer. An honest speaker nominates
/// the preferred one (highest score, then lower hash) among those its own
/// check accepts, or the preferred one overall when none passes.
pub fn run_consensus(
    subset: &[u64],
    servers: &mut BTreeMap<u64, ServerRecord>,
    nominations: &[MinedBlock],
    chain: &mut Chain,
    rules: &RuleSet,
    network: &VoteNetwork,
) -> Result<ConsensusTranscript> {
    if subset.is_empty() {
        return Err(Error::domain("consensus needs a non-empty subset"));
    }
    let distinct: BTreeSet<_> = subset.iter().collect();
    if distinct.len() != subset.len() {
        return Err(Error::Duplicate(
            "server appears twice in the subset".into(),
        ));
    }
    for id in subset {
        if !servers.contains_key(id) {
            return Err(Error::domain(format!("server {id} has no record")));
        }
    }

    // every honest check is the same deterministic function, so each
    // distinct nomination is evaluated once
    let mut order: Vec<usize> = (0..nominations.len()).collect();
    order.sort_by(|&a, &b| prefer(&nominations[a], &nominations[b]));
    let valid: Vec<bool> = nominations
        .iter()
        .map(|m| honest_check(m, chain, rules))
        .collect();
    let best_valid = order.iter().copied().find(|&i| valid[i]);
    let best_any = order.first().copied();

    let threshold = approval_threshold(subset.len());
    let height = chain.next_height();
    let mut rounds = Vec::new();
    let mut deltas = BTreeMap::new();
    let mut result = ConsensusResult::Stalled;

    for attempt in 0..subset.len() as u32 {
        let speaker = subset[attempt as usize % subset.len()];
        for id in subset {
            servers.get_mut(id).expect("checked").role = if *id == speaker {
                Role::Speaker
            } else {
                Role::Delegate
            };
        }
        let behavior = servers[&speaker].behavior;
        let (nomination, nomination_valid) = match behavior {
            ConsensusBehavior::DishonestSpeaker => match best_any {
                Some(i) => {
                    let f = forge(&nominations[i]);
                    let ok = honest_check(&f, chain, rules);
                    (Some(f), ok)
                }
                None => (None, false),
            },
            _ => match best_valid.or(best_any) {
                Some(i) => (Some(nominations[i].clone()), valid[i]),
                None => (None, false),
            },
        };

        let mut votes = Vec::with_capacity(subset.len());
        for &voter in subset {
            let vote = if !network.on_time(attempt, voter) {
                Vote::Late
            } else {
                let approve = match servers[&voter].behavior {
                    ConsensusBehavior::DishonestVoter => !nomination_valid,
                    // a dishonest speaker backs its own forgery
                    ConsensusBehavior::DishonestSpeaker if voter == speaker => true,
                    _ => nomination_valid,
                } && nomination.is_some();
                if approve {
                    Vote::Approve
                } else {
                    Vote::Reject
                }
            };
            votes.push((voter, vote));
        }
        let approvals = votes.iter().filter(|(_, v)| *v == Vote::Approve).count();
        let nomination_hash = nomination
            .as_ref()
            .map_or(Digest::ZERO, MinedBlock::block_hash);

        let outcome = if approvals >= threshold {
            VoteOutcome::Committed
        } else if attempt as usize + 1 == subset.len() {
            VoteOutcome::Stalled
        } else {
            VoteOutcome::Reelect
        };
        rounds.push(VoteRound {
            attempt,
            speaker,
            nomination: nomination_hash,
            votes,
            approvals,
            outcome,
        });
        if outcome == VoteOutcome::Committed {
            let block = nomination.expect("approved nominations exist");
            chain.append(block)?;
            result = ConsensusResult::Committed {
                block_hash: nomination_hash,
                height,
            };
            break;
        }
        servers.get_mut(&speaker).expect("checked").reputation -= 1;
        *deltas.entry(speaker).or_insert(0) -= 1;
    }
    for id in subset {
        servers.get_mut(id).expect("checked").role = Role::None;
    }
    Ok(ConsensusTranscript {
        height,
        subset: subset.to_vec(),
        threshold,
        rounds,
        result,
        reputation_deltas: deltas,
    })
}

const HEADER: &str = "consensus-transcript 1";
const WHAT: &str = "consensus transcript";

impl ConsensusTranscript {
    fn body(&self) -> String {
        let ids = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
        let mut out = format!(
            "{HEADER}\nheight {}\nsubset {}\nthreshold {}\nattempts {}\n",
            self.height,
            ids(&self.subset),
            self.threshold,
            self.rounds.len()
        );
        for r in &self.rounds {
            out.push_str(&format!(
                "attempt {} {} {}\n",
                r.attempt, r.speaker, r.nomination
            ));
            for (voter, vote) in &r.votes {
                out.push_str(&format!("vote {voter} {}\n", vote.word()));
            }
            out.push_str(&format!("outcome {} {}\n", r.outcome.word(), r.approvals));
        }
        match self.result {
            ConsensusResult::Committed { block_hash, height } => {
                out.push_str(&format!("result committed {block_hash} {height}\n"));
            }
            ConsensusResult::Stalled => out.push_str("result stalled\n"),
        }
        out.push_str(&format!("deltas {}\n", self.reputation_deltas.len()));
        for (id, d) in &self.reputation_deltas {
            out.push_str(&format!("delta {id} {d}\n"));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let body = self.body();
        format!("{body}digest {}\n", Digest::of(body.as_bytes()))
    }

    /// Parses a transcript; the digest must match and the text must be canonical.
    pub fn from_text(text: &str) -> Result<Self> {
        let split = text
            .rfind("digest ")
            .ok_or_else(|| Error::malformed(WHAT, "missing digest line"))?;
        let (body, tail) = text.split_at(split);
        let stated: Digest = tail
            .strip_prefix("digest ")
            .and_then(|d| d.strip_suffix('\n'))
            .ok_or_else(|| Error::malformed(WHAT, "bad digest line"))?
            .parse()?;
        if Digest::of(body.as_bytes()) != stated {
            return Err(Error::malformed(WHAT, "digest does not match body"));
        }
        let t = parse_body(body)?;
        if t.to_text() != text {
            return Err(Error::malformed(WHAT, "not in canonical form"));
        }
        Ok(t)
    }
}

fn parse_body(body: &str) -> Result<ConsensusTranscript> {
    let mut rd = LineReader::new(body, WHAT);
    if rd.next_line()? != HEADER {
        return Err(rd.err("unknown header"));
    }
    let height: u64 = rd.parse("height")?;
    let subset = rd
        .expect("subset")?
        .split(' ')
        .map(|s| rd.parse_field(s))
        .collect::<Result<Vec<u64>>>()?;
    let threshold: usize = rd.parse("threshold")?;
    let attempts: usize = rd.parse("attempts")?;
    if attempts > subset.len() {
        return Err(rd.err("more attempts than subset members"));
    }
    let mut rounds = Vec::with_capacity(attempts);
    for _ in 0..attempts {
        let f = rd.fields("attempt", 3)?;
        let (attempt, speaker, nomination) = (
            rd.parse_field(f[0])?,
            rd.parse_field(f[1])?,
            rd.parse_field(f[2])?,
        );
        let mut votes = Vec::with_capacity(subset.len());
        for _ in 0..subset.len() {
            let f = rd.fields("vote", 2)?;
            let vote = Vote::parse(f[1]).ok_or_else(|| rd.err(format!("bad vote `{}`", f[1])))?;
            votes.push((rd.parse_field(f[0])?, vote));
        }
        let f = rd.fields("outcome", 2)?;
        let outcome =
            VoteOutcome::parse(f[0]).ok_or_else(|| rd.err(format!("bad outcome `{}`", f[0])))?;
        rounds.push(VoteRound {
            attempt,
            speaker,
            nomination,
            votes,
            approvals: rd.parse_field(f[1])?,
            outcome,
        });
    }
    let line = rd.expect("result")?;
    let f: Vec<&str> = line.split(' ').collect();
    let result = match f.as_slice() {
        ["committed", hash, h] => ConsensusResult::Committed {
            block_hash: rd.parse_field(hash)?,
            height: rd.parse_field(h)?,
        },
        ["stalled"] => ConsensusResult::Stalled,
        _ => return Err(rd.err(format!("bad result `{line}`"))),
    };
    let count: usize = rd.parse("deltas")?;
    let mut reputation_deltas = BTreeMap::new();
    for _ in 0..count {
        let f = rd.fields("delta", 2)?;
        reputation_deltas.insert(rd.parse_field(f[0])?, rd.parse_field(f[1])?);
    }
    rd.finish()?;
    Ok(ConsensusTranscript {
        height,
        subset,
        threshold,
        rounds,
        result,
        reputation_deltas,
    })
}

/// What a replayed transcript establishes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplaySummary {
    pub height: u64,
    pub attempts: usize,
    pub result: ConsensusResult,
    pub penalties: usize,
}

impl fmt::Display for ReplaySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.result {
            ConsensusResult::Committed { block_hash, height } => write!(
                f,
                "committed height={height} block={block_hash} attempts={} penalties={}",
                self.attempts, self.penalties
            ),
            ConsensusResult::Stalled => write!(
                f,
                "stalled height={} attempts={} penalties={}",
                self.height, self.attempts, self.penalties
            ),
        }
    }
}

/// Re-checks every rule a transcript claims to follow: speaker rotation, one
/// vote per member, tallies, threshold, outcomes and reputation deltas.
pub fn replay(t: &ConsensusTranscript) -> Result<ReplaySummary> {
    let bad = |d: String| Error::malformed(WHAT, d);
    let size = t.subset.len();
    if size == 0 {
        return Err(bad("empty subset".into()));
    }
    if t.subset.iter().collect::<BTreeSet<_>>().len() != size {
        return Err(bad("subset repeats a server".into()));
    }
    if t.threshold != approval_threshold(size) {
        return Err(bad(format!("threshold {} for {size} voters", t.threshold)));
    }
    if t.rounds.is_empty() {
        return Err(bad("no attempts".into()));
    }
    let mut deltas: BTreeMap<u64, i64> = BTreeMap::new();
    let mut result = ConsensusResult::Stalled;
    for (i, r) in t.rounds.iter().enumerate() {
        if r.attempt as usize != i || r.speaker != t.subset[i % size] {
            return Err(bad(format!("attempt {i}: wrong speaker or index")));
        }
        let voters: Vec<u64> = r.votes.iter().map(|(v, _)| *v).collect();
        if voters != t.subset {
            return Err(bad(format!("attempt {i}: votes do not match the subset")));
        }
        let approvals = r.votes.iter().filter(|(_, v)| *v == Vote::Approve).count();
        if approvals != r.approvals {
            return Err(bad(format!(
                "attempt {i}: tally {} but {approvals} approvals",
                r.approvals
            )));
        }
        let last = i + 1 == t.rounds.len();
        let expected = if approvals >= t.threshold {
            VoteOutcome::Committed
        } else if i + 1 == size {
            VoteOutcome::Stalled
        } else {
            VoteOutcome::Reelect
        };
        if r.outcome != expected {
            return Err(bad(format!(
                "attempt {i}: outcome {:?}, rules give {expected:?}",
                r.outcome
            )));
        }
        if (expected == VoteOutcome::Reelect) == last {
            return Err(bad(format!("attempt {i}: round ends at the wrong attempt")));
        }
        match expected {
            VoteOutcome::Committed => {
                if r.nomination == Digest::ZERO {
                    return Err(bad(format!("attempt {i}: committed without a nomination")));
                }
                result = ConsensusResult::Committed {
                    block_hash: r.nomination,
                    height: t.height,
                };
            }
            _ => *deltas.entry(r.speaker).or_insert(0) -= 1,
        }
    }
    if result != t.result {
        return Err(bad("stated result disagrees with the attempts".into()));
    }
    if deltas != t.reputation_deltas {
        return Err(bad(
            "reputation deltas disagree with the failed attempts".into()
        ));
    }
    Ok(ReplaySummary {
        height: t.height,
        attempts: t.rounds.len(),
        result,
        penalties: deltas.values().map(|d| d.unsigned_abs() as usize).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds() {
        assert_eq!(approval_threshold(7), 5);
        assert_eq!(approval_threshold(3), 2);
        assert_eq!(approval_threshold(1), 1);
        assert_eq!(approval_threshold(6), 4);
        // 66% rounded up to the classical bound
        for n in 1..100usize {
            let t = approval_threshold(n);
            assert!(3 * t >= 2 * n && 3 * (t - 1) < 2 * n);
        }
    }

    #[test]
    fn election_order() {
        let scores: BTreeMap<u64, u64> = [(1, 5), (2, 3), (3, 0)].into();
        assert_eq!(
            elect_winners(&scores, &BTreeMap::new(), 2).unwrap(),
            vec![1, 2]
        );
        let tied: BTreeMap<u64, u64> = [(1, 4), (2, 4), (3, 4)].into();
        let rep: BTreeMap<u64, i64> = [(3, 2), (1, -1)].into();
        assert_eq!(elect_winners(&tied, &rep, 3).unwrap(), vec![3, 2, 1]);
        let zero: BTreeMap<u64, u64> = [(1, 0), (2, 0)].into();
        assert!(elect_winners(&zero, &BTreeMap::new(), 2)
            .unwrap()
            .is_empty());
        assert!(elect_winners(&zero, &BTreeMap::new(), 3).is_err());
    }
}
