//! Candidate blocks, network-rule validation and the single-branch chain.

mod store;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::poe::{verify_poe_with, PoECertificate, ScoreRule, VerifyRules};

pub use store::{audit_file, decode_mined_block, encode_mined_block, ChainStore};

/// Current network rule version.
pub const RULE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateBlock {
    pub prev_hash: Digest,
    /// Digest of the block's transactions and contract data.
    pub payload_digest: Digest,
    pub proposer_server: u64,
    pub height: u64,
    pub rule_version: u32,
}

impl CandidateBlock {
    /// `H(prev ‖ payload ‖ proposer ‖ height ‖ rule_version)`, integers big-endian.
    pub fn block_hash(&self) -> Digest {
        Digest::of_parts(&[
            self.prev_hash.as_bytes(),
            self.payload_digest.as_bytes(),
            &self.proposer_server.to_be_bytes(),
            &self.height.to_be_bytes(),
            &self.rule_version.to_be_bytes(),
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedBlock {
    pub block: CandidateBlock,
    pub certificates: Vec<PoECertificate>,
    pub mining_score: u64,
}

impl MinedBlock {
    pub fn block_hash(&self) -> Digest {
        self.block.block_hash()
    }
}

/// Network rules every node checks blocks against.
#[derive(Debug, Clone)]
pub struct RuleSet {
    pub rule_version: u32,
    pub members: BTreeSet<u64>,
    pub verify: VerifyRules,
    pub score_rule: ScoreRule,
}

impl RuleSet {
    pub fn new(members: impl IntoIterator<Item = u64>) -> Self {
        Self {
            rule_version: RULE_VERSION,
            members: members.into_iter().collect(),
            verify: VerifyRules::default(),
            score_rule: ScoreRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockRejection {
    Linkage,
    Height { expected: u64, found: u64 },
    RuleVersion { expected: u32, found: u32 },
    Membership(u64),
    Certificate { index: usize, reason: String },
    DuplicateMiner,
    Score { expected: u64, found: u64 },
}

impl BlockRejection {
    pub fn code(&self) -> &'static str {
        match self {
            BlockRejection::Linkage => "linkage",
            BlockRejection::Height { .. } => "height",
            BlockRejection::RuleVersion { .. } => "rule_version",
            BlockRejection::Membership(_) => "membership",
            BlockRejection::Certificate { .. } => "certificate",
            BlockRejection::DuplicateMiner => "duplicate_miner",
            BlockRejection::Score { .. } => "score",
        }
    }
}

impl fmt::Display for BlockRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockRejection::Height { expected, found } => {
                write!(f, "height: expected {expected}, found {found}")
            }
            BlockRejection::RuleVersion { expected, found } => {
                write!(f, "rule_version: expected {expected}, found {found}")
            }
            BlockRejection::Membership(id) => write!(f, "membership: server {id}"),
            BlockRejection::Certificate { index, reason } => {
                write!(f, "certificate {index}: {reason}")
            }
            BlockRejection::Score { expected, found } => {
                write!(f, "score: expected {expected}, found {found}")
            }
            other => f.write_str(other.code()),
        }
    }
}

/// Builds the next block on `chain`'s head.
pub fn build_candidate(
    chain: &Chain,
    payload_digest: Digest,
    proposer: u64,
    rule_version: u32,
) -> CandidateBlock {
    CandidateBlock {
        prev_hash: chain.head_hash(),
        payload_digest,
        proposer_server: proposer,
        height: chain.next_height(),
        rule_version,
    }
}

/// Linkage, height continuity, rule version and proposer membership.
pub fn validate_block(
    block: &CandidateBlock,
    chain: &Chain,
    rules: &RuleSet,
) -> Result<(), BlockRejection> {
    if block.prev_hash != chain.head_hash() {
        return Err(BlockRejection::Linkage);
    }
    if block.height != chain.next_height() {
        return Err(BlockRejection::Height {
            expected: chain.next_height(),
            found: block.height,
        });
    }
    check_membership(block, rules)
}

fn check_membership(block: &CandidateBlock, rules: &RuleSet) -> Result<(), BlockRejection> {
    if block.rule_version != rules.rule_version {
        return Err(BlockRejection::RuleVersion {
            expected: rules.rule_version,
            found: block.rule_version,
        });
    }
    if !rules.members.contains(&block.proposer_server) {
        return Err(BlockRejection::Membership(block.proposer_server));
    }
    Ok(())
}

/// [`validate_block`] plus certificate verification, distinct miners and
/// the claimed score.
pub fn validate_mined(
    mined: &MinedBlock,
    chain: &Chain,
    rules: &RuleSet,
) -> Result<(), BlockRejection> {
    validate_block(&mined.block, chain, rules)?;
    check_certificates(mined, rules)
}

fn check_certificates(mined: &MinedBlock, rules: &RuleSet) -> Result<(), BlockRejection> {
    let hash = mined.block_hash();
    let mut miners = HashSet::new();
    for (index, cert) in mined.certificates.iter().enumerate() {
        if let Some(reason) = verify_poe_with(cert, &hash, &rules.verify).reason() {
            return Err(BlockRejection::Certificate {
                index,
                reason: reason.to_string(),
            });
        }
        if cert.server_id != mined.block.proposer_server {
            return Err(BlockRejection::Certificate {
                index,
                reason: "issued by another server".into(),
            });
        }
        if !miners.insert(cert.miner.physical_address) {
            return Err(BlockRejection::DuplicateMiner);
        }
    }
    let expected = rules.score_rule.score(&mined.certificates);
    if expected != mined.mining_score {
        return Err(BlockRejection::Score {
            expected,
            found: mined.mining_score,
        });
    }
    Ok(())
}

/// The committed chain, optionally backed by an append-only file.
#[derive(Debug)]
pub struct Chain {
    blocks: Vec<MinedBlock>,
    store: Option<ChainStore>,
}

impl Chain {
    pub fn in_memory() -> Self {
        Self {
            blocks: Vec::new(),
            store: None,
        }
    }

    /// Opens or creates the store at `path`, replaying every complete record.
    /// A torn final record is discarded.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let (store, blocks) = ChainStore::open(path.as_ref())?;
        let mut chain = Chain::in_memory();
        for b in blocks {
            chain.link(&b)?;
            chain.blocks.push(b);
        }
        chain.store = Some(store);
        Ok(chain)
    }

    pub fn path(&self) -> Option<&PathBuf> {
        self.store.as_ref().map(|s| s.path())
    }

    pub fn blocks(&self) -> &[MinedBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Hash of the last block, or the zero digest before genesis.
    pub fn head_hash(&self) -> Digest {
        self.blocks
            .last()
            .map_or(Digest::ZERO, MinedBlock::block_hash)
    }

    pub fn next_height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn cumulative_score(&self) -> u64 {
        self.blocks.iter().map(|b| b.mining_score).sum()
    }

    fn link(&self, mined: &MinedBlock) -> Result<()> {
        if mined.block.prev_hash != self.head_hash() || mined.block.height != self.next_height() {
            return Err(Error::Linkage(format!(
                "block at height {} does not extend head {} at height {}",
                mined.block.height,
                self.head_hash(),
                self.next_height()
            )));
        }
        Ok(())
    }

    /// Persists `mined` and makes it the new head.
    pub fn append(&mut self, mined: MinedBlock) -> Result<()> {
        self.link(&mined)?;
        if let Some(store) = &mut self.store {
            store.append(&mined)?;
        }
        self.blocks.push(mined);
        Ok(())
    }

    /// Rescans every block: linkage, stored hashes and certificates.
    pub fn audit(&self, rules: &RuleSet) -> AuditReport {
        audit_blocks(&self.blocks, rules)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub blocks: usize,
    pub certificates: usize,
    pub problems: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

pub fn audit_blocks(blocks: &[MinedBlock], rules: &RuleSet) -> AuditReport {
    let mut report = AuditReport::default();
    let mut head = Digest::ZERO;
    for (height, b) in blocks.iter().enumerate() {
        report.blocks += 1;
        report.certificates += b.certificates.len();
        if b.block.prev_hash != head || b.block.height != height as u64 {
            report.problems.push(format!("height {height}: linkage"));
        }
        if let Err(e) = check_membership(&b.block, rules) {
            report.problems.push(format!("height {height}: {e}"));
        }
        if let Err(e) = check_certificates(b, rules) {
            report.problems.push(format!("height {height}: {e}"));
        }
        head = b.block_hash();
    }
    report
}

/// Among equal-score competitors the lower block hash wins.
pub fn prefer(a: &MinedBlock, b: &MinedBlock) -> std::cmp::Ordering {
    b.mining_score
        .cmp(&a.mining_score)
        .then_with(|| a.block_hash().cmp(&b.block_hash()))
}
