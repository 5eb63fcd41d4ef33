//! Append-only chain file: a sequence of records, each a big-endian `u32`
//! byte length followed by one canonical mined-block document.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::chain::{audit_blocks, AuditReport, CandidateBlock, MinedBlock, RuleSet};
use crate::codec::LineReader;
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::poe::PoECertificate;

const HEADER: &str = "mined-block 1";
const WHAT: &str = "block record";

/// Canonical document for one mined block. Certificates are embedded with
/// their byte length.
pub fn encode_mined_block(mined: &MinedBlock) -> String {
    let b = &mined.block;
    let mut out = format!(
        "{HEADER}\nprev_hash {}\npayload {}\nproposer {}\nheight {}\nrule_version {}\n\
         block_hash {}\nscore {}\ncertificates {}\n",
        b.prev_hash,
        b.payload_digest,
        b.proposer_server,
        b.height,
        b.rule_version,
        b.block_hash(),
        mined.mining_score,
        mined.certificates.len()
    );
    for c in &mined.certificates {
        let text = c.to_text();
        out.push_str(&format!("cert {}\n", text.len()));
        out.push_str(&text);
    }
    out
}

/// Parses a block document, returning the block and the hash it states.
pub fn decode_mined_block(text: &str) -> Result<(MinedBlock, Digest)> {
    let head_len =
        nth_line_end(text, 9).ok_or_else(|| Error::malformed(WHAT, "truncated header"))?;
    let mut rd = LineReader::new(&text[..head_len], WHAT);
    if rd.next_line()? != HEADER {
        return Err(rd.err("unknown header"));
    }
    let block = CandidateBlock {
        prev_hash: rd.parse("prev_hash")?,
        payload_digest: rd.parse("payload")?,
        proposer_server: rd.parse("proposer")?,
        height: rd.parse("height")?,
        rule_version: rd.parse("rule_version")?,
    };
    let stated: Digest = rd.parse("block_hash")?;
    let mining_score: u64 = rd.parse("score")?;
    let count: usize = rd.parse("certificates")?;
    rd.finish()?;

    let mut rest = &text[head_len..];
    let mut certificates = Vec::new();
    for i in 0..count {
        let line_end = rest
            .find('\n')
            .ok_or_else(|| Error::malformed(WHAT, format!("certificate {i} missing")))?;
        let len: usize = rest[..line_end]
            .strip_prefix("cert ")
            .and_then(|l| l.parse().ok())
            .ok_or_else(|| Error::malformed(WHAT, format!("bad certificate {i} header")))?;
        let body = rest
            .get(line_end + 1..line_end + 1 + len)
            .ok_or_else(|| Error::malformed(WHAT, format!("certificate {i} truncated")))?;
        certificates.push(PoECertificate::from_text(body)?);
        rest = &rest[line_end + 1 + len..];
    }
    if !rest.is_empty() {
        return Err(Error::malformed(WHAT, "trailing bytes"));
    }
    Ok((
        MinedBlock {
            block,
            certificates,
            mining_score,
        },
        stated,
    ))
}

/// Byte offset just past the `n`th newline.
fn nth_line_end(text: &str, n: usize) -> Option<usize> {
    text.match_indices('\n').nth(n - 1).map(|(i, _)| i + 1)
}

/// Reads every complete record. Returns the records and the byte length of
/// the intact prefix.
fn read_records(file: &mut File) -> Result<(Vec<String>, u64)> {
    let mut bytes = Vec::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_end(&mut bytes)?;
    let mut records = Vec::new();
    let mut pos = 0usize;
    while pos + 4 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        let Some(body) = bytes.get(pos + 4..pos + 4 + len) else {
            break;
        };
        let text = String::from_utf8(body.to_vec())
            .map_err(|_| Error::malformed(WHAT, format!("record at byte {pos} is not UTF-8")))?;
        records.push(text);
        pos += 4 + len;
    }
    Ok((records, pos as u64))
}

/// Single-writer handle on the chain file.
#[derive(Debug)]
pub struct ChainStore {
    file: File,
    path: PathBuf,
}

impl ChainStore {
    /// Opens `path`, truncating a torn final record, and decodes every block.
    /// A stated hash that disagrees with its block is corruption.
    pub fn open(path: &Path) -> Result<(Self, Vec<MinedBlock>)> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let (records, intact) = read_records(&mut file)?;
        if file.metadata()?.len() != intact {
            file.set_len(intact)?;
            file.sync_all()?;
        }
        let mut blocks = Vec::with_capacity(records.len());
        for (i, text) in records.iter().enumerate() {
            let (block, stated) = decode_mined_block(text)?;
            if block.block_hash() != stated {
                return Err(Error::malformed(
                    WHAT,
                    format!("record {i}: block hash mismatch"),
                ));
            }
            blocks.push(block);
        }
        Ok((
            Self {
                file,
                path: path.to_path_buf(),
            },
            blocks,
        ))
    }

    pub fn path(&self) -> &PathBuf {
        &self.path
    }

    /// Writes one record and syncs it to disk.
    pub fn append(&mut self, mined: &MinedBlock) -> Result<()> {
        let text = encode_mined_block(mined);
        let len =
            u32::try_from(text.len()).map_err(|_| Error::domain("block record exceeds 4 GiB"))?;
        let mut buf = Vec::with_capacity(4 + text.len());
        buf.extend_from_slice(&len.to_be_bytes());
        buf.extend_from_slice(text.as_bytes());
        self.file.write_all(&buf)?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// Read-only audit of a chain file: recomputes every block hash against the
/// stated one, then linkage and certificates.
pub fn audit_file(path: &Path, rules: &RuleSet) -> Result<AuditReport> {
    let mut file = File::open(path)?;
    let (records, intact) = read_records(&mut file)?;
    let mut blocks = Vec::with_capacity(records.len());
    let mut problems = Vec::new();
    if file.metadata()?.len() != intact {
        problems.push(format!("torn record after byte {intact}"));
    }
    for (i, text) in records.iter().enumerate() {
        match decode_mined_block(text) {
            Ok((block, stated)) => {
                if block.block_hash() != stated {
                    problems.push(format!("height {i}: block hash mismatch"));
                }
                blocks.push(block);
            }
            Err(e) => {
                problems.push(format!("record {i}: {e}"));
                break;
            }
        }
    }
    let mut report = audit_blocks(&blocks, rules);
    problems.append(&mut report.problems);
    report.problems = problems;
    Ok(report)
}
