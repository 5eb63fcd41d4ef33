//! Canonical text form of a certificate.
//!
//! ```text
//! poe-certificate 1
//! block_hash <hex>
//! server <id>
//! miner <address hex> <reputation> <n>
//! link <distance_km> <db_per_km> <coupling> <detector>
//! metadata <count>
//! meta <key> <value>            (escaped, sorted by key)
//! report <eta> <s_n> <bound> <std_error> <violated>
//! tally <records> <heralded> <correlated> <anticorrelated>   (n lines)
//! qrng <bit count> <hex>
//! records <count>
//! r <round> <k> <client> <server> <t_qubit> <t_setting> <t_server>
//! digest <sha-256 of every preceding byte>
//! ```

use std::collections::BTreeMap;

use crate::codec::{escape, fmt_f64, unescape, LineReader, TextWriter};
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::poe::{BitString, MeasurementRecord, MinerIdentity, PoECertificate};
use crate::qstate::{LossModel, Outcome};
use crate::steering::{SettingTally, WitnessReport};

const HEADER: &str = "poe-certificate 1";
const WHAT: &str = "certificate";

impl PoECertificate {
    /// Body without the trailing digest line.
    fn body(&self) -> String {
        let mut w = TextWriter::new();
        w.raw(HEADER).raw("\n");
        w.line("block_hash", self.block_hash);
        w.line("server", self.server_id);
        let m = &self.miner;
        w.line(
            "miner",
            format!("{} {} {}", m.physical_address, m.reputation, m.strategy_n),
        );
        w.line(
            "link",
            format!(
                "{} {} {} {}",
                fmt_f64(m.link.distance_km),
                fmt_f64(m.link.fiber_db_per_km),
                fmt_f64(m.link.coupling_transmission),
                fmt_f64(m.link.detector_efficiency)
            ),
        );
        w.line("metadata", m.metadata.len());
        for (k, v) in &m.metadata {
            w.line("meta", format!("{} {}", escape(k), escape(v)));
        }
        let r = &self.report;
        w.line(
            "report",
            format!(
                "{} {} {} {} {}",
                fmt_f64(r.eta),
                fmt_f64(r.s_n),
                fmt_f64(r.bound),
                fmt_f64(r.std_error),
                r.violated
            ),
        );
        for t in &r.counts {
            w.line(
                "tally",
                format!(
                    "{} {} {} {}",
                    t.records, t.heralded, t.correlated, t.anticorrelated
                ),
            );
        }
        w.line(
            "qrng",
            format!(
                "{} {}",
                self.qrng_transcript.len(),
                self.qrng_transcript.to_hex()
            ),
        );
        w.line("records", self.transcript.len());
        for rec in &self.transcript {
            w.line(
                "r",
                format!(
                    "{} {} {} {} {} {} {}",
                    rec.round_index,
                    rec.setting_k,
                    rec.client_outcome.symbol(),
                    rec.server_announcement.symbol(),
                    rec.t_qubit_announce,
                    rec.t_setting_declared,
                    rec.t_server_announce
                ),
            );
        }
        w.finish()
    }

    pub fn to_text(&self) -> String {
        let body = self.body();
        let digest = Digest::of(body.as_bytes());
        format!("{body}digest {digest}\n")
    }

    /// Digest of the canonical body; identifies the certificate.
    pub fn digest(&self) -> Digest {
        Digest::of(self.body().as_bytes())
    }

    /// Parses a canonical certificate. The digest line must match and the
    /// text must be exactly what [`to_text`](Self::to_text) would produce.
    pub fn from_text(text: &str) -> Result<Self> {
        let split = text
            .rfind("digest ")
            .ok_or_else(|| Error::malformed(WHAT, "missing digest line"))?;
        let (body, digest_line) = text.split_at(split);
        let stated = Digest::from_hex(
            digest_line
                .strip_prefix("digest ")
                .and_then(|d| d.strip_suffix('\n'))
                .ok_or_else(|| Error::malformed(WHAT, "bad digest line"))?,
        )?;
        if Digest::of(body.as_bytes()) != stated {
            return Err(Error::malformed(WHAT, "digest does not match body"));
        }
        let cert = parse_body(body)?;
        if cert.to_text() != text {
            return Err(Error::malformed(WHAT, "not in canonical form"));
        }
        Ok(cert)
    }
}

fn parse_body(body: &str) -> Result<PoECertificate> {
    let mut rd = LineReader::new(body, WHAT);
    if rd.next_line()? != HEADER {
        return Err(rd.err("unknown header"));
    }
    let block_hash: Digest = rd.parse("block_hash")?;
    let server_id: u64 = rd.parse("server")?;
    let f = rd.fields("miner", 3)?;
    let physical_address: Digest = rd.parse_field(f[0])?;
    let reputation: i64 = rd.parse_field(f[1])?;
    let strategy_n: usize = rd.parse_field(f[2])?;
    let f = rd.fields("link", 4)?;
    let link = LossModel::new(
        rd.parse_field(f[0])?,
        rd.parse_field(f[1])?,
        rd.parse_field(f[2])?,
        rd.parse_field(f[3])?,
    )?;
    let meta_count: usize = rd.parse("metadata")?;
    let mut metadata = BTreeMap::new();
    for _ in 0..meta_count {
        let f = rd.fields("meta", 2)?;
        metadata.insert(unescape(f[0])?, unescape(f[1])?);
    }
    if metadata.len() != meta_count {
        return Err(rd.err("duplicate metadata key"));
    }
    let f = rd.fields("report", 5)?;
    let eta: f64 = rd.parse_field(f[0])?;
    let s_n: f64 = rd.parse_field(f[1])?;
    let bound: f64 = rd.parse_field(f[2])?;
    let std_error: f64 = rd.parse_field(f[3])?;
    let violated: bool = rd.parse_field(f[4])?;
    if !(2..=64).contains(&strategy_n) {
        return Err(rd.err("unsupported setting count"));
    }
    let mut counts = Vec::with_capacity(strategy_n);
    for _ in 0..strategy_n {
        let f = rd.fields("tally", 4)?;
        counts.push(SettingTally {
            records: rd.parse_field(f[0])?,
            heralded: rd.parse_field(f[1])?,
            correlated: rd.parse_field(f[2])?,
            anticorrelated: rd.parse_field(f[3])?,
        });
    }
    let f = rd.fields("qrng", 2)?;
    let qrng_len: usize = rd.parse_field(f[0])?;
    let qrng_transcript = BitString::from_hex(f[1], qrng_len)?;
    let count: usize = rd.parse("records")?;
    let mut transcript = Vec::with_capacity(count.min(1 << 22));
    for _ in 0..count {
        let f = rd.fields("r", 7)?;
        let outcome = |s: &str| -> Result<Outcome> {
            let mut chars = s.chars();
            match (chars.next().and_then(Outcome::from_symbol), chars.next()) {
                (Some(o), None) => Ok(o),
                _ => Err(rd.err(format!("bad outcome `{s}`"))),
            }
        };
        transcript.push(MeasurementRecord {
            round_index: rd.parse_field(f[0])?,
            setting_k: rd.parse_field(f[1])?,
            client_outcome: outcome(f[2])?,
            server_announcement: outcome(f[3])?,
            t_qubit_announce: rd.parse_field(f[4])?,
            t_setting_declared: rd.parse_field(f[5])?,
            t_server_announce: rd.parse_field(f[6])?,
        });
    }
    rd.finish()?;
    Ok(PoECertificate {
        block_hash,
        server_id,
        miner: MinerIdentity {
            physical_address,
            reputation,
            strategy_n,
            metadata,
            link,
        },
        report: WitnessReport {
            s_n,
            eta,
            bound,
            violated,
            std_error,
            counts,
        },
        transcript,
        qrng_transcript,
    })
}
