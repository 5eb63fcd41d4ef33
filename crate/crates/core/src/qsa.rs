//! Decoy-state quantum-secure authentication of a client's photonic key.
//!
//! The optics are abstracted to a keyed function. A key focuses a challenge
//! onto one of [`RESPONSE_CELLS`] detector cells only when the challenge was
//! shaped for it at enrollment; anything else scatters and the detector stays
//! dark. Enrolled challenges and decoys are both 32 uniformly random looking
//! bytes on the wire. A spoofer that lights its detector cannot tell which
//! rounds are decoys, so it gets caught answering them.
//!
//! Adversaries never read challenge bytes: the wire stands for a quantum
//! channel whose state cannot be copied or measured without disturbing it.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use sha2::{Digest as _, Sha256};

use crate::codec::{fmt_sig, LineReader};
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::poe::AuthGrant;
use crate::RandomStream;

/// Detector cells a focused response can land on.
pub const RESPONSE_CELLS: u8 = 8;
/// Enrollment entries per key.
pub const DEFAULT_ENROLLMENT_ENTRIES: usize = 10_000;
const SALT_BYTES: usize = 24;
const CHALLENGE_BYTES: usize = 32;

fn keyed(label: &[u8], key: &[u8; 32], data: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(label);
    h.update(key);
    h.update(data);
    h.finalize().into()
}

/// A physically unclonable key, reduced to its secret seed.
#[derive(Clone, PartialEq, Eq)]
pub struct PhotonicKeySim {
    key_seed: [u8; 32],
}

impl fmt::Debug for PhotonicKeySim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PhotonicKeySim { .. }")
    }
}

impl PhotonicKeySim {
    pub fn from_seed(key_seed: [u8; 32]) -> Self {
        Self { key_seed }
    }

    pub fn generate(rng: &mut RandomStream) -> Self {
        Self::from_seed(rng.random())
    }

    fn tag(&self, salt: &[u8]) -> [u8; CHALLENGE_BYTES - SALT_BYTES] {
        let full = keyed(b"qsa-tag", &self.key_seed, salt);
        full[..CHALLENGE_BYTES - SALT_BYTES]
            .try_into()
            .expect("tag width")
    }

    /// The `i`-th challenge shaped for this key.
    fn enrolled_challenge(&self, i: u64) -> Challenge {
        let salt = keyed(b"qsa-salt", &self.key_seed, &i.to_be_bytes());
        let mut nonce = [0u8; CHALLENGE_BYTES];
        nonce[..SALT_BYTES].copy_from_slice(&salt[..SALT_BYTES]);
        let tag = self.tag(&nonce[..SALT_BYTES]);
        nonce[SALT_BYTES..].copy_from_slice(&tag);
        Challenge { nonce }
    }

    /// The detector cell the key focuses `challenge` onto, or `None` when it
    /// scatters.
    pub fn focus(&self, challenge: &Challenge) -> Option<u8> {
        let (salt, tag) = challenge.nonce.split_at(SALT_BYTES);
        (self.tag(salt) == tag)
            .then(|| keyed(b"qsa-cell", &self.key_seed, &challenge.nonce)[0] % RESPONSE_CELLS)
    }

    /// Characterises the key over `entries` challenges.
    pub fn enroll(&self, entries: usize) -> Result<EnrollmentRecord> {
        if entries == 0 {
            return Err(Error::domain("enrollment needs at least one entry"));
        }
        let entries = (0..entries as u64)
            .map(|i| {
                let c = self.enrolled_challenge(i);
                let cell = self.focus(&c).expect("enrolled challenges focus");
                EnrollmentEntry {
                    challenge: c,
                    response_digest: response_digest(&c, cell),
                }
            })
            .collect();
        Ok(EnrollmentRecord::from_entries(entries))
    }
}

/// Public digest of the response `cell` to `challenge`.
pub fn response_digest(challenge: &Challenge, cell: u8) -> Digest {
    Digest::of_parts(&[b"qsa-response", &challenge.nonce, &[cell]])
}

/// What a client receives. Whether it is real or a decoy is not part of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Challenge {
    pub nonce: [u8; CHALLENGE_BYTES],
}

impl Challenge {
    pub fn wire(&self) -> &[u8; CHALLENGE_BYTES] {
        &self.nonce
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChallengeKind {
    Real,
    Decoy,
}

/// A challenge together with its kind; only the issuing server holds this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IssuedChallenge {
    pub challenge: Challenge,
    pub kind: ChallengeKind,
    /// Enrollment entry a real challenge came from.
    pub entry: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnrollmentEntry {
    pub challenge: Challenge,
    pub response_digest: Digest,
}

/// Public characterisation of one key. Its digest is the key's address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrollmentRecord {
    address: Digest,
    entries: Vec<EnrollmentEntry>,
    /// The cell each digest commits to; public, recovered by trial.
    cells: Vec<u8>,
}

impl EnrollmentRecord {
    fn from_entries(entries: Vec<EnrollmentEntry>) -> Self {
        let mut h = Sha256::new();
        h.update(b"qsa-enrollment");
        for e in &entries {
            h.update(e.challenge.nonce);
            h.update(e.response_digest.as_bytes());
        }
        let cells = entries.iter().map(expected_cell).collect();
        Self {
            address: Digest(h.finalize().into()),
            entries,
            cells,
        }
    }

    pub fn address(&self) -> Digest {
        self.address
    }

    pub fn entries(&self) -> &[EnrollmentEntry] {
        &self.entries
    }

    /// Draws a real challenge with probability `1 - p_decoy`, otherwise 32
    /// fresh random bytes.
    pub fn issue(&self, p_decoy: f64, rng: &mut RandomStream) -> IssuedChallenge {
        if rng.random_bool(p_decoy) {
            IssuedChallenge {
                challenge: Challenge {
                    nonce: rng.random(),
                },
                kind: ChallengeKind::Decoy,
                entry: None,
            }
        } else {
            let i = rng.random_range(0..self.entries.len());
            IssuedChallenge {
                challenge: self.entries[i].challenge,
                kind: ChallengeKind::Real,
                entry: Some(i),
            }
        }
    }

    fn write(&self, out: &mut String) {
        out.push_str(&format!("key {} {}\n", self.address, self.entries.len()));
        for e in &self.entries {
            out.push_str(&format!(
                "e {} {}\n",
                hex::encode(e.challenge.nonce),
                e.response_digest
            ));
        }
    }
}

/// The public enrollment database, one record per key, keyed by address.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnrollmentDb {
    records: BTreeMap<Digest, EnrollmentRecord>,
}

const DB_HEADER: &str = "qsa-enrollment 1";

impl EnrollmentDb {
    pub fn new() -> Self {
        Self::default()
    }

    /// Enrolls `key` and returns its address. A key has exactly one record,
    /// so enrolling it again is a duplicate.
    pub fn enroll(&mut self, key: &PhotonicKeySim, entries: usize) -> Result<Digest> {
        let record = key.enroll(entries)?;
        self.insert(record)
    }

    pub fn insert(&mut self, record: EnrollmentRecord) -> Result<Digest> {
        let address = record.address;
        if self.records.contains_key(&address) {
            return Err(Error::Duplicate(format!(
                "address {address} already enrolled"
            )));
        }
        self.records.insert(address, record);
        Ok(address)
    }

    pub fn get(&self, address: &Digest) -> Option<&EnrollmentRecord> {
        self.records.get(address)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn addresses(&self) -> impl Iterator<Item = &Digest> {
        self.records.keys()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{DB_HEADER}\nkeys {}\n", self.records.len());
        for r in self.records.values() {
            r.write(&mut out);
        }
        out
    }

    /// Parses the canonical text, recomputing every address.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut rd = LineReader::new(text, "enrollment database");
        if rd.next_line()? != DB_HEADER {
            return Err(rd.err("unknown header"));
        }
        let keys: usize = rd.parse("keys")?;
        let mut db = Self::new();
        for _ in 0..keys {
            let f = rd.fields("key", 2)?;
            let stated: Digest = rd.parse_field(f[0])?;
            let count: usize = rd.parse_field(f[1])?;
            let mut entries = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                let f = rd.fields("e", 2)?;
                let bytes = hex::decode(f[0]).map_err(|e| rd.err(e))?;
                let nonce: [u8; CHALLENGE_BYTES] = bytes
                    .try_into()
                    .map_err(|_| rd.err("challenge is not 32 bytes"))?;
                entries.push(EnrollmentEntry {
                    challenge: Challenge { nonce },
                    response_digest: rd.parse_field(f[1])?,
                });
            }
            let record = EnrollmentRecord::from_entries(entries);
            if record.address != stated {
                return Err(rd.err(format!("address {stated} does not match its record")));
            }
            db.insert(record)?;
        }
        rd.finish()?;
        Ok(db)
    }
}

/// The device answering challenges.
#[derive(Debug, Clone)]
pub enum ClientDevice {
    /// A modem holding the key. A real challenge is answered wrongly with
    /// probability `noise_eps`; a decoy draws a spurious detection with
    /// probability `dark_count`.
    Genuine {
        key: PhotonicKeySim,
        noise_eps: f64,
        dark_count: f64,
    },
    /// No key. Claims a detection with probability `respond_prob` and, on a
    /// real challenge, names the right cell with probability `q`.
    Guesser { q: f64, respond_prob: f64 },
    /// No key, but the whole public record: always names the cell that is
    /// most frequent across the record.
    TableGuesser { record: EnrollmentRecord },
}

impl ClientDevice {
    /// A genuine modem whose scattered decoy light fires the detector as
    /// often as noise lands on one given cell: `noise_eps / RESPONSE_CELLS`.
    pub fn genuine(key: PhotonicKeySim, noise_eps: f64) -> Self {
        ClientDevice::Genuine {
            key,
            noise_eps,
            dark_count: noise_eps / f64::from(RESPONSE_CELLS),
        }
    }

    /// A spoofer answering every round.
    pub fn guesser(q: f64) -> Self {
        ClientDevice::Guesser {
            q,
            respond_prob: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        match self {
            ClientDevice::Genuine {
                noise_eps,
                dark_count,
                ..
            } if !prob(*noise_eps) || !prob(*dark_count) => Err(Error::domain(
                "noise_eps and dark_count must be probabilities",
            )),
            ClientDevice::Guesser { q, respond_prob } if !prob(*q) || !prob(*respond_prob) => {
                Err(Error::domain("q and respond_prob must be probabilities"))
            }
            _ => Ok(()),
        }
    }

    /// The claimed detection cell, `None` for a dark detector.
    fn respond(
        &self,
        issued: &IssuedChallenge,
        record: &EnrollmentRecord,
        rng: &mut RandomStream,
    ) -> Option<u8> {
        match self {
            ClientDevice::Genuine {
                key,
                noise_eps,
                dark_count,
            } => match key.focus(&issued.challenge) {
                Some(cell) if rng.random_bool(*noise_eps) => {
                    Some((cell + rng.random_range(1..RESPONSE_CELLS)) % RESPONSE_CELLS)
                }
                Some(cell) => Some(cell),
                None if rng.random_bool(*dark_count) => Some(rng.random_range(0..RESPONSE_CELLS)),
                None => None,
            },
            ClientDevice::Guesser { q, respond_prob } => {
                if !rng.random_bool(*respond_prob) {
                    return None;
                }
                // the guess is right with probability q on a real challenge
                let right = rng.random_bool(*q);
                let cell = issued.entry.map_or(0, |i| record.cells[i]);
                Some(if right {
                    cell
                } else {
                    (cell + rng.random_range(1..RESPONSE_CELLS)) % RESPONSE_CELLS
                })
            }
            ClientDevice::TableGuesser { record: known } => Some(most_frequent_cell(known)),
        }
    }
}

/// The cell an entry's digest commits to, found by trying every cell.
fn expected_cell(entry: &EnrollmentEntry) -> u8 {
    (0..RESPONSE_CELLS)
        .find(|&c| response_digest(&entry.challenge, c) == entry.response_digest)
        .unwrap_or(RESPONSE_CELLS)
}

fn most_frequent_cell(record: &EnrollmentRecord) -> u8 {
    let mut counts = [0usize; RESPONSE_CELLS as usize];
    for &c in &record.cells {
        if c < RESPONSE_CELLS {
            counts[c as usize] += 1;
        }
    }
    (0..RESPONSE_CELLS)
        .max_by_key(|&c| (counts[c as usize], std::cmp::Reverse(c)))
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuthParams {
    pub rounds: u32,
    pub p_decoy: f64,
    /// Smallest fraction of real rounds answered correctly.
    pub theta_acc: f64,
    /// Largest fraction of decoys that may draw a detection.
    pub theta_decoy: f64,
    pub min_rounds: u32,
    pub max_rounds: u32,
    /// Logical time of one interrogation round.
    pub round_ms: f64,
    /// Stop once acceptance has become impossible.
    pub early_abort: bool,
}

impl Default for AuthParams {
    fn default() -> Self {
        Self {
            rounds: 300,
            p_decoy: 0.2,
            theta_acc: 0.9,
            theta_decoy: 0.1,
            min_rounds: 200,
            max_rounds: 500,
            round_ms: 0.8,
            early_abort: true,
        }
    }
}

impl AuthParams {
    pub fn validate(&self) -> Result<()> {
        let open = |p: f64| p > 0.0 && p < 1.0;
        if !open(self.p_decoy) || !open(self.theta_acc) || !(0.0..1.0).contains(&self.theta_decoy) {
            return Err(Error::domain(
                "p_decoy and theta_acc must lie in (0, 1), theta_decoy in [0, 1)",
            ));
        }
        if !(self.min_rounds..=self.max_rounds).contains(&self.rounds) {
            return Err(Error::domain(format!(
                "rounds {} outside {}..={}",
                self.rounds, self.min_rounds, self.max_rounds
            )));
        }
        if !(self.round_ms.is_finite() && self.round_ms > 0.0) {
            return Err(Error::domain("round_ms must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuthSessionResult {
    pub address: Digest,
    /// Rounds actually interrogated.
    pub rounds: u32,
    pub real_rounds: u32,
    pub correct_real: u32,
    pub decoy_rounds: u32,
    pub responded_decoys: u32,
    pub accepted: bool,
    pub aborted_early: bool,
    pub elapsed_ms: f64,
}

impl AuthSessionResult {
    pub fn grant(&self) -> AuthGrant {
        AuthGrant {
            address: self.address,
            accepted: self.accepted,
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "address={} accepted={} rounds={} real={} correct_real={} decoys={} responded_decoys={} aborted_early={} elapsed_ms={}",
            self.address,
            self.accepted,
            self.rounds,
            self.real_rounds,
            self.correct_real,
            self.decoy_rounds,
            self.responded_decoys,
            self.aborted_early,
            fmt_sig(self.elapsed_ms, 6)
        )
    }
}

/// Interrogates `client` against the enrolled `record`.
///
/// Accepts iff at least `theta_acc` of real rounds were answered with the
/// enrolled cell and at most `theta_decoy` of decoys drew a detection.
pub fn authenticate(
    record: &EnrollmentRecord,
    client: &ClientDevice,
    params: &AuthParams,
    rng: &mut RandomStream,
) -> Result<AuthSessionResult> {
    params.validate()?;
    client.validate()?;
    let total = params.rounds;
    // failures beyond these budgets rule acceptance out whatever follows
    let fail_budget = (1.0 - params.theta_acc) * f64::from(total);
    let decoy_budget = params.theta_decoy * f64::from(total);
    let mut r = AuthSessionResult {
        address: record.address,
        rounds: 0,
        real_rounds: 0,
        correct_real: 0,
        decoy_rounds: 0,
        responded_decoys: 0,
        accepted: false,
        aborted_early: false,
        elapsed_ms: 0.0,
    };
    while r.rounds < total {
        let issued = record.issue(params.p_decoy, rng);
        let answer = client.respond(&issued, record, rng);
        r.rounds += 1;
        match issued.kind {
            ChallengeKind::Real => {
                r.real_rounds += 1;
                let expected = record.cells[issued.entry.expect("real entry")];
                if answer == Some(expected) {
                    r.correct_real += 1;
                }
            }
            ChallengeKind::Decoy => {
                r.decoy_rounds += 1;
                if answer.is_some() {
                    r.responded_decoys += 1;
                }
            }
        }
        let failed = r.real_rounds - r.correct_real;
        if params.early_abort
            && (f64::from(failed) > fail_budget || f64::from(r.responded_decoys) > decoy_budget)
        {
            r.aborted_early = true;
            break;
        }
    }
    r.elapsed_ms = f64::from(r.rounds) * params.round_ms;
    r.accepted = !r.aborted_early
        && r.real_rounds > 0
        && f64::from(r.correct_real) >= params.theta_acc * f64::from(r.real_rounds)
        && f64::from(r.responded_decoys) <= params.theta_decoy * f64::from(r.decoy_rounds);
    Ok(r)
}

/// `D(a || b)` between Bernoulli distributions, in nats.
pub fn bernoulli_kl(a: f64, b: f64) -> f64 {
    let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * (x / y).ln() };
    // rounding can dip a hair below zero near a == b
    (term(a, b) + term(1.0 - a, 1.0 - b)).max(0.0)
}

fn check_curve_domain(q: f64, theta_acc: f64) -> Result<()> {
    if !(0.0 < q && q < theta_acc && theta_acc < 1.0) {
        return Err(Error::domain("need 0 < q < theta_acc < 1"));
    }
    Ok(())
}

/// Chernoff bound `log10 P(accept)` for a keyless guesser over `real` real
/// rounds: `-real * D(theta_acc || q) / ln 10`.
pub fn log10_false_accept(q: f64, theta_acc: f64, real: u32) -> Result<f64> {
    check_curve_domain(q, theta_acc)?;
    Ok(-f64::from(real) * bernoulli_kl(theta_acc, q) / std::f64::consts::LN_10)
}

/// [`log10_false_accept`] over a range of real-round counts.
pub fn false_accept_curve(
    q: f64,
    theta_acc: f64,
    rounds: impl IntoIterator<Item = u32>,
) -> Result<Vec<(u32, f64)>> {
    check_curve_domain(q, theta_acc)?;
    rounds
        .into_iter()
        .map(|r| Ok((r, log10_false_accept(q, theta_acc, r)?)))
        .collect()
}

/// Fewest real rounds with false-accept bound at most `target`.
pub fn rounds_for_target(q: f64, theta_acc: f64, target: f64) -> Result<u32> {
    check_curve_domain(q, theta_acc)?;
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::domain("target must lie in (0, 1)"));
    }
    // the bound is exp(-r D), so the smallest r is a ceiling
    let r = (-target.ln() / bernoulli_kl(theta_acc, q)).ceil();
    u32::try_from(r as u64).map_err(|_| Error::domain("target needs too many rounds"))
}

/// Bound on `log10 P(accept)` for a whole session of `rounds` challenges with
/// decoy probability `p_decoy`: averaging the per-count bound over the
/// binomial number of real rounds gives `(p + (1-p) e^-D)^rounds`.
pub fn log10_session_false_accept(
    q: f64,
    theta_acc: f64,
    p_decoy: f64,
    rounds: u32,
) -> Result<f64> {
    check_curve_domain(q, theta_acc)?;
    let per = p_decoy + (1.0 - p_decoy) * (-bernoulli_kl(theta_acc, q)).exp();
    Ok(f64::from(rounds) * per.log10())
}
