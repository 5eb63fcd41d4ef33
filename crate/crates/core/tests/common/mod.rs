#![allow(dead_code)]

use qchain_core::chain::{build_candidate, CandidateBlock, Chain, MinedBlock, RULE_VERSION};
use qchain_core::poe::{
    mine_block, run_session, AuthGrant, MinerIdentity, MiningTeam, PoECertificate, ScoreRule,
    ServerBehavior, ServerHandle, SessionOutcome, SessionParams, Window,
};
use qchain_core::qstate::{LossModel, TwoQubitState};
use qchain_core::rng::random_stream;
use qchain_core::Digest;

pub fn miner(tag: &str, n: usize) -> MinerIdentity {
    MinerIdentity::new(Digest::of(tag.as_bytes()), n, LossModel::lossless())
}

pub fn grant(m: &MinerIdentity) -> AuthGrant {
    AuthGrant {
        address: m.physical_address,
        accepted: true,
    }
}

pub fn genesis(proposer: u64) -> CandidateBlock {
    build_candidate(
        &Chain::in_memory(),
        Digest::of(b"payload"),
        proposer,
        RULE_VERSION,
    )
}

pub fn small_params() -> SessionParams {
    SessionParams {
        rounds_per_setting: 400,
        ..SessionParams::default()
    }
}

pub fn server(behavior: ServerBehavior, mu: f64) -> ServerHandle {
    let source = TwoQubitState::new(mu, "werner").unwrap();
    ServerHandle::new(1, source, LossModel::lossless(), behavior)
}

/// Runs one session and returns its certificate; panics on a null event.
pub fn honest_certificate(n: usize, seed: u64) -> (PoECertificate, CandidateBlock) {
    let block = genesis(1);
    let mut s = server(ServerBehavior::Honest, 1.0);
    let m = miner("alice", n);
    let mut rng = random_stream(seed, 0);
    let run = run_session(
        &mut s,
        &m,
        &grant(&m),
        &block,
        &small_params(),
        Window::starting_at(0, 600_000),
        &mut rng,
    )
    .unwrap();
    match run.outcome {
        SessionOutcome::Certified(c) => (*c, block),
        SessionOutcome::Null(e) => panic!("honest session null: {e:?}"),
    }
}

use qchain_core::qstate::Outcome;
use qchain_core::steering::SettingTally;
use rand::Rng;

fn flip_outcome(o: Outcome) -> Outcome {
    // the two detected symbols differ in one bit of the encoding
    match o {
        Outcome::Null => Outcome::Plus,
        other => other.negated(),
    }
}

fn flip_u64(v: &mut u64, rng: &mut impl Rng) {
    *v ^= 1 << rng.random_range(0..64);
}

fn flip_f64(v: &mut f64, rng: &mut impl Rng) {
    *v = f64::from_bits(v.to_bits() ^ 1 << rng.random_range(0..64));
}

fn flip_tally(t: &mut SettingTally, rng: &mut impl Rng) {
    match rng.random_range(0..4) {
        0 => flip_u64(&mut t.records, rng),
        1 => flip_u64(&mut t.heralded, rng),
        2 => flip_u64(&mut t.correlated, rng),
        _ => flip_u64(&mut t.anticorrelated, rng),
    }
}

/// Flips one random bit of the transcript, the client randomness, the
/// report or the block hash. Returns the altered pair and where it struck.
pub fn tamper(
    cert: &PoECertificate,
    hash: &Digest,
    rng: &mut impl Rng,
) -> (PoECertificate, Digest, &'static str) {
    let mut c = cert.clone();
    let mut h = *hash;
    let site = match rng.random_range(0..4) {
        0 => {
            h = h.with_bit_flipped(rng.random_range(0..256));
            "block_hash"
        }
        1 => {
            let i = rng.random_range(0..c.qrng_transcript.len());
            c.qrng_transcript.flip(i);
            "qrng"
        }
        2 => {
            let i = rng.random_range(0..c.transcript.len());
            let r = &mut c.transcript[i];
            match rng.random_range(0..7) {
                0 => flip_u64(&mut r.round_index, rng),
                1 => r.setting_k ^= 1 << rng.random_range(0..usize::BITS),
                2 => r.client_outcome = flip_outcome(r.client_outcome),
                3 => r.server_announcement = flip_outcome(r.server_announcement),
                4 => flip_u64(&mut r.t_qubit_announce, rng),
                5 => flip_u64(&mut r.t_setting_declared, rng),
                _ => flip_u64(&mut r.t_server_announce, rng),
            }
            "record"
        }
        _ => {
            let r = &mut c.report;
            match rng.random_range(0..6) {
                0 => flip_f64(&mut r.eta, rng),
                1 => flip_f64(&mut r.s_n, rng),
                2 => flip_f64(&mut r.bound, rng),
                3 => flip_f64(&mut r.std_error, rng),
                4 => r.violated = !r.violated,
                _ => {
                    let k = rng.random_range(0..r.counts.len());
                    flip_tally(&mut r.counts[k], rng);
                }
            }
            "report"
        }
    };
    (c, h, site)
}

/// A block mined on `chain`'s head by an honest server with two miners.
pub fn mine_on(chain: &Chain, proposer: u64, payload: &[u8], seed: u64) -> MinedBlock {
    let block = build_candidate(chain, Digest::of(payload), proposer, RULE_VERSION);
    let members: Vec<_> = (0..2).map(|i| miner(&format!("c{seed}-{i}"), 2)).collect();
    let grants: Vec<_> = members.iter().map(grant).collect();
    let mut s = server(ServerBehavior::Honest, 1.0);
    s.id = proposer;
    let team = MiningTeam {
        members,
        server_id: proposer,
        window: Window::starting_at(0, 600_000),
    };
    let mut rng = random_stream(seed, 3);
    mine_block(
        &mut s,
        &team,
        &grants,
        &block,
        &small_params(),
        ScoreRule::CertificateCount,
        &mut rng,
    )
    .unwrap()
    .block
    .expect("honest team mines")
}
