mod common;

use common::*;
use qchain_core::poe::{
    derive_input, mine_block, run_session, verify_poe, verify_poe_with, EnforcementFlags,
    MiningTeam, NullReason, PoECertificate, RejectReason, ScoreRule, ServerBehavior, SessionError,
    SessionOutcome, SessionParams, VerifyRules, Window,
};
use qchain_core::qstate::{LossModel, TwoQubitState};
use qchain_core::rng::random_stream;
use qchain_core::steering::{loss_tolerant_bound, make_strategy};
use qchain_core::Digest;

fn session(
    s: &mut qchain_core::poe::ServerHandle,
    n: usize,
    params: &SessionParams,
    seed: u64,
) -> Result<SessionOutcome, SessionError> {
    let m = miner("bob", n);
    let mut rng = random_stream(seed, 7);
    run_session(
        s,
        &m,
        &grant(&m),
        &genesis(1),
        params,
        Window::starting_at(0, 600_000),
        &mut rng,
    )
    .map(|r| r.outcome)
}

#[test]
fn honest_certificates_verify() {
    for n in [2, 3, 6] {
        let (cert, block) = honest_certificate(n, 11);
        assert!(cert.report.violated);
        assert_eq!(
            verify_poe(&cert, &block.block_hash()),
            qchain_core::poe::Verdict::Accepted
        );
        assert_eq!(cert.transcript.len(), 400 * n);
    }
}

#[test]
fn settings_rederive_from_transcript() {
    let (cert, block) = honest_certificate(6, 3);
    let hash = block.block_hash();
    for r in &cert.transcript {
        assert_eq!(
            derive_input(&cert.qrng_transcript, &hash, r.round_index, 6).unwrap(),
            r.setting_k
        );
        assert!(r.is_ordered());
    }
}

#[test]
fn replay_against_another_block_fails() {
    let (cert, _) = honest_certificate(3, 5);
    let other = Digest::of(b"another block");
    let verdict = verify_poe(&cert, &other);
    assert!(
        matches!(verdict.reason(), Some(RejectReason::SettingMismatch { .. })),
        "{verdict:?}"
    );
}

#[test]
fn unentangled_source_yields_null_event() {
    let mut s = server(ServerBehavior::Honest, 0.0);
    let out = session(&mut s, 3, &small_params(), 1).unwrap();
    let SessionOutcome::Null(e) = out else {
        panic!("certified a separable source")
    };
    assert_eq!(e.reason, NullReason::BoundNotViolated);
    assert_eq!(e.reputation_delta, -1);
    assert_eq!(s.reputation, -1);
}

#[test]
fn honest_sixteen_settings_over_one_kilometre() {
    // fiber-only loss on the server arm: eta = 10^-0.05
    let loss = LossModel::new(1.0, 0.5, 1.0, 1.0).unwrap();
    let mut s = qchain_core::poe::ServerHandle::honest(1, TwoQubitState::singlet(), loss);
    let params = SessionParams {
        rounds_per_setting: 625,
        ..SessionParams::default()
    };
    let out = session(&mut s, 16, &params, 21).unwrap();
    let cert = out.certificate().expect("certificate");
    assert_eq!(cert.transcript.len(), 10_000);
    assert!(
        (cert.report.eta - 10f64.powf(-0.05)).abs() < 0.02,
        "{}",
        cert.report.eta
    );
    let strategy = make_strategy(16).unwrap();
    assert!(loss_tolerant_bound(&strategy, 0.89).unwrap() < 1.0);
    assert!(cert.report.violated);
    assert!(verify_poe(cert, &genesis(1).block_hash()).is_accepted());
}

#[test]
fn single_bit_tampers_are_rejected() {
    let (cert, block) = honest_certificate(3, 8);
    let hash = block.block_hash();
    let mut rng = random_stream(99, 0);
    for _ in 0..300 {
        let (c, h, site) = tamper(&cert, &hash, &mut rng);
        assert!(
            !verify_poe(&c, &h).is_accepted(),
            "tamper of {site} accepted"
        );
    }
}

#[test]
fn certificate_text_round_trips_and_detects_edits() {
    let (cert, _) = honest_certificate(2, 4);
    let text = cert.to_text();
    assert_eq!(PoECertificate::from_text(&text).unwrap(), cert);
    let mut rng = random_stream(5, 0);
    let bytes = text.as_bytes();
    for _ in 0..200 {
        let mut b = bytes.to_vec();
        let i = rand::Rng::random_range(&mut rng, 0..b.len());
        b[i] ^= 1 << rand::Rng::random_range(&mut rng, 0..8);
        let parsed = String::from_utf8(b)
            .ok()
            .and_then(|t| PoECertificate::from_text(&t).ok());
        assert!(parsed.is_none(), "edited byte {i} parsed");
    }
}

#[test]
fn backward_signalling_needs_the_ordering_loophole() {
    let open = SessionParams {
        flags: EnforcementFlags {
            ordering: false,
            ..EnforcementFlags::default()
        },
        ..small_params()
    };
    let mut s = server(ServerBehavior::BackwardSignalling, 0.0);
    let out = session(&mut s, 3, &open, 2).unwrap();
    let cert = out.certificate().expect("loophole open");
    assert_eq!(cert.report.s_n, 1.0);
    assert!(cert.transcript.iter().all(|r| !r.is_ordered()));
    let hash = genesis(1).block_hash();
    assert!(verify_poe_with(cert, &hash, &VerifyRules::from(open)).is_accepted());
    assert!(matches!(
        verify_poe(cert, &hash).reason(),
        Some(RejectReason::OrderingViolation { round: 0 })
    ));

    let mut s = server(ServerBehavior::BackwardSignalling, 0.0);
    let err = session(&mut s, 3, &small_params(), 2).unwrap_err();
    assert_eq!(
        err,
        SessionError::OrderingViolation {
            server_id: 1,
            round_index: 0
        }
    );
    assert_eq!(s.ordering_violations, 1);
}

#[test]
fn setting_prediction_needs_a_randomness_loophole() {
    let with = |flags: EnforcementFlags| SessionParams {
        flags,
        ..small_params()
    };
    let mut s = server(ServerBehavior::SettingPrediction, 0.0);
    assert!(session(&mut s, 3, &with(EnforcementFlags::default()), 4)
        .unwrap()
        .certificate()
        .is_none());
    assert_eq!(s.client_bits_seen, 0);

    let leaky = EnforcementFlags {
        client_rng_secrecy: false,
        ..EnforcementFlags::default()
    };
    let mut s = server(ServerBehavior::SettingPrediction, 0.0);
    let out = session(&mut s, 3, &with(leaky), 4).unwrap();
    assert_eq!(out.certificate().expect("bits leaked").report.s_n, 1.0);
    assert!(s.client_bits_seen > 0);

    let stale = EnforcementFlags {
        fresh_setting_per_round: false,
        ..EnforcementFlags::default()
    };
    let mut s = server(ServerBehavior::SettingPrediction, 0.0);
    let out = session(&mut s, 3, &with(stale), 4).unwrap();
    assert_eq!(
        out.certificate().expect("settings predictable").report.s_n,
        1.0
    );
    assert_eq!(s.client_bits_seen, 0);
}

#[test]
fn false_heralds_never_certify() {
    for seed in 0..20 {
        let mut s = server(ServerBehavior::FalseHeralds { eta: 0.5 }, 0.0);
        let out = session(&mut s, 3, &small_params(), seed).unwrap();
        assert!(out.certificate().is_none(), "seed {seed}");
    }
}

#[test]
fn unauthenticated_miner_is_refused() {
    let mut s = server(ServerBehavior::Honest, 1.0);
    let m = miner("mallory", 3);
    let mut g = grant(&m);
    g.accepted = false;
    let mut rng = random_stream(0, 0);
    let err = run_session(
        &mut s,
        &m,
        &g,
        &genesis(1),
        &small_params(),
        Window::starting_at(0, 10),
        &mut rng,
    );
    assert_eq!(
        err.unwrap_err(),
        SessionError::NotAuthenticated(m.physical_address)
    );
}

#[test]
fn short_window_expires() {
    let mut s = server(ServerBehavior::Honest, 1.0);
    let m = miner("carol", 3);
    let mut rng = random_stream(0, 0);
    let run = run_session(
        &mut s,
        &m,
        &grant(&m),
        &genesis(1),
        &small_params(),
        Window::starting_at(0, 300),
        &mut rng,
    )
    .unwrap();
    let SessionOutcome::Null(e) = run.outcome else {
        panic!()
    };
    assert_eq!(e.reason, NullReason::WindowExpired);
    assert_eq!(run.end_tick, 300);
}

#[test]
fn three_nulls_flag_the_server() {
    let mut s = server(ServerBehavior::Honest, 0.0);
    for seed in 0..3 {
        assert!(!s.flagged_for_maintenance);
        session(&mut s, 2, &small_params(), seed).unwrap();
    }
    assert!(s.flagged_for_maintenance);
    assert_eq!(s.reputation, -3);
}

#[test]
fn sessions_are_deterministic() {
    let (a, _) = honest_certificate(4, 17);
    let (b, _) = honest_certificate(4, 17);
    assert_eq!(a.to_text(), b.to_text());
    let (c, _) = honest_certificate(4, 18);
    assert_ne!(a.to_text(), c.to_text());
}

fn team(members: Vec<qchain_core::poe::MinerIdentity>) -> MiningTeam {
    MiningTeam {
        members,
        server_id: 1,
        window: Window::starting_at(0, 600_000),
    }
}

#[test]
fn five_honest_miners_score_five() {
    let members: Vec<_> = (0..5).map(|i| miner(&format!("m{i}"), 3)).collect();
    let grants: Vec<_> = members.iter().map(grant).collect();
    let mut s = server(ServerBehavior::Honest, 1.0);
    let mut rng = random_stream(1, 1);
    let report = mine_block(
        &mut s,
        &team(members),
        &grants,
        &genesis(1),
        &small_params(),
        ScoreRule::CertificateCount,
        &mut rng,
    )
    .unwrap();
    let mined = report.block.expect("mined");
    assert_eq!(mined.mining_score, 5);
    assert_eq!(mined.certificates.len(), 5);
    assert!(report.null_events.is_empty());
    for c in &mined.certificates {
        assert!(verify_poe(c, &mined.block_hash()).is_accepted());
    }
}

#[test]
fn dead_channel_costs_one_certificate() {
    let mut members: Vec<_> = (0..3).map(|i| miner(&format!("d{i}"), 3)).collect();
    // the dead link never detects, so its session runs out the window; it
    // goes last to leave the others their time
    members[2].link = LossModel::with_transmission(0.0).unwrap();
    let grants: Vec<_> = members.iter().map(grant).collect();
    let mut s = server(ServerBehavior::Honest, 1.0);
    let mut rng = random_stream(2, 1);
    let report = mine_block(
        &mut s,
        &team(members),
        &grants,
        &genesis(1),
        &small_params(),
        ScoreRule::CertificateCount,
        &mut rng,
    )
    .unwrap();
    assert_eq!(report.block.unwrap().mining_score, 2);
    assert_eq!(report.null_events.len(), 1);
    assert_eq!(report.null_events[0].reason, NullReason::WindowExpired);
}

#[test]
fn duplicate_addresses_reject_the_team() {
    let m = miner("twin", 3);
    let mut s = server(ServerBehavior::Honest, 1.0);
    let mut rng = random_stream(0, 0);
    let err = mine_block(
        &mut s,
        &team(vec![m.clone(), m.clone()]),
        &[grant(&m)],
        &genesis(1),
        &small_params(),
        ScoreRule::CertificateCount,
        &mut rng,
    );
    assert!(matches!(err, Err(qchain_core::Error::Duplicate(_))));
    assert!(team(vec![m.clone()]).validate().is_err());
    assert_eq!(s.reputation, 0);
}

#[test]
fn margin_score_rule() {
    let (cert, _) = honest_certificate(3, 2);
    let expect = (cert.report.margin() * 1e6).floor() as u64;
    assert_eq!(
        ScoreRule::MarginMicros.score(std::slice::from_ref(&cert)),
        expect
    );
    assert_eq!(ScoreRule::CertificateCount.score(&[cert]), 1);
}
