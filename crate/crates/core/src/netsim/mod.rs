//! Deterministic discrete-event harness: a logical clock, candidate-block
//! gossip, team formation, client authentication, mining and consensus for a
//! configured number of block rounds, with scripted adversaries.
//!
//! Every random draw comes from streams forked off the scenario seed in a
//! fixed order, so a configuration determines its metrics and chain file
//! byte for byte.

mod config;
mod gossip;
mod metrics;
mod queue;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::chain::{build_candidate, Chain, MinedBlock, RuleSet, RULE_VERSION};
use crate::consensus::{
    elect_winners, run_consensus, ConsensusBehavior, ConsensusResult, ServerRecord, VoteNetwork,
};
use crate::digest::Digest;
use crate::error::Result;
use crate::poe::{
    mine_block, MinerIdentity, MiningTeam, ServerBehavior, ServerHandle, VerifyRules, Window,
    MIN_TEAM,
};
use crate::qsa::{authenticate, ClientDevice, EnrollmentDb, PhotonicKeySim};
use crate::qstate::TwoQubitState;
use crate::rng::{fork, random_stream};
use crate::RandomStream;

pub use config::{
    Adversary, AuthConfig, NetworkConfig, ScenarioConfig, TopologyKind, SCHEMA_VERSION,
};
pub use gossip::{gossip, GossipSchedule, Topology};
pub use metrics::{
    RoundMetrics, ScenarioMetrics, ScenarioSummary, ServerRoundMetrics, CHAIN_LOG, CSV_SCHEMA,
    ROUNDS_CSV, SERVERS_CSV, SUMMARY_JSON, TRANSCRIPT_DIR,
};
pub use queue::{EventQueue, NetEvent};

/// A vote that never arrives.
const LOST: u64 = u64::MAX;

struct Client {
    key: PhotonicKeySim,
    address: Digest,
    /// Extra identities a Sybil client tries to pass off as miners.
    sybil: usize,
}

/// Payload digest of server `s`'s candidate in `round`.
fn payload_for(seed: u64, round: u64, server: usize) -> Digest {
    Digest::of_parts(&[
        b"scenario-payload",
        &seed.to_be_bytes(),
        &round.to_be_bytes(),
        &(server as u64).to_be_bytes(),
    ])
}

fn build_topology(config: &ScenarioConfig, rng: &mut RandomStream) -> Topology {
    let nodes = config.servers + config.clients;
    let net = &config.network;
    match net.topology {
        TopologyKind::Full => Topology::full(nodes, net.edge_delay),
        TopologyKind::Ring => Topology::ring(nodes, net.edge_delay),
        TopologyKind::Random => Topology::random(nodes, net.edge_probability, net.edge_delay, rng),
    }
}

fn vote_delays(
    config: &ScenarioConfig,
    subset: &[u64],
    rng: &mut RandomStream,
) -> BTreeMap<(u32, u64), u64> {
    let net = &config.network;
    let mut delays = BTreeMap::new();
    for attempt in 0..subset.len() as u32 {
        for &voter in subset {
            let lost = net.vote_loss > 0.0 && rng.random_bool(net.vote_loss);
            let jitter = if net.vote_jitter > 0 {
                rng.random_range(0..=net.vote_jitter)
            } else {
                0
            };
            let d = if lost {
                LOST
            } else {
                net.vote_delay.saturating_add(jitter)
            };
            delays.insert((attempt, voter), d);
        }
    }
    delays
}

fn behaviour_label(handle: &ServerHandle, record: &ServerRecord) -> String {
    let voting = match record.behavior {
        ConsensusBehavior::Honest => return handle.behavior.label().to_string(),
        ConsensusBehavior::DishonestSpeaker => "dishonest_speaker",
        ConsensusBehavior::DishonestVoter => "dishonest_voter",
    };
    match handle.behavior {
        ServerBehavior::Honest => voting.to_string(),
        ref b => format!("{}+{voting}", b.label()),
    }
}

/// Runs `config` and, when `out_dir` is given, writes the metrics, the
/// consensus transcripts and the chain log there. An existing chain log in
/// `out_dir` is replaced.
pub fn run_scenario(config: &ScenarioConfig, out_dir: Option<&Path>) -> Result<ScenarioMetrics> {
    config.validate()?;
    let servers_n = config.servers;
    let mut master = random_stream(config.seed, 0);

    // enrollment: one key per client, Sybils try to enroll theirs again
    let mut db = EnrollmentDb::new();
    let mut clients = Vec::with_capacity(config.clients);
    let mut key_rng = fork(&mut master);
    for _ in 0..config.clients {
        let key = PhotonicKeySim::generate(&mut key_rng);
        let address = db.enroll(&key, config.auth.enrollment_entries)?;
        clients.push(Client {
            key,
            address,
            sybil: 0,
        });
    }
    let mut sybil_rejections = 0u64;
    for a in &config.adversaries {
        if let Adversary::SybilClients { client, count } = *a {
            let c = &mut clients[client];
            c.sybil = count;
            for _ in 0..count {
                if db.enroll(&c.key, config.auth.enrollment_entries).is_err() {
                    sybil_rejections += 1;
                }
            }
        }
    }

    let source = TwoQubitState::new(config.werner_mu, "scenario source")?;
    let mut handles: Vec<ServerHandle> = (0..servers_n)
        .map(|s| ServerHandle::honest(s as u64, source.clone(), config.server_loss))
        .collect();
    let mut records: BTreeMap<u64, ServerRecord> = (0..servers_n as u64)
        .map(|s| (s, ServerRecord::new(s, ConsensusBehavior::Honest)))
        .collect();
    for a in &config.adversaries {
        let Some(s) = a.server() else { continue };
        let mining = match *a {
            Adversary::FalseHeralds { eta, .. } => Some(ServerBehavior::FalseHeralds { eta }),
            Adversary::FabricatedEncodings { .. } => {
                Some(ServerBehavior::FabricatedEncodings(None))
            }
            Adversary::BackwardSignalling { .. } => Some(ServerBehavior::BackwardSignalling),
            Adversary::SettingPrediction { .. } => Some(ServerBehavior::SettingPrediction),
            _ => None,
        };
        match (mining, *a) {
            (Some(b), _) => handles[s].behavior = b,
            (None, Adversary::DishonestSpeaker { .. }) => {
                records.insert(
                    s as u64,
                    ServerRecord::new(s as u64, ConsensusBehavior::DishonestSpeaker),
                );
            }
            (None, _) => {
                records.insert(
                    s as u64,
                    ServerRecord::new(s as u64, ConsensusBehavior::DishonestVoter),
                );
            }
        }
    }
    let cheats_at_mining: Vec<bool> = handles
        .iter()
        .map(|h| !matches!(h.behavior, ServerBehavior::Honest))
        .collect();

    let topology = build_topology(config, &mut fork(&mut master));
    let mut rules = RuleSet::new(0..servers_n as u64);
    rules.verify = VerifyRules::from(config.session);
    rules.score_rule = config.score_rule;

    let mut chain = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(CHAIN_LOG);
            if path.exists() {
                fs::remove_file(&path)?;
            }
            Chain::open(path)?
        }
        None => Chain::in_memory(),
    };

    let auth_params = config.auth.params();
    let mut rounds = Vec::new();
    let mut server_rows = Vec::new();
    let mut transcripts = Vec::new();
    let mut clock = 0u64;
    let mut total = Totals {
        sybil_rejections,
        ..Totals::default()
    };
    let mut certificates_by_server: BTreeMap<u64, u64> =
        (0..servers_n as u64).map(|s| (s, 0)).collect();

    for round in 0..config.rounds {
        let start_tick = clock;
        let candidates: Vec<_> = (0..servers_n)
            .map(|s| {
                build_candidate(
                    &chain,
                    payload_for(config.seed, round, s),
                    s as u64,
                    RULE_VERSION,
                )
            })
            .collect();

        // every server gossips its candidate to the whole network at once
        let schedules: Vec<GossipSchedule> = (0..servers_n)
            .map(|s| gossip(&topology, s, start_tick))
            .collect();
        let client_node = |j: usize| servers_n + j;
        let mut delivered = 0u64;
        let mut undelivered = 0u64;
        for g in &schedules {
            for j in 0..config.clients {
                if g.delivered_at[client_node(j)].is_some() {
                    delivered += 1;
                } else {
                    undelivered += 1;
                }
            }
        }
        let mine_start = schedules
            .iter()
            .map(GossipSchedule::settled_at)
            .max()
            .unwrap_or(start_tick);

        // teams: a client joins the server it rotates onto this round, if it
        // heard that server's candidate; one membership per address
        let mut teams: Vec<Vec<usize>> = vec![Vec::new(); servers_n];
        let mut members: BTreeSet<Digest> = BTreeSet::new();
        let mut key_memberships: BTreeMap<usize, u64> = BTreeMap::new();
        let mut round_sybil = 0u64;
        for (j, c) in clients.iter().enumerate() {
            let home = (j + round as usize) % servers_n;
            if schedules[home].delivered_at[client_node(j)].is_some()
                && teams[home].len() < config.team_size
                && members.insert(c.address)
            {
                teams[home].push(j);
                *key_memberships.entry(j).or_insert(0) += 1;
            }
            for i in 0..c.sybil {
                // a fabricated address has no enrollment record to
                // authenticate against
                let fake =
                    Digest::of_parts(&[b"sybil", c.address.as_bytes(), &(i as u64).to_be_bytes()]);
                if db.get(&fake).is_none() {
                    round_sybil += 1;
                }
                // a further seat under the enrolled address passes only if
                // the key holds no seat yet
                let target = (home + 1 + i) % servers_n;
                if schedules[target].delivered_at[client_node(j)].is_some()
                    && teams[target].len() < config.team_size
                {
                    if members.insert(c.address) {
                        teams[target].push(j);
                        *key_memberships.entry(j).or_insert(0) += 1;
                    } else {
                        round_sybil += 1;
                    }
                }
            }
        }
        total.sybil_rejections += round_sybil;
        total.max_memberships_per_key = total
            .max_memberships_per_key
            .max(key_memberships.values().copied().max().unwrap_or(0));

        // authentication and mining, every server inside the same window
        let mut scores: BTreeMap<u64, u64> = BTreeMap::new();
        let mut mined: BTreeMap<u64, MinedBlock> = BTreeMap::new();
        let mut row = RoundMetrics {
            round,
            start_tick,
            mine_start,
            delivered,
            undelivered,
            team_members: 0,
            auth_failures: 0,
            certificates: 0,
            null_events: 0,
            aborted_sessions: 0,
            sybil_rejections: round_sybil,
            winners: 0,
            attempts: 0,
            committed: false,
            height: chain.len() as u64,
            head_hash: String::new(),
        };
        let mut per_server = Vec::with_capacity(servers_n);
        for s in 0..servers_n {
            let mut rng = fork(&mut master);
            let team = &teams[s];
            let mut certs = 0u64;
            let mut nulls = 0u64;
            if team.len() >= MIN_TEAM {
                row.team_members += team.len() as u64;
                let mut grants = Vec::with_capacity(team.len());
                let mut identities = Vec::with_capacity(team.len());
                for &j in team {
                    let c = &clients[j];
                    let record = db.get(&c.address).expect("every client is enrolled");
                    let device = ClientDevice::genuine(c.key.clone(), config.auth.noise_eps);
                    let result = authenticate(record, &device, &auth_params, &mut rng)?;
                    if !result.accepted {
                        row.auth_failures += 1;
                    }
                    grants.push(result.grant());
                    identities.push(MinerIdentity::new(
                        c.address,
                        config.strategy_n,
                        config.client_link,
                    ));
                }
                let team = MiningTeam {
                    members: identities,
                    server_id: s as u64,
                    window: Window::starting_at(mine_start, config.session.window_events),
                };
                let report = mine_block(
                    &mut handles[s],
                    &team,
                    &grants,
                    &candidates[s],
                    &config.session,
                    config.score_rule,
                    &mut rng,
                )?;
                nulls = report.null_events.len() as u64;
                row.aborted_sessions += report.aborted.len() as u64;
                if let Some(block) = report.block {
                    certs = block.certificates.len() as u64;
                    for c in &block.certificates {
                        total.out_of_order_records +=
                            c.transcript.iter().filter(|r| !r.is_ordered()).count() as u64;
                    }
                    scores.insert(s as u64, block.mining_score);
                    mined.insert(s as u64, block);
                }
            }
            scores.entry(s as u64).or_insert(0);
            row.certificates += certs;
            row.null_events += nulls;
            *certificates_by_server
                .get_mut(&(s as u64))
                .expect("all servers") += certs;
            if cheats_at_mining[s] {
                total.adversarial_certificates += certs;
            }
            per_server.push((team.len() as u64, certs, nulls));
        }

        // consensus among the winners
        for (id, r) in records.iter_mut() {
            r.reputation = handles[*id as usize].reputation;
        }
        let reputation: BTreeMap<u64, i64> =
            records.iter().map(|(&id, r)| (id, r.reputation)).collect();
        let winners = elect_winners(&scores, &reputation, config.subset_size)?;
        let mut vote_rng = fork(&mut master);
        row.winners = winners.len() as u64;
        let mut consensus_ticks = 0;
        if winners.is_empty() {
            total.idle_rounds += 1;
        } else {
            let nominations: Vec<MinedBlock> = winners.iter().map(|w| mined[w].clone()).collect();
            let network = VoteNetwork {
                timeout: config.network.vote_timeout,
                delays: vote_delays(config, &winners, &mut vote_rng),
            };
            let t = run_consensus(
                &winners,
                &mut records,
                &nominations,
                &mut chain,
                &rules,
                &network,
            )?;
            row.attempts = t.rounds.len() as u64;
            consensus_ticks = row.attempts * (config.network.vote_timeout + 1);
            match t.result {
                ConsensusResult::Committed { .. } => {
                    row.committed = true;
                    total.committed += 1;
                }
                ConsensusResult::Stalled => total.stalled += 1,
            }
            total.penalties += t
                .reputation_deltas
                .values()
                .map(|d| d.unsigned_abs())
                .sum::<u64>();
            transcripts.push((round, t));
        }
        for (id, r) in &records {
            handles[*id as usize].reputation = r.reputation;
        }
        row.height = chain.len() as u64;
        row.head_hash = chain.head_hash().to_hex();
        for (s, (team, certs, nulls)) in per_server.into_iter().enumerate() {
            let h = &handles[s];
            server_rows.push(ServerRoundMetrics {
                round,
                server: s as u64,
                behavior: behaviour_label(h, &records[&(s as u64)]),
                team,
                certificates: certs,
                null_events: nulls,
                score: scores[&(s as u64)],
                reputation: h.reputation,
                flagged: h.flagged_for_maintenance,
            });
        }
        total.certificates += row.certificates;
        total.null_events += row.null_events;
        total.undelivered += row.undelivered;
        rounds.push(row);
        clock = mine_start
            .saturating_add(config.session.window_events)
            .saturating_add(consensus_ticks);
    }

    let audit_clean = chain.audit(&rules).is_clean();
    let summary = ScenarioSummary {
        schema_version: SCHEMA_VERSION,
        seed: config.seed,
        rounds: config.rounds,
        committed_blocks: total.committed,
        stalled_rounds: total.stalled,
        idle_rounds: total.idle_rounds,
        chain_height: chain.len() as u64,
        head_hash: chain.head_hash().to_hex(),
        chain_audit_clean: audit_clean,
        total_certificates: total.certificates,
        adversarial_certificates: total.adversarial_certificates,
        certificates_by_server,
        null_events: total.null_events,
        ordering_violations: handles.iter().map(|h| h.ordering_violations).sum(),
        out_of_order_records: total.out_of_order_records,
        client_bits_leaked: handles.iter().map(|h| h.client_bits_seen).sum(),
        sybil_rejections: total.sybil_rejections,
        max_memberships_per_key: total.max_memberships_per_key,
        undelivered: total.undelivered,
        consensus_penalties: total.penalties,
        final_reputation: handles.iter().map(|h| (h.id, h.reputation)).collect(),
        flagged_servers: handles
            .iter()
            .filter(|h| h.flagged_for_maintenance)
            .map(|h| h.id)
            .collect(),
    };
    let metrics = ScenarioMetrics {
        rounds,
        servers: server_rows,
        summary,
        transcripts,
    };
    if let Some(dir) = out_dir {
        metrics.write(dir)?;
    }
    Ok(metrics)
}

#[derive(Default)]
struct Totals {
    committed: u64,
    stalled: u64,
    idle_rounds: u64,
    certificates: u64,
    adversarial_certificates: u64,
    null_events: u64,
    out_of_order_records: u64,
    sybil_rejections: u64,
    max_memberships_per_key: u64,
    undelivered: u64,
    penalties: u64,
}
