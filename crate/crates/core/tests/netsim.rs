use std::collections::VecDeque;
use std::fs;

use qchain_core::chain::{audit_file, RuleSet};
use qchain_core::netsim::{
    gossip, run_scenario, Adversary, ScenarioConfig, Topology, TopologyKind, CHAIN_LOG, ROUNDS_CSV,
    SERVERS_CSV, SUMMARY_JSON,
};
use qchain_core::poe::VerifyRules;
use qchain_core::rng::random_stream;
use qchain_core::Error;

/// Small sessions keep each scenario to a fraction of a second.
fn base(seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig {
        seed,
        strategy_n: 3,
        ..ScenarioConfig::default()
    };
    c.session.rounds_per_setting = 300;
    c.auth.enrollment_entries = 400;
    c
}

/// Graph distances by breadth-first search with unit edges.
fn hops(t: &Topology, origin: usize) -> Vec<Option<u64>> {
    let mut dist = vec![None; t.nodes()];
    dist[origin] = Some(0);
    let mut q = VecDeque::from([origin]);
    while let Some(a) = q.pop_front() {
        for &(b, _) in t.neighbours(a) {
            if dist[b].is_none() {
                dist[b] = Some(dist[a].unwrap() + 1);
                q.push_back(b);
            }
        }
    }
    dist
}

#[test]
fn gossip_full_graph_delivers_next_tick() {
    let g = gossip(&Topology::full(8, 0), 3, 10);
    for (i, d) in g.delivered_at.iter().enumerate() {
        assert_eq!(*d, Some(if i == 3 { 10 } else { 11 }));
    }
    assert!(g.undelivered().is_empty());
}

#[test]
fn gossip_ring_of_six_takes_three_hops() {
    let g = gossip(&Topology::ring(6, 1), 0, 0);
    assert_eq!(g.settled_at(), 3);
    assert_eq!(
        g.delivered_at,
        vec![Some(0), Some(1), Some(2), Some(3), Some(2), Some(1)]
    );
}

#[test]
fn gossip_matches_bfs_on_random_graphs() {
    for seed in 0..40 {
        let mut rng = random_stream(seed, 5);
        let t = Topology::random(50, 0.05, 1, &mut rng);
        let g = gossip(&t, 0, 0);
        let oracle = hops(&t, 0);
        assert_eq!(g.delivered_at, oracle, "seed {seed}");
        let reachable = t.reachable(0).iter().filter(|&&r| r).count();
        assert_eq!(g.delivered_count(), reachable);
        assert_eq!(g.undelivered().len(), 50 - reachable);
    }
}

#[test]
fn gossip_respects_edge_delays() {
    let mut t = Topology::empty(4);
    t.connect(0, 1, 5);
    t.connect(1, 2, 2);
    t.connect(0, 2, 9);
    let g = gossip(&t, 0, 100);
    assert_eq!(g.delivered_at, vec![Some(100), Some(105), Some(107), None]);
    assert_eq!(g.undelivered(), vec![3]);
}

#[test]
fn all_honest_scenario_commits_every_round() {
    let dir = tempfile::tempdir().unwrap();
    let c = base(1);
    let m = run_scenario(&c, Some(dir.path())).unwrap();
    let s = &m.summary;
    assert_eq!(s.committed_blocks, 5);
    assert_eq!(s.chain_height, 5);
    assert!(s.chain_audit_clean);
    assert_eq!(s.stalled_rounds, 0);
    assert_eq!(s.adversarial_certificates, 0);
    assert_eq!(s.out_of_order_records, 0);
    assert_eq!(s.client_bits_leaked, 0);
    assert_eq!(s.max_memberships_per_key, 1);
    // 6 clients over 3 servers: teams of two, every session certifies
    assert_eq!(s.total_certificates, 30);
    let mut rules = RuleSet::new(0..3);
    rules.verify = VerifyRules::from(c.session);
    let report = audit_file(&dir.path().join(CHAIN_LOG), &rules).unwrap();
    assert!(report.is_clean());
    assert_eq!(m.transcripts.len(), 5);
}

#[test]
fn identical_configs_give_identical_files() {
    let mut c = base(42);
    c.rounds = 3;
    c.network.vote_jitter = 2;
    c.network.vote_loss = 0.1;
    c.adversaries = vec![Adversary::DishonestVoter { server: 0 }];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_scenario(&c, Some(a.path())).unwrap();
    run_scenario(&c, Some(b.path())).unwrap();
    for name in [ROUNDS_CSV, SERVERS_CSV, SUMMARY_JSON, CHAIN_LOG] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    for entry in fs::read_dir(a.path().join("transcripts")).unwrap() {
        let p = entry.unwrap().path();
        let other = b.path().join("transcripts").join(p.file_name().unwrap());
        assert_eq!(fs::read(&p).unwrap(), fs::read(other).unwrap());
    }
    // a different seed changes the chain
    c.seed = 43;
    let d = tempfile::tempdir().unwrap();
    run_scenario(&c, Some(d.path())).unwrap();
    assert_ne!(
        fs::read(a.path().join(CHAIN_LOG)).unwrap(),
        fs::read(d.path().join(CHAIN_LOG)).unwrap()
    );
}

#[test]
fn rerun_into_the_same_directory_replaces_the_chain() {
    let mut c = base(3);
    c.rounds = 2;
    let dir = tempfile::tempdir().unwrap();
    run_scenario(&c, Some(dir.path())).unwrap();
    let first = fs::read(dir.path().join(CHAIN_LOG)).unwrap();
    run_scenario(&c, Some(dir.path())).unwrap();
    assert_eq!(fs::read(dir.path().join(CHAIN_LOG)).unwrap(), first);
}

#[test]
fn fabricated_encodings_earn_nothing() {
    for seed in 0..5 {
        let mut c = base(100 + seed);
        c.adversaries = vec![Adversary::FabricatedEncodings { server: 1 }];
        let m = run_scenario(&c, None).unwrap();
        assert_eq!(m.summary.certificates_by_server[&1], 0, "seed {seed}");
        assert_eq!(m.summary.adversarial_certificates, 0);
        // the honest servers still carry the chain
        assert_eq!(m.summary.committed_blocks, 5);
        assert!(m.summary.final_reputation[&1] <= -8);
        assert!(m.summary.flagged_servers.contains(&1));
    }
}

#[test]
fn backward_signalling_needs_the_ordering_loophole() {
    let mut open = base(7);
    open.rounds = 2;
    open.servers = 1;
    open.clients = 2;
    open.subset_size = 1;
    open.session.flags.ordering = false;
    open.adversaries = vec![Adversary::BackwardSignalling { server: 0 }];
    let m = run_scenario(&open, None).unwrap();
    assert_eq!(m.summary.adversarial_certificates, 4);
    assert_eq!(m.summary.committed_blocks, 2);

    let mut closed = open.clone();
    closed.session.flags.ordering = true;
    let m = run_scenario(&closed, None).unwrap();
    assert_eq!(m.summary.adversarial_certificates, 0);
    assert_eq!(m.summary.committed_blocks, 0);
    assert_eq!(m.summary.ordering_violations, 4);
    assert_eq!(m.summary.out_of_order_records, 0);
}

#[test]
fn rng_secrecy_holds_unless_switched_off() {
    let mut c = base(8);
    c.rounds = 1;
    c.adversaries = vec![Adversary::SettingPrediction { server: 0 }];
    assert_eq!(
        run_scenario(&c, None).unwrap().summary.client_bits_leaked,
        0
    );
    c.session.flags.client_rng_secrecy = false;
    let m = run_scenario(&c, None).unwrap();
    assert!(m.summary.client_bits_leaked > 0);
    // knowing the settings in advance, the unentangled server certifies
    assert!(m.summary.adversarial_certificates > 0);
}

#[test]
fn sybil_key_never_holds_two_seats() {
    let mut c = base(9);
    c.adversaries = vec![Adversary::SybilClients {
        client: 0,
        count: 4,
    }];
    let m = run_scenario(&c, None).unwrap();
    assert_eq!(m.summary.max_memberships_per_key, 1);
    // 4 duplicate enrollments, then per round 4 unknown addresses and 4
    // refused seats
    assert_eq!(m.summary.sybil_rejections, 4 + 5 * 8);
    assert_eq!(m.summary.committed_blocks, 5);
}

#[test]
fn dishonest_voters_beyond_a_third_stall_consensus() {
    let mut c = base(10);
    c.rounds = 2;
    c.adversaries = vec![
        Adversary::DishonestVoter { server: 0 },
        Adversary::DishonestVoter { server: 1 },
    ];
    let m = run_scenario(&c, None).unwrap();
    // 2 of 3 voters invert: one honest approval against a threshold of 2
    assert_eq!(m.summary.committed_blocks, 0);
    assert_eq!(m.summary.stalled_rounds, 2);
    assert_eq!(m.summary.consensus_penalties, 6);
}

#[test]
fn dishonest_speaker_is_passed_over() {
    let mut c = base(11);
    c.adversaries = vec![Adversary::DishonestSpeaker { server: 0 }];
    let m = run_scenario(&c, None).unwrap();
    assert_eq!(m.summary.committed_blocks, 5);
    assert!(m.summary.chain_audit_clean);
    assert!(m.summary.final_reputation[&0] < 0);
}

#[test]
fn disconnected_clients_are_reported() {
    let mut c = base(12);
    c.rounds = 1;
    c.network.topology = TopologyKind::Random;
    c.network.edge_probability = 0.0;
    let m = run_scenario(&c, None).unwrap();
    assert_eq!(m.summary.undelivered, 18);
    assert_eq!(m.summary.idle_rounds, 1);
    assert_eq!(m.summary.committed_blocks, 0);
}

#[test]
fn ring_topology_delays_mining() {
    let mut c = base(13);
    c.rounds = 1;
    c.network.topology = TopologyKind::Ring;
    let m = run_scenario(&c, None).unwrap();
    // 9 nodes in a ring: the farthest is 4 hops away
    assert_eq!(m.rounds[0].mine_start, 4);
    assert_eq!(m.summary.committed_blocks, 1);
}

#[test]
fn config_errors_name_the_field() {
    let mut c = base(0);
    c.team_size = 30;
    match run_scenario(&c, None) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "team_size"),
        other => panic!("{other:?}"),
    }
    let e = ScenarioConfig::from_toml("seed = 1\nclients = 1\n").unwrap_err();
    assert!(e.to_string().contains("clients"), "{e}");
}

#[test]
fn csv_headers_are_versioned() {
    let mut c = base(14);
    c.rounds = 1;
    let m = run_scenario(&c, None).unwrap();
    assert!(m.rounds_csv().starts_with("v1_round,start_tick,"));
    assert!(m.servers_csv().starts_with("v1_round,server,behavior,"));
    assert_eq!(m.rounds_csv().lines().count(), 2);
    assert_eq!(m.servers_csv().lines().count(), 4);
    let v: serde_json::Value = serde_json::from_str(&m.summary_json()).unwrap();
    assert_eq!(v["committed_blocks"], 1);
}

/// Earliest arrival per node with hop cost `max(delay, 1)`, by Dijkstra.
fn earliest_arrival(t: &Topology, origin: usize, start: u64) -> Vec<Option<u64>> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let mut best = vec![None; t.nodes()];
    let mut heap = BinaryHeap::from([Reverse((start, origin))]);
    while let Some(Reverse((at, a))) = heap.pop() {
        if best[a].is_some() {
            continue;
        }
        best[a] = Some(at);
        for &(b, d) in t.neighbours(a) {
            if best[b].is_none() {
                heap.push(Reverse((at + d.max(1), b)));
            }
        }
    }
    best
}

proptest::proptest! {
    #[test]
    fn gossip_arrives_once_along_shortest_paths(
        nodes in 1usize..30,
        edges in proptest::collection::vec((0usize..30, 0usize..30, 0u64..6), 0..80),
        origin in 0usize..30,
        start in 0u64..1000,
    ) {
        let mut t = Topology::empty(nodes);
        for (a, b, d) in edges {
            let (a, b) = (a % nodes, b % nodes);
            if a != b {
                t.connect(a, b, d);
            }
        }
        let origin = origin % nodes;
        let g = gossip(&t, origin, start);
        proptest::prop_assert_eq!(&g.delivered_at, &earliest_arrival(&t, origin, start));
        // each node forwards exactly once, to every neighbour
        let forwarded: usize = (0..nodes)
            .filter(|&i| g.delivered_at[i].is_some())
            .map(|i| t.neighbours(i).len())
            .sum();
        proptest::prop_assert_eq!(g.messages, forwarded as u64);
    }
}
