use std::collections::VecDeque;

use rand::Rng;

use crate::netsim::queue::EventQueue;
use crate::RandomStream;

/// Undirected graph with a delay on every edge. A hop always costs at least
/// one tick, so a zero delay means "next tick".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adj: Vec<Vec<(usize, u64)>>,
}

impl Topology {
    pub fn empty(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
        }
    }

    pub fn full(nodes: usize, delay: u64) -> Self {
        let mut t = Self::empty(nodes);
        for a in 0..nodes {
            for b in a + 1..nodes {
                t.connect(a, b, delay);
            }
        }
        t
    }

    pub fn ring(nodes: usize, delay: u64) -> Self {
        let mut t = Self::empty(nodes);
        if nodes > 1 {
            for a in 0..nodes {
                let b = (a + 1) % nodes;
                if !t.adj[a].iter().any(|&(x, _)| x == b) {
                    t.connect(a, b, delay);
                }
            }
        }
        t
    }

    /// Each pair is linked with probability `p`.
    pub fn random(nodes: usize, p: f64, delay: u64, rng: &mut RandomStream) -> Self {
        let mut t = Self::empty(nodes);
        for a in 0..nodes {
            for b in a + 1..nodes {
                if rng.random_bool(p) {
                    t.connect(a, b, delay);
                }
            }
        }
        t
    }

    pub fn connect(&mut self, a: usize, b: usize, delay: u64) {
        assert!(a != b, "no self loops");
        self.adj[a].push((b, delay));
        self.adj[b].push((a, delay));
    }

    pub fn nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbours(&self, a: usize) -> &[(usize, u64)] {
        &self.adj[a]
    }

    /// Nodes reachable from `origin`, by breadth-first search.
    pub fn reachable(&self, origin: usize) -> Vec<bool> {
        let mut seen = vec![false; self.nodes()];
        let mut queue = VecDeque::from([origin]);
        seen[origin] = true;
        while let Some(a) = queue.pop_front() {
            for &(b, _) in &self.adj[a] {
                if !seen[b] {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
        seen
    }
}

/// When each node first heard a gossiped item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipSchedule {
    pub origin: usize,
    pub sent_at: u64,
    /// First delivery time per node; the origin holds it at `sent_at`.
    pub delivered_at: Vec<Option<u64>>,
    /// Messages put on the wire, duplicates included.
    pub messages: u64,
}

impl GossipSchedule {
    pub fn delivered_count(&self) -> usize {
        self.delivered_at.iter().filter(|d| d.is_some()).count()
    }

    pub fn undelivered(&self) -> Vec<usize> {
        (0..self.delivered_at.len())
            .filter(|&i| self.delivered_at[i].is_none())
            .collect()
    }

    /// Latest first delivery, or `sent_at` when nobody else heard it.
    pub fn settled_at(&self) -> u64 {
        self.delivered_at
            .iter()
            .flatten()
            .copied()
            .max()
            .unwrap_or(self.sent_at)
    }
}

/// Floods an item from `origin`: every node forwards it to all neighbours on
/// first receipt and ignores later copies.
pub fn gossip(topology: &Topology, origin: usize, sent_at: u64) -> GossipSchedule {
    let mut delivered_at = vec![None; topology.nodes()];
    delivered_at[origin] = Some(sent_at);
    let mut queue = EventQueue::new();
    let mut messages = 0;
    let forward = |queue: &mut EventQueue<()>, node: usize, at: u64, messages: &mut u64| {
        for &(b, d) in topology.neighbours(node) {
            queue.schedule(at + d.max(1), node, b, ());
            *messages += 1;
        }
    };
    forward(&mut queue, origin, sent_at, &mut messages);
    while let Some(ev) = queue.pop() {
        if delivered_at[ev.to].is_none() {
            delivered_at[ev.to] = Some(ev.at);
            forward(&mut queue, ev.to, ev.at, &mut messages);
        }
    }
    GossipSchedule {
        origin,
        sent_at,
        delivered_at,
        messages,
    }
}
