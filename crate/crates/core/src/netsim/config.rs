use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poe::{ScoreRule, SessionParams, MAX_TEAM, MIN_TEAM};
use crate::qsa::AuthParams;
use crate::qstate::LossModel;
use crate::steering::SUPPORTED_N;

pub const SCHEMA_VERSION: u32 = 1;

/// A scenario file. Every field but `seed` has a default; unknown keys are
/// errors so a typo cannot silently fall back to a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Blocks to attempt.
    pub rounds: u64,
    pub servers: usize,
    pub clients: usize,
    /// Largest team per server and round.
    pub team_size: usize,
    /// Winners taking part in each consensus round.
    pub subset_size: usize,
    pub strategy_n: usize,
    /// Werner parameter of every server's source.
    pub werner_mu: f64,
    /// The server's own detection, which sets the heralding efficiency.
    pub server_loss: LossModel,
    /// Fiber and detector of every client.
    pub client_link: LossModel,
    pub score_rule: ScoreRule,
    pub session: SessionParams,
    pub auth: AuthConfig,
    pub network: NetworkConfig,
    pub adversaries: Vec<Adversary>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            rounds: 5,
            servers: 3,
            clients: 6,
            team_size: MAX_TEAM,
            subset_size: 3,
            strategy_n: 16,
            werner_mu: 1.0,
            server_loss: LossModel::with_transmission(0.8).expect("valid"),
            client_link: LossModel::lossless(),
            score_rule: ScoreRule::default(),
            session: SessionParams::default(),
            auth: AuthConfig::default(),
            network: NetworkConfig::default(),
            adversaries: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthConfig {
    pub rounds: u32,
    pub p_decoy: f64,
    pub theta_acc: f64,
    pub theta_decoy: f64,
    /// Error rate of a genuine modem on real challenges.
    pub noise_eps: f64,
    /// Challenge/response pairs enrolled per key.
    pub enrollment_entries: usize,
}

impl Default for AuthConfig {
    fn default() -> Self {
        let p = AuthParams::default();
        Self {
            rounds: p.rounds,
            p_decoy: p.p_decoy,
            theta_acc: p.theta_acc,
            theta_decoy: p.theta_decoy,
            noise_eps: 0.02,
            enrollment_entries: 2000,
        }
    }
}

impl AuthConfig {
    pub fn params(&self) -> AuthParams {
        AuthParams {
            rounds: self.rounds,
            p_decoy: self.p_decoy,
            theta_acc: self.theta_acc,
            theta_decoy: self.theta_decoy,
            ..AuthParams::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Full,
    Ring,
    /// Each node pair linked with `edge_probability`.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Gossip graph over servers and clients.
    pub topology: TopologyKind,
    pub edge_probability: f64,
    pub edge_delay: u64,
    /// Ticks a consensus attempt waits for votes.
    pub vote_timeout: u64,
    pub vote_delay: u64,
    /// Extra delay drawn uniformly from `0..=vote_jitter` per vote.
    pub vote_jitter: u64,
    /// Probability that a vote never arrives.
    pub vote_loss: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            topology: TopologyKind::Full,
            edge_probability: 0.5,
            edge_delay: 1,
            vote_timeout: 2,
            vote_delay: 1,
            vote_jitter: 0,
            vote_loss: 0.0,
        }
    }
}

/// A scripted adversary and the node it controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Adversary {
    FalseHeralds {
        server: usize,
        eta: f64,
    },
    /// Unentangled qubits from a fresh random mixture every session.
    FabricatedEncodings {
        server: usize,
    },
    BackwardSignalling {
        server: usize,
    },
    SettingPrediction {
        server: usize,
    },
    /// A client holding one key that tries to act as `count` more miners.
    SybilClients {
        client: usize,
        count: usize,
    },
    DishonestSpeaker {
        server: usize,
    },
    DishonestVoter {
        server: usize,
    },
}

impl Adversary {
    pub fn server(&self) -> Option<usize> {
        match *self {
            Adversary::FalseHeralds { server, .. }
            | Adversary::FabricatedEncodings { server }
            | Adversary::BackwardSignalling { server }
            | Adversary::SettingPrediction { server }
            | Adversary::DishonestSpeaker { server }
            | Adversary::DishonestVoter { server } => Some(server),
            Adversary::SybilClients { .. } => None,
        }
    }

    /// Mining and voting misbehaviour are independent; a server may hold one
    /// of each.
    fn is_mining(&self) -> bool {
        matches!(
            self,
            Adversary::FalseHeralds { .. }
                | Adversary::FabricatedEncodings { .. }
                | Adversary::BackwardSignalling { .. }
                | Adversary::SettingPrediction { .. }
        )
    }
}

fn check(ok: bool, field: &str, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, message))
    }
}

fn prob(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            Error::config("scenario", message)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs serialize")
    }

    pub fn validate(&self) -> Result<()> {
        check(
            self.schema_version == SCHEMA_VERSION,
            "schema_version",
            format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
        )?;
        check(self.rounds >= 1, "rounds", "must be at least 1")?;
        check(self.servers >= 1, "servers", "must be at least 1")?;
        check(
            self.clients >= MIN_TEAM,
            "clients",
            format!("need at least {MIN_TEAM} to form a team"),
        )?;
        check(
            (MIN_TEAM..=MAX_TEAM).contains(&self.team_size),
            "team_size",
            format!("must lie in {MIN_TEAM}..={MAX_TEAM}"),
        )?;
        check(
            (1..=self.servers).contains(&self.subset_size),
            "subset_size",
            format!("must lie in 1..={}", self.servers),
        )?;
        check(
            SUPPORTED_N.contains(&self.strategy_n),
            "strategy_n",
            format!("must be one of {SUPPORTED_N:?}"),
        )?;
        check(prob(self.werner_mu), "werner_mu", "must lie in [0, 1]")?;
        self.server_loss
            .validate()
            .map_err(|e| Error::config("server_loss", e.to_string()))?;
        self.client_link
            .validate()
            .map_err(|e| Error::config("client_link", e.to_string()))?;

        let s = &self.session;
        check(
            s.rounds_per_setting >= 1,
            "session.rounds_per_setting",
            "must be at least 1",
        )?;
        check(
            s.window_events >= 1,
            "session.window_events",
            "must be at least 1",
        )?;
        check(
            s.balance_z.is_finite() && s.balance_z > 0.0,
            "session.balance_z",
            "must be positive",
        )?;

        self.auth
            .params()
            .validate()
            .map_err(|e| Error::config("auth", e.to_string()))?;
        check(
            prob(self.auth.noise_eps),
            "auth.noise_eps",
            "must lie in [0, 1]",
        )?;
        check(
            self.auth.enrollment_entries >= 1,
            "auth.enrollment_entries",
            "must be at least 1",
        )?;

        let n = &self.network;
        check(
            prob(n.edge_probability),
            "network.edge_probability",
            "must lie in [0, 1]",
        )?;
        check(prob(n.vote_loss), "network.vote_loss", "must lie in [0, 1]")?;

        let mut mining = BTreeSet::new();
        let mut voting = BTreeSet::new();
        let mut sybils = BTreeSet::new();
        for (i, a) in self.adversaries.iter().enumerate() {
            let field = format!("adversaries[{i}]");
            match (a.server(), a) {
                (Some(server), _) => {
                    check(
                        server < self.servers,
                        &field,
                        format!("server {server} out of range 0..{}", self.servers),
                    )?;
                    let seen = if a.is_mining() {
                        &mut mining
                    } else {
                        &mut voting
                    };
                    check(
                        seen.insert(server),
                        &field,
                        format!("server {server} already has a scripted behaviour of this kind"),
                    )?;
                }
                (None, Adversary::SybilClients { client, count }) => {
                    check(
                        *client < self.clients,
                        &field,
                        format!("client {client} out of range 0..{}", self.clients),
                    )?;
                    check(*count >= 1, &field, "count must be at least 1")?;
                    check(
                        sybils.insert(*client),
                        &field,
                        format!("client {client} listed twice"),
                    )?;
                }
                (None, _) => unreachable!("only Sybil adversaries lack a server"),
            }
            if let Adversary::FalseHeralds { eta, .. } = a {
                check(*eta > 0.0 && *eta <= 1.0, &field, "eta must lie in (0, 1]")?;
            }
        }
        Ok(())
    }
}
