//! Measurement statistics of simulated photonic qubit pairs.
//!
//! The shared state is a Werner state: a singlet with weight `mu` mixed with
//! white noise. For measurement axes `a` (server) and `b` (client) the joint
//! outcome probabilities are `P(s, t) = (1 - mu * s * t * a.b) / 4`, so both
//! marginals are uniform and the correlator is `E[s t] = -mu (a.b)`.
//!
//! Outcomes returned here are *raw* singlet outcomes. The PoE server negates
//! its raw outcome before announcing it, which makes honest correlators
//! positive.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::RandomStream;

const UNIT_TOL: f64 = 1e-12;

/// A unit vector on the Bloch sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector {
    x: f64,
    y: f64,
    z: f64,
}

impl BlochVector {
    pub const X: BlochVector = BlochVector {
        x: 1.0,
        y: 0.0,
        z: 0.0,
    };
    pub const Y: BlochVector = BlochVector {
        x: 0.0,
        y: 1.0,
        z: 0.0,
    };
    pub const Z: BlochVector = BlochVector {
        x: 0.0,
        y: 0.0,
        z: 1.0,
    };

    /// Accepts only vectors of unit norm (within 1e-12).
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm2 = x * x + y * y + z * z;
        if !norm2.is_finite() || (norm2.sqrt() - 1.0).abs() > UNIT_TOL {
            return Err(Error::domain(format!(
                "Bloch vector ({x}, {y}, {z}) is not unit norm"
            )));
        }
        Ok(Self { x, y, z })
    }

    /// Normalizes an arbitrary non-zero vector.
    pub fn normalized(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !(norm.is_finite() && norm > 1e-300) {
            return Err(Error::domain("cannot normalize a zero vector"));
        }
        Ok(Self {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self> {
        Self::normalized(v[0], v[1], v[2])
    }

    /// A direction drawn uniformly from the sphere.
    pub fn random(rng: &mut RandomStream) -> Self {
        loop {
            let z: f64 = rng.random_range(-1.0..=1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).max(0.0).sqrt();
            if let Ok(v) = Self::normalized(r * phi.cos(), r * phi.sin(), z) {
                return v;
            }
        }
    }

    pub fn components(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &BlochVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn negated(&self) -> Self {
        Self {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

/// Werner-parametrized two-qubit state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoQubitState {
    werner_mu: f64,
    description: String,
}

impl TwoQubitState {
    pub fn new(werner_mu: f64, description: impl Into<String>) -> Result<Self> {
        if !(0.0..=1.0).contains(&werner_mu) {
            return Err(Error::domain(format!(
                "Werner weight {werner_mu} outside [0, 1]"
            )));
        }
        Ok(Self {
            werner_mu,
            description: description.into(),
        })
    }

    pub fn singlet() -> Self {
        Self {
            werner_mu: 1.0,
            description: "singlet".into(),
        }
    }

    pub fn maximally_mixed() -> Self {
        Self {
            werner_mu: 0.0,
            description: "maximally mixed".into(),
        }
    }

    pub fn werner_mu(&self) -> f64 {
        self.werner_mu
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// `E[s t] = -mu (a.b)` for raw outcomes.
    pub fn correlator(&self, a: &BlochVector, b: &BlochVector) -> f64 {
        -self.werner_mu * a.dot(b)
    }
}

/// A single detection result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
    /// No detection / no herald.
    Null,
}

impl Outcome {
    pub fn from_sign(positive: bool) -> Self {
        if positive {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    }

    /// `+1`, `-1`, or `None` for a null event.
    pub fn value(self) -> Option<i32> {
        match self {
            Outcome::Plus => Some(1),
            Outcome::Minus => Some(-1),
            Outcome::Null => None,
        }
    }

    pub fn is_null(self) -> bool {
        self == Outcome::Null
    }

    pub fn negated(self) -> Self {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
            Outcome::Null => Outcome::Null,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Outcome::Plus => '+',
            Outcome::Minus => '-',
            Outcome::Null => '0',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            '+' => Some(Outcome::Plus),
            '-' => Some(Outcome::Minus),
            '0' => Some(Outcome::Null),
            _ => None,
        }
    }
}

/// Fiber, coupling and detector losses on one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub distance_km: f64,
    pub fiber_db_per_km: f64,
    pub coupling_transmission: f64,
    pub detector_efficiency: f64,
}

impl LossModel {
    pub fn new(
        distance_km: f64,
        fiber_db_per_km: f64,
        coupling_transmission: f64,
        detector_efficiency: f64,
    ) -> Result<Self> {
        let model = Self {
            distance_km,
            fiber_db_per_km,
            coupling_transmission,
            detector_efficiency,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn lossless() -> Self {
        Self {
            distance_km: 0.0,
            fiber_db_per_km: 0.0,
            coupling_transmission: 1.0,
            detector_efficiency: 1.0,
        }
    }

    /// A lumped loss: no fiber, the whole transmission in the coupling term.
    pub fn with_transmission(transmission: f64) -> Result<Self> {
        Self::new(0.0, 0.0, transmission, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if !nonneg(self.distance_km) || !nonneg(self.fiber_db_per_km) {
            return Err(Error::domain("distance and fiber loss must be >= 0"));
        }
        if !prob(self.coupling_transmission) || !prob(self.detector_efficiency) {
            return Err(Error::domain(
                "coupling transmission and detector efficiency must be probabilities",
            ));
        }
        Ok(())
    }
}

/// Probability that a photon survives fiber, coupling and detection.
pub fn channel_transmission(loss: &LossModel) -> f64 {
    let fiber = 10f64.powf(-loss.fiber_db_per_km * loss.distance_km / 10.0);
    (loss.coupling_transmission * loss.detector_efficiency * fiber).clamp(0.0, 1.0)
}

/// Joint distribution of raw outcomes, indexed `[server][client]` with
/// index 0 for `+1` and 1 for `-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointDistribution {
    pub p: [[f64; 2]; 2],
}

impl JointDistribution {
    pub fn prob(&self, server: Outcome, client: Outcome) -> f64 {
        match (index(server), index(client)) {
            (Some(i), Some(j)) => self.p[i][j],
            _ => 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.p.iter().flatten().sum()
    }

    pub fn correlator(&self) -> f64 {
        self.p[0][0] + self.p[1][1] - self.p[0][1] - self.p[1][0]
    }

    pub fn server_marginal(&self) -> [f64; 2] {
        [self.p[0][0] + self.p[0][1], self.p[1][0] + self.p[1][1]]
    }

    pub fn client_marginal(&self) -> [f64; 2] {
        [self.p[0][0] + self.p[1][0], self.p[0][1] + self.p[1][1]]
    }
}

fn index(o: Outcome) -> Option<usize> {
    match o {
        Outcome::Plus => Some(0),
        Outcome::Minus => Some(1),
        Outcome::Null => None,
    }
}

/// Born-rule joint distribution for measuring the server half along `axis_a`
/// and the client half along `axis_b`.
pub fn born_probabilities(
    state: &TwoQubitState,
    axis_a: &BlochVector,
    axis_b: &BlochVector,
) -> JointDistribution {
    let c = state.werner_mu * axis_a.dot(axis_b);
    let same = (1.0 - c) / 4.0;
    let diff = (1.0 + c) / 4.0;
    JointDistribution {
        p: [[same, diff], [diff, same]],
    }
}

/// Samples one round. Each arm is independently lost with probability
/// `1 - channel_transmission`; surviving outcomes follow the Born rule.
///
/// Exactly four uniforms are consumed per call, in the order server
/// detection, client detection, server outcome, client outcome, so a
/// transcript depends only on the seed and the number of rounds.
pub fn sample_round(
    state: &TwoQubitState,
    axis_a: &BlochVector,
    axis_b: &BlochVector,
    loss_a: &LossModel,
    loss_b: &LossModel,
    rng: &mut RandomStream,
) -> (Outcome, Outcome) {
    let detect_a = rng.random::<f64>() < channel_transmission(loss_a);
    let detect_b = rng.random::<f64>() < channel_transmission(loss_b);
    let u_server: f64 = rng.random();
    let u_client: f64 = rng.random();

    let server_plus = u_server < 0.5;
    // P(client = + | server = s) = 2 P(s, +) = (1 - mu s a.b) / 2
    let s = if server_plus { 1.0 } else { -1.0 };
    let p_client_plus = (1.0 - s * state.werner_mu * axis_a.dot(axis_b)) / 2.0;
    let client_plus = u_client < p_client_plus;

    let server = if detect_a {
        Outcome::from_sign(server_plus)
    } else {
        Outcome::Null
    };
    let client = if detect_b {
        Outcome::from_sign(client_plus)
    } else {
        Outcome::Null
    };
    (server, client)
}

/// Projective measurement of a pure qubit with Bloch vector `state` along `axis`.
pub fn measure_pure(state: &BlochVector, axis: &BlochVector, rng: &mut RandomStream) -> Outcome {
    let p_plus = (1.0 + state.dot(axis)) / 2.0;
    Outcome::from_sign(rng.random::<f64>() < p_plus)
}
