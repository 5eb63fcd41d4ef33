//! Local-hidden-state cheaters: the server sends a pure qubit and announces a
//! classical guess of the client's outcome on a chosen herald set.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::qstate::{BlochVector, Outcome};
use crate::steering::{herald_table, MeasurementStrategy};
use crate::RandomStream;

/// Hidden state `bloch`; announces `sign(u_k . bloch)` for `k` in the herald
/// set and nothing otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct CheatStrategyLHS {
    bloch: BlochVector,
    herald_set: Vec<usize>,
}

impl CheatStrategyLHS {
    pub fn new(bloch: BlochVector, mut herald_set: Vec<usize>, n: usize) -> Result<Self> {
        herald_set.sort_unstable();
        herald_set.dedup();
        if herald_set.is_empty() {
            return Err(Error::domain("herald set must be non-empty"));
        }
        if let Some(&k) = herald_set.iter().find(|&&k| k >= n) {
            return Err(Error::domain(format!(
                "herald index {k} out of range for n = {n}"
            )));
        }
        Ok(Self { bloch, herald_set })
    }

    pub fn bloch(&self) -> &BlochVector {
        &self.bloch
    }

    pub fn herald_set(&self) -> &[usize] {
        &self.herald_set
    }

    pub fn heralds(&self, k: usize) -> bool {
        self.herald_set.binary_search(&k).is_ok()
    }

    pub fn announce(&self, strategy: &MeasurementStrategy, k: usize) -> Outcome {
        if self.heralds(k) {
            Outcome::from_sign(strategy.setting(k).dot(&self.bloch) >= 0.0)
        } else {
            Outcome::Null
        }
    }

    /// Expected conditional witness `(1/|H|) sum_{k in H} |u_k . v|`.
    pub fn conditional_value(&self, strategy: &MeasurementStrategy) -> f64 {
        let sum: f64 = self
            .herald_set
            .iter()
            .map(|&k| strategy.setting(k).dot(&self.bloch).abs())
            .sum();
        sum / self.herald_set.len() as f64
    }
}

/// A weighted mixture of cheaters, plus an optional silent component that
/// never heralds.
#[derive(Debug, Clone)]
pub struct LhsMixture {
    components: Vec<(f64, CheatStrategyLHS)>,
    silent: f64,
}

impl LhsMixture {
    /// Weights need not be normalized; they must be non-negative and not all 0.
    pub fn new(components: Vec<(f64, CheatStrategyLHS)>) -> Result<Self> {
        Self::with_silent(components, 0.0)
    }

    pub fn with_silent(components: Vec<(f64, CheatStrategyLHS)>, silent: f64) -> Result<Self> {
        if components
            .iter()
            .any(|(w, _)| !(w.is_finite() && *w >= 0.0))
            || !(silent.is_finite() && silent >= 0.0)
        {
            return Err(Error::domain("mixture weights must be finite and >= 0"));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum::<f64>() + silent;
        if total <= 0.0 || components.is_empty() {
            return Err(Error::domain("mixture has no heralding component"));
        }
        Ok(Self {
            components: components
                .into_iter()
                .map(|(w, c)| (w / total, c))
                .collect(),
            silent: silent / total,
        })
    }

    pub fn single(cheat: CheatStrategyLHS) -> Self {
        Self {
            components: vec![(1.0, cheat)],
            silent: 0.0,
        }
    }

    pub fn components(&self) -> &[(f64, CheatStrategyLHS)] {
        &self.components
    }

    pub fn silent_weight(&self) -> f64 {
        self.silent
    }

    /// Draws one hidden strategy; `None` is the silent component.
    pub fn sample(&self, rng: &mut RandomStream) -> Option<&CheatStrategyLHS> {
        let mut u: f64 = rng.random();
        if u < self.silent {
            return None;
        }
        u -= self.silent;
        for (w, c) in &self.components {
            if u < *w {
                return Some(c);
            }
            u -= w;
        }
        self.components.last().map(|(_, c)| c)
    }

    /// Per-setting probability of a herald when the setting is drawn uniformly.
    pub fn coverage(&self, n: usize) -> Vec<f64> {
        let mut cov = vec![0.0; n];
        for (w, c) in &self.components {
            for &k in c.herald_set() {
                cov[k] += w;
            }
        }
        cov
    }

    /// Expected heralding efficiency under uniformly drawn settings.
    pub fn expected_eta(&self, n: usize) -> f64 {
        self.coverage(n).iter().sum::<f64>() / n as f64
    }

    /// The cheat attaining `C_n(eta)`: the optimal class mixture of the
    /// bound's programme, each class's weight spread evenly over all of its
    /// maximizing signed sets. The empty class becomes the silent component.
    pub fn optimal(strategy: &MeasurementStrategy, eta: f64) -> Result<Self> {
        if eta.is_nan() || eta <= 0.0 || eta > 1.0 {
            return Err(Error::domain(format!("eta {eta} must lie in (0, 1]")));
        }
        let table = herald_table(strategy);
        let mut components = Vec::new();
        let mut silent = 0.0;
        for (w, class) in table.optimal_mixture(eta) {
            if class.maximizers.is_empty() {
                silent += w;
                continue;
            }
            let each = w / class.maximizers.len() as f64;
            components.extend(class.maximizers.iter().map(|mx| {
                let cheat = CheatStrategyLHS {
                    bloch: mx.direction,
                    herald_set: mx.herald_set(),
                };
                (each, cheat)
            }));
        }
        Self::with_silent(components, silent)
    }

    /// A random cheat with uniform setting coverage: for a random ordering of
    /// the settings and a random size `m`, the `n` cyclic windows of length
    /// `m` are equally weighted. Each window's hidden state is either its
    /// best direction or uniformly random.
    pub fn random_cyclic(strategy: &MeasurementStrategy, rng: &mut RandomStream) -> Self {
        let n = strategy.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let m = rng.random_range(1..=n);
        let optimize = rng.random_bool(0.5);
        let components = (0..n)
            .map(|j| {
                let set: Vec<usize> = (0..m).map(|i| order[(j + i) % n]).collect();
                let bloch = if optimize {
                    best_direction(strategy, &set)
                } else {
                    BlochVector::random(rng)
                };
                let cheat = CheatStrategyLHS::new(bloch, set, n).expect("window is non-empty");
                (1.0, cheat)
            })
            .collect();
        Self::new(components).expect("cyclic windows have positive weight")
    }
}

/// Hidden-state direction maximizing `sum_{k in set} |u_k . v|`, by sign
/// enumeration over the set.
pub(crate) fn best_direction(strategy: &MeasurementStrategy, set: &[usize]) -> BlochVector {
    let axes: Vec<[f64; 3]> = set
        .iter()
        .map(|&k| strategy.setting(k).components())
        .collect();
    let mut best = (f64::NEG_INFINITY, axes[0]);
    for pattern in 0u32..(1 << (axes.len() - 1)) {
        let mut sum = axes[0];
        for (i, u) in axes.iter().enumerate().skip(1) {
            let s = if pattern >> (i - 1) & 1 == 1 {
                -1.0
            } else {
                1.0
            };
            for c in 0..3 {
                sum[c] += s * u[c];
            }
        }
        let norm2 = sum.iter().map(|x| x * x).sum::<f64>();
        if norm2 > best.0 {
            best = (norm2, sum);
        }
    }
    BlochVector::from_array(best.1).unwrap_or(*strategy.setting(set[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::random_stream;
    use crate::steering::{loss_tolerant_bound, make_strategy, SUPPORTED_N};

    #[test]
    fn rejects_empty_or_out_of_range_sets() {
        assert!(CheatStrategyLHS::new(BlochVector::Z, vec![], 3).is_err());
        assert!(CheatStrategyLHS::new(BlochVector::Z, vec![3], 3).is_err());
        assert!(LhsMixture::new(vec![]).is_err());
    }

    #[test]
    fn announcement_follows_hidden_state() {
        let s = make_strategy(3).unwrap();
        let c = CheatStrategyLHS::new(BlochVector::X.negated(), vec![0, 2], 3).unwrap();
        assert_eq!(c.announce(&s, 0), Outcome::Minus);
        assert_eq!(c.announce(&s, 1), Outcome::Null);
        assert_eq!(c.announce(&s, 2), Outcome::Plus);
    }

    #[test]
    fn optimal_mixture_has_target_eta_and_uniform_coverage() {
        for n in SUPPORTED_N {
            let s = make_strategy(n).unwrap();
            for i in 1..=20 {
                let eta = i as f64 / 20.0;
                let mix = LhsMixture::optimal(&s, eta).unwrap();
                assert!((mix.expected_eta(n) - eta).abs() < 1e-12, "n={n} eta={eta}");
                for c in mix.coverage(n) {
                    assert!((c - eta).abs() < 1e-9, "n={n} eta={eta} coverage {c}");
                }
            }
        }
    }

    #[test]
    fn optimal_mixture_expected_witness_equals_bound() {
        for n in SUPPORTED_N {
            let s = make_strategy(n).unwrap();
            for i in 1..=20 {
                let eta = i as f64 / 20.0;
                let mix = LhsMixture::optimal(&s, eta).unwrap();
                // coverage is uniform, so each setting's correlator is the
                // weighted mean of |u_k . v| over the components heralding it
                let mut per_setting = vec![0.0; n];
                for (w, c) in mix.components() {
                    for &k in c.herald_set() {
                        per_setting[k] += w * s.setting(k).dot(c.bloch()).abs();
                    }
                }
                let cov = mix.coverage(n);
                let s_n: f64 = per_setting
                    .iter()
                    .zip(&cov)
                    .map(|(p, c)| p / c)
                    .sum::<f64>()
                    / n as f64;
                let bound = loss_tolerant_bound(&s, eta).unwrap();
                assert!(
                    (s_n - bound).abs() < 1e-9,
                    "n={n} eta={eta} {s_n} vs {bound}"
                );
            }
        }
    }

    #[test]
    fn cyclic_mixture_is_uniform() {
        let mut rng = random_stream(1, 0);
        for n in SUPPORTED_N {
            let s = make_strategy(n).unwrap();
            for _ in 0..10 {
                let mix = LhsMixture::random_cyclic(&s, &mut rng);
                let cov = mix.coverage(n);
                for c in &cov {
                    assert!((c - cov[0]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn best_direction_matches_enumerated_value() {
        let s = make_strategy(3).unwrap();
        let v = best_direction(&s, &[0, 1]);
        let c = CheatStrategyLHS::new(v, vec![0, 1], 3).unwrap();
        assert!((c.conditional_value(&s) - 0.5f64.sqrt()).abs() < 1e-12);
    }
}
