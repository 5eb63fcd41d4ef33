//! The loss-tolerant steering bound `C_n(eta)`.
//!
//! A local-hidden-state cheater sends a pure qubit with Bloch vector `v` and
//! announces `sign(u_k . v)` only for settings in a chosen herald set `H`.
//! Its summed conditional correlation is at most
//!
//! ```text
//! W(H) = max_v sum_{k in H} |u_k . v| = max_{a in {±1}^H} || sum_{k in H} a_k u_k ||
//! ```
//!
//! and `V(m)` is the best `W(H) / m` over sets of size `m`.
//!
//! A cheater that heralds every setting at the same rate `eta` mixes herald
//! sets with weights `w_H`, and its witness is `sum_H w_H W(H) / (n eta)`.
//! Splitting the axes into symmetry orbits, only the per-orbit herald counts
//! of `H` matter, so
//!
//! ```text
//! C_n(eta) = max { sum_c w_c W(c) : sum_c w_c = 1, sum_c w_c h_g(c) = |g| eta } / (n eta)
//! ```
//!
//! over herald classes `c` (per-orbit counts `h_g(c)`, including the empty
//! class), a small linear programme solved by enumerating its bases. It is 1
//! for `eta <= 1/n`, nonincreasing, and equals the deterministic bound at
//! `eta = 1`. With a single orbit it is the upper concave envelope of
//! `m V(m)` divided by `eta n`.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use rand::Rng;

use crate::error::{Error, Result};
use crate::qstate::BlochVector;
use crate::steering::MeasurementStrategy;
use crate::RandomStream;

/// A signed herald set attaining the best value of its class.
#[derive(Debug, Clone)]
pub struct Maximizer {
    /// Bit `k` set when setting `k` is heralded.
    pub mask: u32,
    /// Bit `k` set when the announced sign for setting `k` is negative.
    pub negative: u32,
    /// The hidden-state direction, parallel to the signed sum.
    pub direction: BlochVector,
}

impl Maximizer {
    pub fn herald_set(&self) -> Vec<usize> {
        (0..32).filter(|k| self.mask >> k & 1 == 1).collect()
    }
}

/// Herald sets with the same number of settings from each orbit.
#[derive(Debug, Clone)]
pub struct HeraldClass {
    /// Heralded settings per orbit.
    pub counts: Vec<usize>,
    /// Best summed correlation `W` over the class.
    pub best: f64,
    /// Every signed set attaining `best`; the empty class has none.
    pub maximizers: Vec<Maximizer>,
}

impl HeraldClass {
    pub fn size(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// One basis of the mixing programme. Its weights are affine in `eta` and
/// feasible on `[lo, hi]`, where the objective is `a + b eta`.
#[derive(Debug, Clone)]
struct Basis {
    classes: Vec<usize>,
    w0: Vec<f64>,
    w1: Vec<f64>,
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Basis {
    fn covers(&self, eta: f64) -> bool {
        self.lo - FEAS_TOL <= eta && eta <= self.hi + FEAS_TOL
    }

    fn objective(&self, eta: f64) -> f64 {
        self.a + self.b * eta
    }
}

const FEAS_TOL: f64 = 1e-12;

/// Exhaustive herald classes of a strategy and the derived bound.
#[derive(Debug)]
pub struct HeraldTable {
    n: usize,
    group_sizes: Vec<usize>,
    classes: Vec<HeraldClass>,
    /// `V(m)` at index `m`; index 0 unused.
    values: Vec<f64>,
    level_maximizers: Vec<Vec<Maximizer>>,
    /// Optimal bases in order of `eta`, one per linear piece of the value.
    pieces: Vec<Basis>,
}

impl HeraldTable {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `V(m)`, for `1 <= m <= n`.
    pub fn value(&self, m: usize) -> f64 {
        assert!(m >= 1 && m <= self.n, "herald count {m} out of range");
        self.values[m]
    }

    /// `V(1), ..., V(n)`.
    pub fn values(&self) -> &[f64] {
        &self.values[1..]
    }

    /// Signed sets of size `m` attaining `V(m)`.
    pub fn maximizers(&self, m: usize) -> &[Maximizer] {
        &self.level_maximizers[m]
    }

    pub fn classes(&self) -> &[HeraldClass] {
        &self.classes
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    fn best_basis(&self, eta: f64) -> &Basis {
        let mut best: Option<&Basis> = None;
        for b in self.pieces.iter().filter(|b| b.covers(eta)) {
            if best.is_none_or(|cur| b.objective(eta) > cur.objective(eta)) {
                best = Some(b);
            }
        }
        best.expect("the programme is feasible on [0, 1]")
    }

    /// Optimal value of the mixing programme at `eta`.
    fn programme_value(&self, eta: f64) -> f64 {
        self.best_basis(eta).objective(eta)
    }

    /// `C_n(eta)` for `eta` in `(0, 1]`.
    fn bound(&self, eta: f64) -> f64 {
        let x = eta * self.n as f64;
        if x <= 1.0 {
            return 1.0;
        }
        (self.programme_value(eta) / x).min(1.0)
    }

    /// Steepest `|dC/d eta|` of the pieces active within `1/n` of `eta`.
    fn slope(&self, eta: f64) -> f64 {
        let nf = self.n as f64;
        let mut steepest = 0.0f64;
        for j in -4..=4 {
            let e = (eta + j as f64 / (4.0 * nf)).clamp(1.0 / nf, 1.0);
            let top = self.programme_value(e);
            for b in self.pieces.iter().filter(|b| b.covers(e)) {
                if b.objective(e) >= top - 1e-12 {
                    // C = (a + b e) / (n e), so dC/de = -a / (n e^2)
                    steepest = steepest.max(b.a.abs() / (nf * e * e));
                }
            }
        }
        steepest
    }

    /// Weights over herald classes of an optimal mixture at `eta`.
    pub fn optimal_mixture(&self, eta: f64) -> Vec<(f64, &HeraldClass)> {
        let basis = self.best_basis(eta);
        basis
            .classes
            .iter()
            .enumerate()
            .map(|(i, &c)| ((basis.w0[i] + eta * basis.w1[i]).max(0.0), &self.classes[c]))
            .filter(|(w, _)| *w > 0.0)
            .collect()
    }
}

type CacheKey = Vec<u64>;

fn cache() -> &'static RwLock<HashMap<CacheKey, Arc<HeraldTable>>> {
    static CACHE: OnceLock<RwLock<HashMap<CacheKey, Arc<HeraldTable>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn key(strategy: &MeasurementStrategy) -> CacheKey {
    strategy
        .settings()
        .iter()
        .flat_map(|a| a.components().map(f64::to_bits))
        .chain(strategy.groups().iter().map(|&g| g as u64))
        .collect()
}

/// Exhaustive herald table for `strategy`, memoized per axis set.
pub fn herald_table(strategy: &MeasurementStrategy) -> Arc<HeraldTable> {
    let k = key(strategy);
    if let Some(t) = cache().read().expect("bound cache poisoned").get(&k) {
        return t.clone();
    }
    let table = Arc::new(build_table(strategy));
    cache()
        .write()
        .expect("bound cache poisoned")
        .entry(k)
        .or_insert(table)
        .clone()
}

const TIE_TOL: f64 = 1e-10;

struct Search {
    axes: Vec<[f64; 3]>,
    /// Class-index increment for heralding each axis.
    stride: Vec<usize>,
    best: Vec<f64>,
    found: Vec<Vec<(u32, u32, [f64; 3])>>,
}

impl Search {
    fn record(&mut self, class: usize, sum: [f64; 3], mask: u32, negative: u32) {
        let norm2 = sum[0] * sum[0] + sum[1] * sum[1] + sum[2] * sum[2];
        let best = self.best[class];
        if norm2 > best * (1.0 + TIE_TOL) {
            self.best[class] = norm2;
            self.found[class].clear();
            self.found[class].push((mask, negative, sum));
        } else if norm2 >= best * (1.0 - TIE_TOL) {
            self.found[class].push((mask, negative, sum));
        }
    }

    /// Visits every signed subset exactly once up to a global sign flip: the
    /// first included axis always enters with `+`.
    fn visit(&mut self, k: usize, sum: [f64; 3], class: usize, mask: u32, negative: u32) {
        if k == self.axes.len() {
            return;
        }
        // exclude k
        self.visit(k + 1, sum, class, mask, negative);
        let u = self.axes[k];
        let next = class + self.stride[k];
        let plus = [sum[0] + u[0], sum[1] + u[1], sum[2] + u[2]];
        self.record(next, plus, mask | 1 << k, negative);
        self.visit(k + 1, plus, next, mask | 1 << k, negative);
        if mask != 0 {
            let minus = [sum[0] - u[0], sum[1] - u[1], sum[2] - u[2]];
            let neg = negative | 1 << k;
            self.record(next, minus, mask | 1 << k, neg);
            self.visit(k + 1, minus, next, mask | 1 << k, neg);
        }
    }
}

fn build_table(strategy: &MeasurementStrategy) -> HeraldTable {
    let axes = strategy.settings();
    let n = axes.len();
    assert!(
        n <= 20,
        "exhaustive herald enumeration supports at most 20 axes"
    );
    let groups = strategy.groups();
    let mut group_sizes = vec![0usize; strategy.group_count()];
    for &g in groups {
        group_sizes[g] += 1;
    }
    // mixed radix: class index = sum_g count_g * radix_g
    let mut radix = vec![1usize; group_sizes.len()];
    for g in 1..group_sizes.len() {
        radix[g] = radix[g - 1] * (group_sizes[g - 1] + 1);
    }
    let class_count =
        radix.last().copied().unwrap_or(1) * (group_sizes.last().copied().unwrap_or(0) + 1);

    let mut search = Search {
        axes: axes.iter().map(|a| a.components()).collect(),
        stride: groups.iter().map(|&g| radix[g]).collect(),
        best: vec![0.0; class_count],
        found: vec![Vec::new(); class_count],
    };
    search.visit(0, [0.0; 3], 0, 0, 0);

    let classes: Vec<HeraldClass> = (0..class_count)
        .map(|c| {
            let counts = (0..group_sizes.len())
                .map(|g| c / radix[g] % (group_sizes[g] + 1))
                .collect();
            let maximizers = search.found[c]
                .iter()
                .filter_map(|&(mask, negative, sum)| {
                    BlochVector::from_array(sum)
                        .ok()
                        .map(|direction| Maximizer {
                            mask,
                            negative,
                            direction,
                        })
                })
                .collect();
            HeraldClass {
                counts,
                best: search.best[c].sqrt(),
                maximizers,
            }
        })
        .collect();

    let mut values = vec![f64::NAN; n + 1];
    let mut level_maximizers = vec![Vec::new(); n + 1];
    for m in 1..=n {
        let top = classes
            .iter()
            .filter(|c| c.size() == m)
            .map(|c| c.best)
            .fold(0.0, f64::max);
        values[m] = top / m as f64;
        level_maximizers[m] = classes
            .iter()
            .filter(|c| c.size() == m && c.best >= top * (1.0 - TIE_TOL))
            .flat_map(|c| c.maximizers.iter().cloned())
            .collect();
    }
    let pieces = envelope(feasible_bases(&classes, &group_sizes));
    HeraldTable {
        n,
        group_sizes,
        classes,
        values,
        level_maximizers,
        pieces,
    }
}

/// Every basis of `{sum w = 1, sum w h_g = |g| eta}` that is feasible for
/// some `eta` in `[0, 1]`.
fn feasible_bases(classes: &[HeraldClass], group_sizes: &[usize]) -> Vec<Basis> {
    let rows = group_sizes.len() + 1;
    let column = |c: &HeraldClass| -> Vec<f64> {
        std::iter::once(1.0)
            .chain(c.counts.iter().map(|&h| h as f64))
            .collect()
    };
    let mut rhs0 = vec![0.0; rows];
    rhs0[0] = 1.0;
    let rhs1: Vec<f64> = std::iter::once(0.0)
        .chain(group_sizes.iter().map(|&s| s as f64))
        .collect();

    let mut out = Vec::new();
    let mut pick = Vec::with_capacity(rows);
    let mut visit = |pick: &[usize]| {
        let cols: Vec<Vec<f64>> = pick.iter().map(|&c| column(&classes[c])).collect();
        let (Some(w0), Some(w1)) = (solve(&cols, &rhs0), solve(&cols, &rhs1)) else {
            return;
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for (p, q) in w0.iter().zip(&w1) {
            // p + q eta >= 0
            if *q > 0.0 {
                lo = lo.max(-p / q);
            } else if *q < 0.0 {
                hi = hi.min(-p / q);
            } else if *p < -FEAS_TOL {
                return;
            }
        }
        if lo > hi + FEAS_TOL {
            return;
        }
        let a = pick
            .iter()
            .zip(&w0)
            .map(|(&c, w)| w * classes[c].best)
            .sum();
        let b = pick
            .iter()
            .zip(&w1)
            .map(|(&c, w)| w * classes[c].best)
            .sum();
        out.push(Basis {
            classes: pick.to_vec(),
            w0,
            w1,
            lo,
            hi,
            a,
            b,
        });
    };
    combinations(classes.len(), rows, &mut pick, 0, &mut visit);
    out
}

/// Walks the programme's value from `eta = 0` to 1. The value is concave, so
/// at each breakpoint the optimal basis with the largest slope stays optimal
/// until it turns infeasible.
fn envelope(bases: Vec<Basis>) -> Vec<Basis> {
    let mut pieces = Vec::new();
    let mut at = 0.0f64;
    while at < 1.0 - FEAS_TOL {
        let live = || {
            bases
                .iter()
                .filter(|b| b.covers(at) && b.hi > at + FEAS_TOL)
        };
        let top = live()
            .map(|b| b.objective(at))
            .fold(f64::NEG_INFINITY, f64::max);
        let next = live()
            .filter(|b| b.objective(at) >= top - 1e-12)
            .max_by(|x, y| x.b.total_cmp(&y.b).then(x.hi.total_cmp(&y.hi)))
            .expect("the programme is feasible on [0, 1]");
        let mut piece = next.clone();
        piece.lo = at;
        at = piece.hi;
        pieces.push(piece);
    }
    if let Some(last) = pieces.last_mut() {
        last.hi = 1.0;
    }
    pieces
}

fn combinations(
    n: usize,
    k: usize,
    pick: &mut Vec<usize>,
    from: usize,
    f: &mut impl FnMut(&[usize]),
) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for i in from..n {
        pick.push(i);
        combinations(n, k, pick, i + 1, f);
        pick.pop();
    }
}

/// Solves the square system with the given columns; `None` when singular.
fn solve(cols: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            let mut row: Vec<f64> = cols.iter().map(|c| c[r]).collect();
            row.push(rhs[r]);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-9 {
            return None;
        }
        m.swap(col, pivot);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Some((0..n).map(|r| m[r][n] / m[r][r]).collect())
}

/// Best LHS witness when every round is heralded:
/// `max_{a in {±1}^n} (1/n) || sum_k a_k u_k ||`.
pub fn deterministic_bound(strategy: &MeasurementStrategy) -> f64 {
    signed_sum_max(strategy.settings())
}

pub(crate) fn signed_sum_max(axes: &[BlochVector]) -> f64 {
    let n = axes.len();
    assert!((1..=24).contains(&n));
    let mut best = 0.0f64;
    // fix a_0 = +1; the global sign does not change the norm
    for pattern in 0u32..(1 << (n - 1)) {
        let mut sum = axes[0].components();
        for (k, u) in axes.iter().enumerate().skip(1) {
            let s = if pattern >> (k - 1) & 1 == 1 {
                -1.0
            } else {
                1.0
            };
            let c = u.components();
            for i in 0..3 {
                sum[i] += s * c[i];
            }
        }
        best = best.max(sum.iter().map(|x| x * x).sum::<f64>());
    }
    best.sqrt() / n as f64
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_nan() || eta <= 0.0 || eta > 1.0 {
        return Err(Error::domain(format!(
            "heralding efficiency {eta} must lie in (0, 1]"
        )));
    }
    Ok(())
}

/// `C_n(eta)`: the largest witness an LHS cheater heralding every setting at
/// rate `eta` can reach.
pub fn loss_tolerant_bound(strategy: &MeasurementStrategy, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    Ok(herald_table(strategy).bound(eta))
}

/// Magnitude of `dC_n/d eta` near `eta`: the steepest piece active within
/// `1/n` either side. Used to propagate the sampling error of the observed
/// efficiency into the witness decision.
pub fn bound_slope(strategy: &MeasurementStrategy, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    Ok(herald_table(strategy).slope(eta))
}

/// Cross-check for the exhaustive table: alternating maximization over herald
/// sets and hidden-state direction from `restarts` random starts. For fixed
/// `v` the best set is the `m` largest `|u_k . v|`; for a fixed signed set the
/// best `v` is parallel to `sum sign(u_k . v) u_k`.
pub fn iterated_herald_values(
    strategy: &MeasurementStrategy,
    restarts: usize,
    rng: &mut RandomStream,
) -> Vec<f64> {
    let axes = strategy.settings();
    let n = axes.len();
    let mut out = vec![0.0; n];
    for m in 1..=n {
        let mut best = 0.0f64;
        for r in 0..restarts {
            // seed a few starts on the axes themselves, the rest at random
            let mut v = if r < n.min(restarts / 2) {
                axes[(r + rng.random_range(0..n)) % n]
            } else {
                BlochVector::random(rng)
            };
            let mut value = 0.0;
            for _ in 0..200 {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&i, &j| axes[j].dot(&v).abs().total_cmp(&axes[i].dot(&v).abs()));
                let mut sum = [0.0; 3];
                for &k in &order[..m] {
                    let s = if axes[k].dot(&v) >= 0.0 { 1.0 } else { -1.0 };
                    let c = axes[k].components();
                    for i in 0..3 {
                        sum[i] += s * c[i];
                    }
                }
                let next = match BlochVector::from_array(sum) {
                    Ok(next) => next,
                    Err(_) => break,
                };
                let next_value = order[..m]
                    .iter()
                    .map(|&k| axes[k].dot(&next).abs())
                    .sum::<f64>()
                    / m as f64;
                let converged = next_value <= value + 1e-15;
                value = value.max(next_value);
                v = next;
                if converged {
                    break;
                }
            }
            best = best.max(value);
        }
        out[m - 1] = best;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::random_stream;
    use crate::steering::{make_strategy, SUPPORTED_N};

    /// Oracle: brute force over herald masks and sign patterns with plain
    /// bitmask loops, independent of the recursive search.
    fn brute_force_values(axes: &[BlochVector]) -> Vec<f64> {
        let n = axes.len();
        let mut best = vec![0.0f64; n + 1];
        for mask in 1u32..(1 << n) {
            let members: Vec<usize> = (0..n).filter(|k| mask >> k & 1 == 1).collect();
            let m = members.len();
            for signs in 0u32..(1 << m) {
                let mut sum = [0.0; 3];
                for (i, &k) in members.iter().enumerate() {
                    let s = if signs >> i & 1 == 1 { -1.0 } else { 1.0 };
                    let c = axes[k].components();
                    for d in 0..3 {
                        sum[d] += s * c[d];
                    }
                }
                let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt() / m as f64;
                best[m] = best[m].max(norm);
            }
        }
        best[1..].to_vec()
    }

    #[test]
    fn deterministic_bound_examples() {
        let one = signed_sum_max(&[BlochVector::Z]);
        assert_eq!(one, 1.0);
        let s2 = make_strategy(2).unwrap();
        assert!((deterministic_bound(&s2) - 0.5f64.sqrt()).abs() < 1e-12);
        let s3 = make_strategy(3).unwrap();
        assert!((deterministic_bound(&s3) - (1.0 / 3f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_table_matches_brute_force() {
        for n in [2, 3, 4, 6, 10] {
            let s = make_strategy(n).unwrap();
            let table = herald_table(&s);
            let oracle = brute_force_values(s.settings());
            for (m, (a, b)) in table.values().iter().zip(&oracle).enumerate() {
                assert!((a - b).abs() < 1e-12, "n={n} m={}: {a} vs {b}", m + 1);
            }
        }
    }

    #[test]
    fn full_herald_equals_deterministic_bound() {
        for n in SUPPORTED_N {
            let s = make_strategy(n).unwrap();
            let t = herald_table(&s);
            assert!((t.value(n) - deterministic_bound(&s)).abs() < 1e-12);
        }
    }

    #[test]
    fn iterated_update_agrees_with_enumeration() {
        let mut rng = random_stream(99, 0);
        for n in SUPPORTED_N {
            let s = make_strategy(n).unwrap();
            let t = herald_table(&s);
            let it = iterated_herald_values(&s, 64, &mut rng);
            for m in 1..=n {
                assert!(it[m - 1] <= t.value(m) + 1e-12);
                assert!(
                    (it[m - 1] - t.value(m)).abs() < 1e-9,
                    "n={n} m={m}: {} vs {}",
                    it[m - 1],
                    t.value(m)
                );
            }
        }
    }

    #[test]
    fn loss_tolerant_examples() {
        let s3 = make_strategy(3).unwrap();
        assert!((loss_tolerant_bound(&s3, 1.0).unwrap() - (1.0 / 3f64).sqrt()).abs() < 1e-12);
        // max over pairs (1/2)||u_i ± u_j|| = 1/sqrt2
        assert!((loss_tolerant_bound(&s3, 2.0 / 3.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        for n in SUPPORTED_N {
            let s = make_strategy(n).unwrap();
            assert!((loss_tolerant_bound(&s, 1.0 / n as f64).unwrap() - 1.0).abs() < 1e-9);
            assert_eq!(loss_tolerant_bound(&s, 0.5 / n as f64).unwrap(), 1.0);
        }
        assert!(loss_tolerant_bound(&s3, 0.0).is_err());
        assert!(loss_tolerant_bound(&s3, 1.5).is_err());
        assert!(loss_tolerant_bound(&s3, f64::NAN).is_err());
    }

    #[test]
    fn monotone_on_grid() {
        for n in SUPPORTED_N {
            let s = make_strategy(n).unwrap();
            let mut prev = f64::INFINITY;
            for i in 1..=100 {
                let b = loss_tolerant_bound(&s, i as f64 / 100.0).unwrap();
                assert!(b <= prev + 1e-15, "n={n} eta={}", i as f64 / 100.0);
                prev = b;
            }
        }
    }

    #[test]
    fn maximizers_attain_value() {
        for n in SUPPORTED_N {
            let s = make_strategy(n).unwrap();
            let t = herald_table(&s);
            for m in 1..=n {
                assert!(!t.maximizers(m).is_empty());
                for mx in t.maximizers(m) {
                    let h = mx.herald_set();
                    assert_eq!(h.len(), m);
                    let v: f64 = h
                        .iter()
                        .map(|&k| s.setting(k).dot(&mx.direction).abs())
                        .sum::<f64>()
                        / m as f64;
                    assert!((v - t.value(m)).abs() < 1e-9);
                }
            }
        }
    }

    /// Oracle for one-orbit strategies: the upper concave envelope of
    /// `W(m) = m V(m)` (with `W(0) = 0`) at `x = eta n`, over `x`.
    fn envelope_oracle(values: &[f64], eta: f64) -> f64 {
        let n = values.len();
        let w = |m: usize| {
            if m == 0 {
                0.0
            } else {
                m as f64 * values[m - 1]
            }
        };
        let x = eta * n as f64;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=n {
            for j in i..=n {
                if (i as f64) <= x && x <= j as f64 {
                    let v = if i == j {
                        w(i)
                    } else {
                        let t = (x - i as f64) / (j - i) as f64;
                        (1.0 - t) * w(i) + t * w(j)
                    };
                    best = best.max(v);
                }
            }
        }
        (best / x).min(1.0)
    }

    #[test]
    fn single_orbit_bound_is_concave_envelope() {
        for n in [2, 3, 4, 6, 10] {
            let s = make_strategy(n).unwrap();
            let oracle = brute_force_values(s.settings());
            for i in 1..=200 {
                let eta = i as f64 / 200.0;
                let c = loss_tolerant_bound(&s, eta).unwrap();
                let e = envelope_oracle(&oracle, eta);
                assert!((c - e).abs() < 1e-9, "n={n} eta={eta}: {c} vs {e}");
            }
        }
    }

    /// `m V(m)` is not concave for the cube: mixing pairs with all four axes
    /// beats the best triple at `eta = 3/4`.
    #[test]
    fn cube_mixture_beats_triples() {
        let s = make_strategy(4).unwrap();
        let pair = (8.0f64 / 3.0).sqrt();
        let all = 4.0 / 3f64.sqrt();
        let expected = (pair + all) / 2.0 / 3.0;
        let c = loss_tolerant_bound(&s, 0.75).unwrap();
        assert!((c - expected).abs() < 1e-12, "{c} vs {expected}");
        assert!(c > herald_table(&s).value(3) + 0.01);
    }

    /// Finer orbit constraints can only lower the bound.
    #[test]
    fn orbit_constraints_tighten_sixteen() {
        let grouped = make_strategy(16).unwrap();
        let flat = MeasurementStrategy::from_axes(grouped.settings().to_vec()).unwrap();
        let flat_values = herald_table(&flat).values().to_vec();
        for i in 1..=100 {
            let eta = i as f64 / 100.0;
            let g = loss_tolerant_bound(&grouped, eta).unwrap();
            let f = loss_tolerant_bound(&flat, eta).unwrap();
            assert!(g <= f + 1e-12, "eta={eta}: {g} > {f}");
            assert!((f - envelope_oracle(&flat_values, eta)).abs() < 1e-9);
        }
        assert!(
            (loss_tolerant_bound(&grouped, 1.0).unwrap() - deterministic_bound(&grouped)).abs()
                < 1e-9
        );
    }

    #[test]
    fn slope_is_positive_past_one_setting() {
        for n in SUPPORTED_N {
            let s = make_strategy(n).unwrap();
            assert!(bound_slope(&s, 1.0 / n as f64).unwrap() > 0.0);
            assert!(bound_slope(&s, 0.5).unwrap() > 0.0);
        }
    }
}
