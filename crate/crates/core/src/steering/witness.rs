use crate::error::{Error, Result};
use crate::poe::MeasurementRecord;
use crate::qstate::Outcome;
use crate::steering::{bound_slope, loss_tolerant_bound, MeasurementStrategy};

/// Per-setting counts of client-detected rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SettingTally {
    pub records: u64,
    pub heralded: u64,
    pub correlated: u64,
    pub anticorrelated: u64,
}

impl SettingTally {
    /// Mean of `A_k B_k` over heralded rounds, `None` without heralds.
    pub fn correlator(&self) -> Option<f64> {
        (self.heralded > 0)
            .then(|| (self.correlated as f64 - self.anticorrelated as f64) / self.heralded as f64)
    }

    /// Counts one round; rounds the client did not detect are ignored.
    pub fn add(&mut self, client: Outcome, server: Outcome) {
        let Some(b) = client.value() else {
            return;
        };
        self.records += 1;
        if let Some(a) = server.value() {
            self.heralded += 1;
            if a == b {
                self.correlated += 1;
            } else {
                self.anticorrelated += 1;
            }
        }
    }

    pub fn herald_fraction(&self) -> Option<f64> {
        (self.records > 0).then(|| self.heralded as f64 / self.records as f64)
    }
}

/// Outcome of evaluating the steering witness over a session transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct WitnessReport {
    /// Equal-weight average of the per-setting correlators.
    pub s_n: f64,
    /// Overall fraction of client-detected rounds the server heralded.
    pub eta: f64,
    /// `C_n(eta)`.
    pub bound: f64,
    /// `s_n - bound > 3 std_error`.
    pub violated: bool,
    pub std_error: f64,
    pub counts: Vec<SettingTally>,
}

/// Standard errors of margin required for a violation.
pub const VIOLATION_SIGMAS: f64 = 3.0;

impl WitnessReport {
    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn margin(&self) -> f64 {
        self.s_n - self.bound
    }

    /// Settings with no heralded rounds; they contribute 0 to `s_n`.
    pub fn empty_settings(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, t)| t.heralded == 0)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn min_heralded(&self) -> u64 {
        self.counts.iter().map(|t| t.heralded).min().unwrap_or(0)
    }

    pub fn total_records(&self) -> u64 {
        self.counts.iter().map(|t| t.records).sum()
    }

    /// Largest binomial z-score of a per-setting herald fraction against the
    /// overall `eta`. A server that heralds some settings more readily than
    /// others shows up here.
    pub fn herald_imbalance(&self) -> f64 {
        let eta = self.eta;
        let mut worst = 0.0f64;
        for t in &self.counts {
            let Some(p) = t.herald_fraction() else {
                continue;
            };
            let var = eta * (1.0 - eta) / t.records as f64;
            let z = if var > 0.0 {
                (p - eta).abs() / var.sqrt()
            } else if p == eta {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
        }
        worst
    }
}

/// Evaluates `S_n`, `eta` and `C_n(eta)` from client-detected records.
pub fn evaluate_witness(
    records: &[MeasurementRecord],
    strategy: &MeasurementStrategy,
) -> Result<WitnessReport> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no measurement records".into()));
    }
    let n = strategy.n();
    let mut counts = vec![SettingTally::default(); n];
    for r in records {
        let tally = counts.get_mut(r.setting_k).ok_or_else(|| {
            Error::domain(format!("setting {} out of range for n = {n}", r.setting_k))
        })?;
        if r.client_outcome.is_null() {
            return Err(Error::domain(format!(
                "round {} has a null client outcome",
                r.round_index
            )));
        }
        tally.add(r.client_outcome, r.server_announcement);
    }
    report_from_tallies(counts, strategy)
}

/// Builds the report from per-setting tallies.
pub fn report_from_tallies(
    counts: Vec<SettingTally>,
    strategy: &MeasurementStrategy,
) -> Result<WitnessReport> {
    let n = strategy.n();
    if counts.len() != n {
        return Err(Error::domain(format!(
            "expected {n} tallies, got {}",
            counts.len()
        )));
    }
    if let Some(k) = counts.iter().position(|t| t.records == 0) {
        return Err(Error::InsufficientData(format!(
            "setting {k} has no records"
        )));
    }
    let total: u64 = counts.iter().map(|t| t.records).sum();
    let heralded: u64 = counts.iter().map(|t| t.heralded).sum();
    let eta = heralded as f64 / total as f64;

    let mut sum = 0.0;
    let mut var = 0.0;
    for t in &counts {
        if let Some(c) = t.correlator() {
            sum += c;
            var += (1.0 - c * c) / t.heralded as f64;
        }
    }
    let nf = n as f64;
    let s_n = sum / nf;
    var /= nf * nf;

    // A server that never heralds has nothing to bound; C_n tends to 1 there.
    let (bound, slope) = if heralded == 0 {
        (1.0, 0.0)
    } else {
        (
            loss_tolerant_bound(strategy, eta)?,
            bound_slope(strategy, eta)?,
        )
    };
    let eta_var = eta * (1.0 - eta) / total as f64;
    let std_error = (var + slope * slope * eta_var).sqrt();
    let violated = s_n - bound > VIOLATION_SIGMAS * std_error;

    Ok(WitnessReport {
        s_n,
        eta,
        bound,
        violated,
        std_error,
        counts,
    })
}
