//! Energy, throughput and fibre service-radius arithmetic for a consortium.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::LossModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyModel {
    pub server_watts: f64,
    pub client_watts: f64,
    pub pair_rate_hz: f64,
    pub window_minutes: f64,
    pub team_min: u32,
    pub team_max: u32,
    pub consortium_size: u32,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            server_watts: 86.0,
            client_watts: 19.0,
            pair_rate_hz: 3000.0,
            window_minutes: 10.0,
            team_min: 2,
            team_max: 20,
            consortium_size: 2000,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.server_watts) || !positive(self.client_watts) {
            return Err(Error::domain("device power must be positive"));
        }
        if !positive(self.window_minutes) || !positive(self.pair_rate_hz) {
            return Err(Error::domain("window and pair rate must be positive"));
        }
        if self.team_min == 0 || self.team_min > self.team_max {
            return Err(Error::domain("team range must satisfy 1 <= min <= max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    /// One server and one client mining together.
    pub session_watts: f64,
    pub blocks_per_day: f64,
    pub clients_per_day: (f64, f64),
    pub consortium_watts: f64,
}

pub fn energy_report(model: &EnergyModel) -> Result<EnergyReport> {
    model.validate()?;
    let session_watts = model.server_watts + model.client_watts;
    let blocks_per_day = 24.0 * 60.0 / model.window_minutes;
    Ok(EnergyReport {
        session_watts,
        blocks_per_day,
        clients_per_day: (
            blocks_per_day * f64::from(model.team_min),
            blocks_per_day * f64::from(model.team_max),
        ),
        consortium_watts: f64::from(model.consortium_size) * session_watts,
    })
}

/// Largest fibre distance at which a client still receives `min_client_rate`
/// detected pairs per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServiceRadius {
    Km(f64),
    /// Coupling and detection losses alone leave less than the minimum rate.
    Unreachable,
    /// Lossless fibre: any distance works.
    Unbounded,
}

impl fmt::Display for ServiceRadius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ServiceRadius::Km(d) => write!(f, "{d} km"),
            ServiceRadius::Unreachable => {
                f.write_str("0 km (unreachable: fixed losses exceed the rate budget)")
            }
            ServiceRadius::Unbounded => f.write_str("unbounded (fibre loss is zero)"),
        }
    }
}

impl ServiceRadius {
    /// The radius in km, 0 when unreachable and infinite when unbounded.
    pub fn km(&self) -> f64 {
        match self {
            ServiceRadius::Km(d) => *d,
            ServiceRadius::Unreachable => 0.0,
            ServiceRadius::Unbounded => f64::INFINITY,
        }
    }
}

/// Detected pairs per second reaching a client at `distance_km`.
pub fn client_rate(pair_rate_hz: f64, loss: &LossModel, distance_km: f64) -> f64 {
    pair_rate_hz
        * loss.coupling_transmission
        * loss.detector_efficiency
        * 10f64.powf(-loss.fiber_db_per_km * distance_km / 10.0)
}

/// Solves `rate * coupling * detection * 10^(-alpha d / 10) = min_rate` for
/// `d`. The loss model's own distance is ignored.
pub fn radius_report(
    pair_rate_hz: f64,
    loss: &LossModel,
    min_client_rate_hz: f64,
) -> Result<ServiceRadius> {
    loss.validate()?;
    if !(pair_rate_hz > 0.0 && min_client_rate_hz > 0.0)
        || !pair_rate_hz.is_finite()
        || !min_client_rate_hz.is_finite()
    {
        return Err(Error::domain("rates must be positive"));
    }
    let at_source = client_rate(pair_rate_hz, loss, 0.0);
    if at_source < min_client_rate_hz {
        return Ok(ServiceRadius::Unreachable);
    }
    if loss.fiber_db_per_km == 0.0 {
        return Ok(ServiceRadius::Unbounded);
    }
    Ok(ServiceRadius::Km(
        10.0 / loss.fiber_db_per_km * (at_source / min_client_rate_hz).log10(),
    ))
}
