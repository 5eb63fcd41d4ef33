//! Loss-tolerant EPR-steering: measurement strategies, the cheating bound
//! `C_n(eta)`, local-hidden-state cheaters, and witness evaluation.

mod bound;
mod lhs;
mod strategy;
mod witness;

pub use bound::{
    bound_slope, deterministic_bound, herald_table, iterated_herald_values, loss_tolerant_bound,
    HeraldClass, HeraldTable, Maximizer,
};
pub use lhs::{CheatStrategyLHS, LhsMixture};
pub use strategy::{make_strategy, MeasurementStrategy, SUPPORTED_N};
pub use witness::{evaluate_witness, report_from_tallies, SettingTally, WitnessReport};
