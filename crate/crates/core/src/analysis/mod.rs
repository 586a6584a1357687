//! Closed-form outage analysis: ordered exponential SNRs, stage outage,
//! order probabilities, per-user bounds and rate planning.

mod bound;
mod order;
mod partial_fraction;
mod solver;
mod spacing;

pub use bound::{
    goodput_lower_bound, per_user_outage_bound, AnalysisConfig, BaseOrders, EnumMode, OrderTerm,
    OutageAnalyzer, OutageReport, StageRate, UnionBound, UserOutage,
};
pub use order::{decode_order_probability, enumerate_orders, order_probability, sample_orders, WeightedOrder};
pub use partial_fraction::{linear_exp_cdf, ClosedForm, PfEval, Term};
pub(crate) use solver::bracket_root;
pub use solver::{plan_rates, solve_rate, solve_rates, RatePlan, SolveReport, MAX_RATE};
pub use spacing::{conditional_outage, spacing_betas, spacing_model, SpacingModel};
