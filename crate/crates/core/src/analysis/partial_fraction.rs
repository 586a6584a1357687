//! CDF of a signed linear combination of independent exponentials.
//!
//! For `W = sum_l c_l E_l` with `E_l ~ Exp(rate_l)` and poles
//! `a_l = rate_l / c_l`, the survival function at `x >= 0` is
//!
//! ```text
//! P(W > x) = sum_{l : c_l > 0} Psi_l exp(-a_l x),
//! Psi_l    = prod_{i != l} a_i / (a_i - a_l)
//! ```
//!
//! where the product runs over every nonzero term, negative poles included.
//! Negative terms enter through `E[exp(-a_l Z)]` of the subtracted part.

use serde::{Deserialize, Serialize};

/// Relative distance under which two poles are treated as coincident.
pub const POLE_COLLISION_RTOL: f64 = 1e-9;
/// Relative shift applied to a coincident pole.
pub const POLE_PERTURBATION: f64 = 1e-6;
/// Raw values further than this outside `[0, 1]` count as clamp events.
pub const CLAMP_SLACK: f64 = 1e-12;

/// Which coefficient set evaluates the survival sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClosedForm {
    /// `Psi_l exp(-a_l x)`, checked against numerical and Monte Carlo oracles.
    #[default]
    Validated,
    /// Density-weighted variant `Psi_l a_l exp(-a_l x)`, kept for comparison.
    /// It is a density, not a survival function, and does not match the oracles.
    Verbatim,
    /// Fault injection for the validation harness: spacing rates negated.
    #[doc(hidden)]
    NegatedBeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub rate: f64,
}

/// Evaluation result with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PfEval {
    /// Probability clamped to `[0, 1]`.
    pub value: f64,
    pub raw: f64,
    pub clamped: bool,
    /// Number of poles shifted to break a coincidence.
    pub perturbed: usize,
}

impl PfEval {
    pub(crate) fn from_raw(raw: f64, perturbed: usize) -> Self {
        let value = if raw.is_nan() { 1.0 } else { raw.clamp(0.0, 1.0) };
        let clamped = raw.is_nan() || raw < -CLAMP_SLACK || raw > 1.0 + CLAMP_SLACK;
        Self { value, raw, clamped, perturbed }
    }
}

/// `P(sum_l coef_l E_l < x)`.
pub fn linear_exp_cdf(terms: &[Term], x: f64, form: ClosedForm) -> PfEval {
    if terms.iter().all(|t| t.coef == 0.0) {
        return PfEval::from_raw(if x > 0.0 { 1.0 } else { 0.0 }, 0);
    }
    let mut poles = Vec::with_capacity(terms.len());
    if x >= 0.0 {
        let (surv, perturbed) = survival(terms.iter().copied(), x, form, &mut poles);
        PfEval::from_raw(1.0 - surv, perturbed)
    } else {
        // P(W < x) = P(-W > -x)
        let flipped = terms.iter().map(|t| Term { coef: -t.coef, rate: t.rate });
        let (surv, perturbed) = survival(flipped, -x, form, &mut poles);
        PfEval::from_raw(surv, perturbed)
    }
}

/// Survival `P(W > x)` for `x >= 0`, reusing `poles` as scratch.
pub(crate) fn survival(
    terms: impl Iterator<Item = Term>,
    x: f64,
    form: ClosedForm,
    poles: &mut Vec<(f64, bool)>,
) -> (f64, usize) {
    poles.clear();
    poles.extend(terms.filter(|t| t.coef != 0.0).map(|t| (t.rate / t.coef, t.coef > 0.0)));
    if !poles.iter().any(|p| p.1) {
        // W < 0 almost surely
        return (0.0, 0);
    }
    if let Some(surv) = survival_sum(poles, x, form) {
        return (surv, 0);
    }
    let perturbed = separate_positive_poles(poles);
    (survival_sum(poles, x, form).unwrap_or(f64::NAN), perturbed)
}

/// `sum_l Psi_l exp(-a_l x)` over positive poles, or `None` when two
/// positive poles coincide.
fn survival_sum(poles: &[(f64, bool)], x: f64, form: ClosedForm) -> Option<f64> {
    let close = |a: f64, b: f64| (a - b).abs() <= POLE_COLLISION_RTOL * a.abs().max(b.abs());
    for (l, &(al, pl)) in poles.iter().enumerate() {
        if pl && poles[..l].iter().any(|&(ai, pi)| pi && close(ai, al)) {
            return None;
        }
    }
    let num_all: f64 = poles.iter().map(|p| p.0).product();
    let mut surv = 0.0;
    for (l, &(al, positive)) in poles.iter().enumerate() {
        if !positive {
            continue;
        }
        let den = poles[..l].iter().fold(1.0, |d, p| d * (p.0 - al)) * poles[l + 1..].iter().fold(1.0, |d, p| d * (p.0 - al));
        let mut psi = num_all / al / den;
        if !psi.is_finite() || psi == 0.0 {
            // products left the float range; take the ratios one by one
            psi = poles.iter().enumerate().filter(|&(i, _)| i != l).map(|(_, &(ai, _))| ai / (ai - al)).product();
        }
        let weight = match form {
            ClosedForm::Verbatim => psi * al,
            _ => psi,
        };
        surv += weight * (-al * x).exp();
    }
    Some(surv)
}

/// Shifts positive poles that coincide (within [`POLE_COLLISION_RTOL`]) apart.
fn separate_positive_poles(poles: &mut [(f64, bool)]) -> usize {
    let mut idx: Vec<usize> = (0..poles.len()).filter(|&i| poles[i].1).collect();
    if idx.len() < 2 {
        return 0;
    }
    idx.sort_by(|&a, &b| poles[a].0.total_cmp(&poles[b].0));
    let mut shifted = 0;
    // compare against the unshifted neighbour so runs of equal poles fan out
    let mut prev = poles[idx[0]].0;
    for w in 1..idx.len() {
        let below = poles[idx[w - 1]].0;
        let cur = &mut poles[idx[w]].0;
        let orig = *cur;
        if (orig - prev).abs() <= POLE_COLLISION_RTOL * orig.abs().max(prev.abs()) {
            *cur = below * (1.0 + POLE_PERTURBATION);
            shifted += 1;
        }
        prev = orig;
    }
    shifted
}
