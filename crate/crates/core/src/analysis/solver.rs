//! Rate planning against a per-user outage target.
//!
//! A user's bound grows with its own rate and with the rates of the users
//! decoded before it, so the rates are coupled. They are solved by
//! Gauss-Seidel sweeps: each user in turn gets the rate that puts its bound
//! at the target given everybody else's current rate.

use super::bound::{AnalysisConfig, OutageAnalyzer};
use crate::channel::NetworkScene;
use crate::controller::{onoff_power, OnOffReport, Plan};
use crate::error::{Error, Result};
use serde::Serialize;

/// Rates are never raised beyond this many bit/s/Hz.
pub const MAX_RATE: f64 = 64.0;
/// Sweeps after which updates are damped.
const DAMPING_AFTER: usize = 20;

/// Root of the nondecreasing `f` on `[0, MAX_RATE]`.
///
/// Returns 0 when `f(0) >= 0`. The bracket starts around `warm` when given.
/// Regula falsi with the Illinois modification refines it until `|f|` is
/// far below `tol` or the bracket collapses.
pub(crate) fn bracket_root(f: &mut impl FnMut(f64) -> f64, warm: Option<f64>, tol: f64) -> Result<f64> {
    let f0 = f(0.0);
    if f0.is_nan() {
        return Err(Error::Domain("outage bound is undefined at zero rate".into()));
    }
    if f0 >= 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut flo, mut hi, mut fhi);
    match warm.filter(|w| *w > 0.0 && *w < MAX_RATE) {
        Some(w) => {
            let fw = f(w);
            if fw < 0.0 {
                lo = w;
                flo = fw;
                hi = (w * 1.05).max(w + 1e-3);
                fhi = f(hi);
                while fhi < 0.0 {
                    lo = hi;
                    flo = fhi;
                    hi *= 2.0;
                    if hi > MAX_RATE {
                        return Ok(MAX_RATE);
                    }
                    fhi = f(hi);
                }
            } else {
                hi = w;
                fhi = fw;
                lo = w * 0.95;
                flo = f(lo);
                while flo >= 0.0 {
                    hi = lo;
                    fhi = flo;
                    lo *= 0.5;
                    if lo < 1e-9 {
                        lo = 0.0;
                        flo = f0;
                        break;
                    }
                    flo = f(lo);
                }
            }
        }
        None => {
            lo = 0.0;
            flo = f0;
            hi = 1.0;
            fhi = f(hi);
            while fhi < 0.0 {
                lo = hi;
                flo = fhi;
                hi *= 2.0;
                if hi > MAX_RATE {
                    return Ok(MAX_RATE);
                }
                fhi = f(hi);
            }
        }
    }
    let ftol = tol * 1e-6;
    let mut side = 0i8;
    for _ in 0..200 {
        if fhi.abs() <= ftol {
            return Ok(hi);
        }
        if flo.abs() <= ftol {
            return Ok(lo);
        }
        if hi - lo <= 1e-12 * (1.0 + hi) {
            break;
        }
        let mut x = hi - fhi * (hi - lo) / (fhi - flo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x);
        if fx < 0.0 {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    // the Illinois halving distorts the stored values; re-evaluate
    let (a, b) = (f(lo), f(hi));
    Ok(if a.abs() <= b.abs() { lo } else { hi })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub rates: Vec<f64>,
    pub converged: bool,
    pub rounds: usize,
    /// Largest `|bound - eps|` over users with a positive rate, and shortfall
    /// `eps - bound` over users held at zero.
    pub max_residual: f64,
    /// Active users whose target is out of reach at any rate.
    pub unreachable: Vec<usize>,
}

impl OutageAnalyzer {
    /// Solves all active rates for the common target `eps`, starting from the
    /// current rates.
    pub fn solve_all(&mut self, eps: f64) -> Result<SolveReport> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Domain(format!("target outage must be in (0, 1), got {eps}")));
        }
        let mut order: Vec<usize> = (0..self.n_users()).filter(|&k| self.is_active(k)).collect();
        order.sort_by(|&a, &b| self.serving_snr(b).total_cmp(&self.serving_snr(a)).then(a.cmp(&b)));
        let tol = self.config.tolerance;
        let mut rounds = 0;
        let mut converged = order.is_empty();
        let mut max_residual = 0.0;
        while !converged && rounds < self.config.max_rounds {
            rounds += 1;
            let damp = if rounds > DAMPING_AFTER { 0.5 } else { 1.0 };
            for &k in &order {
                let old = self.rates[k];
                let r = self.solve_user(k, eps, (old > 0.0).then_some(old))?;
                let new = old + damp * (r - old);
                if new != old {
                    self.set_user_rate(k, new)?;
                }
            }
            max_residual = self.residual(&order, eps)?;
            converged = max_residual <= tol;
        }
        let unreachable = order.iter().copied().filter(|&k| self.rates[k] == 0.0).collect();
        Ok(SolveReport { rates: self.rates.clone(), converged, rounds, max_residual, unreachable })
    }

    fn residual(&self, users: &[usize], eps: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &k in users {
            let b = self.user_bound(k)?;
            let r = self.rates[k];
            let gap = if r == 0.0 {
                (eps - b).max(0.0)
            } else if r >= MAX_RATE {
                (b - eps).max(0.0)
            } else {
                (b - eps).abs()
            };
            worst = worst.max(gap);
        }
        Ok(worst)
    }
}

/// Rate of user `k` that meets `eps` with the other rates taken from `plan`.
pub fn solve_rate(
    k: usize,
    eps: f64,
    plan: &Plan,
    scene: &NetworkScene,
    config: &AnalysisConfig,
) -> Result<f64> {
    OutageAnalyzer::new(plan, scene, config)?.solve_user(k, eps, None)
}

/// Jointly solved rates for all active users of `plan`.
pub fn solve_rates(
    eps: f64,
    plan: &Plan,
    scene: &NetworkScene,
    config: &AnalysisConfig,
) -> Result<SolveReport> {
    OutageAnalyzer::new(plan, scene, config)?.solve_all(eps)
}

/// Outcome of [`plan_rates`].
#[derive(Debug, Clone)]
pub struct RatePlan {
    pub onoff: OnOffReport,
    /// Solver report for the final active set; `None` when every user was switched off.
    pub solve: Option<SolveReport>,
    pub analyzer: Option<OutageAnalyzer>,
}

/// On/off power control combined with rate solving: users whose solved
/// rate stays below `rate_floor` are switched off and the rest re-solved.
/// The final rates are written into `plan`.
pub fn plan_rates(
    eps: f64,
    plan: &mut Plan,
    scene: &NetworkScene,
    config: &AnalysisConfig,
    rate_floor: f64,
) -> Result<RatePlan> {
    let mut last: Option<(SolveReport, OutageAnalyzer)> = None;
    let onoff = onoff_power(plan, rate_floor, |p| {
        let mut warm = p.clone();
        if let Some((rep, _)) = &last {
            for k in 0..warm.n_users() {
                warm.rates[k] = if warm.is_active(k) { rep.rates[k] } else { 0.0 };
            }
        }
        let mut a = OutageAnalyzer::new(&warm, scene, config)?;
        let rep = a.solve_all(eps)?;
        let rates = rep.rates.clone();
        last = Some((rep, a));
        Ok(rates)
    })?;
    if plan.active_users().is_empty() {
        return Ok(RatePlan { onoff, solve: None, analyzer: None });
    }
    let (solve, analyzer) = last.expect("solver ran at least once");
    Ok(RatePlan { onoff, solve: Some(solve), analyzer: Some(analyzer) })
}
