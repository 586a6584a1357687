//! Per-realization SIC decoding with error propagation, inter-cell
//! interference and macro-diversity selection combining.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{FadingDraw, NetworkScene};
use crate::controller::{decoding_order, DecodingOrder, Plan};
use crate::error::{Error, Result};
use crate::units::capacity;

/// What a base does after a failed SIC stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    /// Keep decoding; the failed signal stays as undecodable interference.
    #[default]
    FullPropagation,
    /// Declare every remaining user at this base failed.
    TruncateOnFailure,
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeMode::FullPropagation => "full",
            DecodeMode::TruncateOnFailure => "truncate",
        })
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full-propagation" => Ok(DecodeMode::FullPropagation),
            "truncate" | "truncate-on-failure" => Ok(DecodeMode::TruncateOnFailure),
            _ => Err(Error::Config(format!("unknown decode mode '{s}'"))),
        }
    }
}

/// One SIC iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SicStep {
    pub user: usize,
    /// Receive SNR of the user at this base.
    pub gamma: f64,
    pub sinr: f64,
    pub capacity: f64,
    pub rate: f64,
    pub success: bool,
    /// Accumulated undecodable interference seen by this stage.
    pub undecodable: f64,
    /// Signal of the users not yet processed.
    pub undetected: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SicTrace {
    pub base: usize,
    pub intercell: f64,
    pub steps: Vec<SicStep>,
}

impl SicTrace {
    /// Undecodable interference left after the last stage.
    pub fn residual(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.undecodable + if s.success { 0.0 } else { s.gamma })
    }

    /// Per-user success flags at this base (None for users it does not decode).
    pub fn flags(&self, n_users: usize) -> Vec<Option<bool>> {
        let mut f = vec![None; n_users];
        for s in &self.steps {
            f[s.user] = Some(s.success);
        }
        f
    }
}

/// Outcome of one fading realization after selection combining.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationResult {
    pub success: Vec<bool>,
    pub goodput: Vec<f64>,
    pub total: f64,
}

/// `gamma[k][b] = P_k g_{k,b} |H_{k,b}|^2`.
pub fn receive_snr(plan: &Plan, scene: &NetworkScene, fading: &FadingDraw) -> Result<Vec<Vec<f64>>> {
    let k = plan.n_users();
    if scene.n_users() != k || fading.h.len() != k || scene.gains.len() != k {
        return Err(Error::Dimension("plan, scene and fading disagree on user count".into()));
    }
    let n_b = plan.n_bases();
    if scene.n_bases() != n_b || fading.h.iter().any(|r| r.len() != n_b) {
        return Err(Error::Dimension("plan, scene and fading disagree on base count".into()));
    }
    Ok((0..k)
        .map(|u| (0..n_b).map(|b| plan.power[u] * scene.gains[u][b] * fading.power(u, b)).collect())
        .collect())
}

/// SIC at one base along `order`.
pub fn sic_decode(plan: &Plan, order: &DecodingOrder, snr: &[Vec<f64>], mode: DecodeMode) -> Result<SicTrace> {
    sic_decode_with_residual(plan, order, snr, mode, 0.0)
}

/// As [`sic_decode`], with `residual` undecodable interference present
/// before the first stage.
pub fn sic_decode_with_residual(
    plan: &Plan,
    order: &DecodingOrder,
    snr: &[Vec<f64>],
    mode: DecodeMode,
    residual: f64,
) -> Result<SicTrace> {
    let b = order.base;
    let mut expected = plan.decode_set(b);
    let mut got = order.order.clone();
    expected.sort_unstable();
    got.sort_unstable();
    if expected != got {
        return Err(Error::InvalidParameter(format!("order at base {b} does not cover its active users")));
    }
    for &k in &order.order {
        let r = plan.rates[k];
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::Config(format!("rate of active user {k} is undefined")));
        }
    }
    let intercell: f64 = plan.interferers(b).iter().map(|&i| snr[i][b]).sum();
    let gamma: Vec<f64> = order.order.iter().map(|&k| snr[k][b]).collect();
    let rates: Vec<f64> = order.order.iter().map(|&k| plan.rates[k]).collect();
    let steps = run_stages(&order.order, &gamma, &rates, intercell, mode, residual);
    Ok(SicTrace { base: b, intercell, steps })
}

/// Core SIC loop over users already in decoding order.
pub(crate) fn run_stages(
    users: &[usize],
    gamma: &[f64],
    rates: &[f64],
    intercell: f64,
    mode: DecodeMode,
    residual: f64,
) -> Vec<SicStep> {
    let n = users.len();
    // Suffix sums keep the undetected term exact instead of subtracting.
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + gamma[i];
    }
    let mut undecodable = residual;
    let mut truncated = false;
    let mut steps = Vec::with_capacity(n);
    for i in 0..n {
        let undetected = suffix[i + 1];
        let sinr = gamma[i] / (1.0 + undecodable + undetected + intercell);
        let c = capacity(sinr);
        let success = !truncated && rates[i] < c;
        steps.push(SicStep { user: users[i], gamma: gamma[i], sinr, capacity: c, rate: rates[i], success, undecodable, undetected });
        if !success {
            undecodable += gamma[i];
            if mode == DecodeMode::TruncateOnFailure {
                truncated = true;
            }
        }
    }
    steps
}

/// Selection combining: user `k` succeeds if any base in `B_k` decoded it.
/// `flags[b][k]` is the outcome at base `b`.
pub fn mdiv_combine(flags: &[Vec<Option<bool>>], mdiv: &[Vec<usize>]) -> Vec<bool> {
    mdiv.iter()
        .enumerate()
        .map(|(k, bases)| bases.iter().any(|&b| flags.get(b).and_then(|f| f[k]).unwrap_or(false)))
        .collect()
}

/// Per-user goodput `r_k * success_k` and its sum.
pub fn instantaneous_goodput(success: &[bool], rates: &[f64]) -> (Vec<f64>, f64) {
    let rho: Vec<f64> = success.iter().zip(rates).map(|(&s, &r)| if s { r } else { 0.0 }).collect();
    let total = rho.iter().sum();
    (rho, total)
}

/// Runs every base in decreasing-SNR order and combines the results.
pub fn simulate_realization(
    plan: &Plan,
    scene: &NetworkScene,
    fading: &FadingDraw,
    mode: DecodeMode,
) -> Result<(RealizationResult, Vec<SicTrace>)> {
    let snr = receive_snr(plan, scene, fading)?;
    let mut traces = Vec::with_capacity(plan.n_bases());
    for b in 0..plan.n_bases() {
        let order = decoding_order(plan, scene, fading, b)?;
        traces.push(sic_decode(plan, &order, &snr, mode)?);
    }
    let flags: Vec<_> = traces.iter().map(|t| t.flags(plan.n_users())).collect();
    let success = mdiv_combine(&flags, &plan.mdiv);
    let (goodput, total) = instantaneous_goodput(&success, &plan.rates);
    Ok((RealizationResult { success, goodput, total }, traces))
}

/// Fast path used by the Monte Carlo loops: SIC at every base given a
/// precomputed SNR matrix and per-base decode sets / interferer lists.
pub(crate) fn decode_all(
    plan: &Plan,
    snr: &[Vec<f64>],
    decode_sets: &[Vec<usize>],
    interferers: &[Vec<usize>],
    mode: DecodeMode,
) -> Vec<bool> {
    let k = plan.n_users();
    let mut success = vec![false; k];
    let mut users = Vec::with_capacity(k);
    let mut gamma = Vec::with_capacity(k);
    let mut rates = Vec::with_capacity(k);
    for b in 0..plan.n_bases() {
        users.clear();
        users.extend_from_slice(&decode_sets[b]);
        crate::controller::sort_by_snr_desc(&mut users, |u| snr[u][b]);
        gamma.clear();
        gamma.extend(users.iter().map(|&u| snr[u][b]));
        rates.clear();
        rates.extend(users.iter().map(|&u| plan.rates[u]));
        let omega: f64 = interferers[b].iter().map(|&i| snr[i][b]).sum();
        for s in run_stages(&users, &gamma, &rates, omega, mode, 0.0) {
            success[s.user] |= s.success;
        }
    }
    success
}

/// Largest decode set searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 8;

/// Like [`decode_all`], but each base tries every decoding order and keeps
/// the one with the largest decoded sum rate at that base. Ties keep the
/// earliest order visited, starting from decreasing SNR. Bases are
/// optimized separately, which is a genie reference rather than a joint
/// optimum when users are decoded at several bases.
pub(crate) fn decode_all_exhaustive(
    plan: &Plan,
    snr: &[Vec<f64>],
    decode_sets: &[Vec<usize>],
    interferers: &[Vec<usize>],
    mode: DecodeMode,
) -> Result<Vec<bool>> {
    let mut success = vec![false; plan.n_users()];
    for b in 0..plan.n_bases() {
        let mut users = decode_sets[b].clone();
        if users.len() > EXHAUSTIVE_LIMIT {
            return Err(Error::ActiveSetTooLarge { size: users.len(), limit: EXHAUSTIVE_LIMIT });
        }
        crate::controller::sort_by_snr_desc(&mut users, |u| snr[u][b]);
        let omega: f64 = interferers[b].iter().map(|&i| snr[i][b]).sum();
        let mut best: Option<(f64, Vec<SicStep>)> = None;
        let mut eval = |order: &[usize]| {
            let gamma: Vec<f64> = order.iter().map(|&u| snr[u][b]).collect();
            let rates: Vec<f64> = order.iter().map(|&u| plan.rates[u]).collect();
            let steps = run_stages(order, &gamma, &rates, omega, mode, 0.0);
            let value: f64 = steps.iter().filter(|s| s.success).map(|s| s.rate).sum();
            if best.as_ref().is_none_or(|(v, _)| value > *v) {
                best = Some((value, steps));
            }
        };
        // Heap's algorithm, identity first
        let n = users.len();
        eval(&users);
        let mut c = vec![0usize; n];
        let mut i = 1;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    users.swap(0, i);
                } else {
                    users.swap(c[i], i);
                }
                eval(&users);
                c[i] += 1;
                i = 1;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        if let Some((_, steps)) = best {
            for s in steps {
                success[s.user] |= s.success;
            }
        }
    }
    Ok(success)
}
