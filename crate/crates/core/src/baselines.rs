//! Comparison schemes: CDMA with equal long-term received power, FDMA at
//! peak power, and joint ML detection with common outage.

use crate::analysis::{bracket_root, linear_exp_cdf, ClosedForm, Term};
use crate::channel::NetworkScene;
use crate::controller::{Association, Plan};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::units::{capacity, rate_threshold};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Exp1};

/// Largest active set for which the ML region is checked subset by subset.
pub const ML_SUBSET_LIMIT: usize = 20;

/// Solves `cdf(theta) = eps` for a nondecreasing `cdf`, searching over
/// `s = log2(1 + theta)`. Returns `theta`.
fn solve_threshold(eps: f64, mut cdf: impl FnMut(f64) -> f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("target outage must be in (0, 1), got {eps}")));
    }
    let mut f = |s: f64| cdf(rate_threshold(s)) - eps;
    let s = bracket_root(&mut f, None, 1e-6)?;
    Ok(rate_threshold(s))
}

/// Equal-received-power CDMA with orthogonal spreading inside each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CdmaPlan {
    pub serving: Vec<usize>,
    /// Long-term transmit power in mW.
    pub power: Vec<f64>,
    /// Spreading factor of every cell (its user count).
    pub spreading: Vec<usize>,
    /// SINR threshold of every cell.
    pub threshold: Vec<f64>,
    /// Common rate of every cell in bit/s/Hz.
    pub cell_rate: Vec<f64>,
}

impl CdmaPlan {
    pub fn rate(&self, k: usize) -> f64 {
        self.cell_rate[self.serving[k]]
    }

    /// Per-user success for one fading draw; `fade[k][b] = |H_{k,b}|^2`.
    pub fn success(&self, scene: &NetworkScene, fade: &[Vec<f64>]) -> Vec<bool> {
        let n_b = self.spreading.len();
        // received power per base from every user
        let mut total = vec![0.0; n_b];
        let mut own = vec![0.0; n_b];
        let rx: Vec<Vec<f64>> = (0..self.serving.len())
            .map(|k| (0..n_b).map(|b| self.power[k] * scene.gains[k][b] * fade[k][b]).collect())
            .collect();
        for (k, row) in rx.iter().enumerate() {
            for b in 0..n_b {
                total[b] += row[b];
                if self.serving[k] == b {
                    own[b] += row[b];
                }
            }
        }
        (0..self.serving.len())
            .map(|k| {
                let b = self.serving[k];
                let omega = total[b] - own[b];
                rx[k][b] / (1.0 + omega) > self.threshold[b]
            })
            .collect()
    }
}

/// Every user is on; powers are backed off so that all users of a cell
/// arrive with the long-term power of the cell's weakest user at `p_max`.
/// The common cell rate meets outage `eps` for that received power with
/// inter-cell interference included.
pub fn cdma_equal_sinr(scene: &NetworkScene, assoc: &Association, p_max: f64, eps: f64) -> Result<CdmaPlan> {
    let n_b = scene.n_bases();
    let k = scene.n_users();
    if assoc.serving.len() != k || assoc.sets.len() != n_b {
        return Err(Error::Dimension("association does not match the scene".into()));
    }
    let mut power = vec![0.0; k];
    let mut target = vec![0.0; n_b];
    for b in 0..n_b {
        let members = &assoc.sets[b];
        if members.is_empty() {
            continue;
        }
        let g_min = members.iter().map(|&u| scene.gains[u][b]).fold(f64::INFINITY, f64::min);
        target[b] = p_max * g_min;
        for &u in members {
            power[u] = target[b] / scene.gains[u][b];
        }
    }
    let mut threshold = vec![f64::INFINITY; n_b];
    let mut cell_rate = vec![0.0; n_b];
    let spreading: Vec<usize> = assoc.sets.iter().map(Vec::len).collect();
    for b in 0..n_b {
        if spreading[b] == 0 {
            continue;
        }
        let inter: Vec<f64> = (0..k)
            .filter(|&i| assoc.serving[i] != b)
            .map(|i| 1.0 / (power[i] * scene.gains[i][b]))
            .collect();
        let lam = 1.0 / target[b];
        let theta = solve_threshold(eps, |t| {
            let mut terms = vec![Term { coef: 1.0, rate: lam }];
            terms.extend(inter.iter().map(|&l| Term { coef: -t, rate: l }));
            linear_exp_cdf(&terms, t, ClosedForm::Validated).value
        })?;
        let u = spreading[b] as f64;
        threshold[b] = theta;
        cell_rate[b] = capacity(u * theta) / u;
    }
    Ok(CdmaPlan { serving: assoc.serving.clone(), power, spreading, threshold, cell_rate })
}

/// Orthogonal FDMA at peak power with independent band layouts per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FdmaPlan {
    pub serving: Vec<usize>,
    /// `[lo, hi)` band of every user as a fraction of the spectrum.
    pub band: Vec<(f64, f64)>,
    /// Interferers of every user with overlap weight `o_{k,i} / f_i`.
    pub overlap: Vec<Vec<(usize, f64)>>,
    /// SINR threshold of every user.
    pub threshold: Vec<f64>,
    pub rates: Vec<f64>,
    pub p_max: f64,
}

impl FdmaPlan {
    pub fn width(&self, k: usize) -> f64 {
        self.band[k].1 - self.band[k].0
    }

    pub fn success(&self, scene: &NetworkScene, fade: &[Vec<f64>]) -> Vec<bool> {
        (0..self.serving.len())
            .map(|k| {
                let b = self.serving[k];
                let gamma = self.p_max * scene.gains[k][b] * fade[k][b];
                let share: f64 = self.overlap[k]
                    .iter()
                    .map(|&(i, w)| w * self.p_max * scene.gains[i][b] * fade[i][b])
                    .sum();
                gamma / (self.width(k) + share) > self.threshold[k]
            })
            .collect()
    }
}

/// Splits each cell's spectrum into equal bands, assigned by a random
/// permutation, and solves every user's rate for outage `eps`.
pub fn fdma_peak(
    scene: &NetworkScene,
    assoc: &Association,
    p_max: f64,
    eps: f64,
    rng: &mut StreamRng,
) -> Result<FdmaPlan> {
    let k = scene.n_users();
    if assoc.serving.len() != k || assoc.sets.len() != scene.n_bases() {
        return Err(Error::Dimension("association does not match the scene".into()));
    }
    let mut band = vec![(0.0, 0.0); k];
    for members in &assoc.sets {
        let u = members.len();
        let mut slots: Vec<usize> = (0..u).collect();
        slots.shuffle(rng);
        for (&user, &s) in members.iter().zip(&slots) {
            band[user] = (s as f64 / u as f64, (s + 1) as f64 / u as f64);
        }
    }
    let mut overlap = vec![Vec::new(); k];
    for a in 0..k {
        for i in 0..k {
            if assoc.serving[i] == assoc.serving[a] {
                continue;
            }
            let o = band[a].1.min(band[i].1) - band[a].0.max(band[i].0);
            if o > 0.0 {
                overlap[a].push((i, o / (band[i].1 - band[i].0)));
            }
        }
    }
    let mut threshold = vec![0.0; k];
    let mut rates = vec![0.0; k];
    for a in 0..k {
        let b = assoc.serving[a];
        let f = band[a].1 - band[a].0;
        let lam = 1.0 / (p_max * scene.gains[a][b]);
        let inter: Vec<(f64, f64)> =
            overlap[a].iter().map(|&(i, w)| (w, 1.0 / (p_max * scene.gains[i][b]))).collect();
        let theta = solve_threshold(eps, |t| {
            let mut terms = vec![Term { coef: 1.0, rate: lam }];
            terms.extend(inter.iter().map(|&(w, l)| Term { coef: -t * w, rate: l }));
            linear_exp_cdf(&terms, t * f, ClosedForm::Validated).value
        })?;
        threshold[a] = theta;
        rates[a] = f * capacity(theta);
    }
    Ok(FdmaPlan { serving: assoc.serving.clone(), band, overlap, threshold, rates, p_max })
}

fn check_ml_inputs(rates: &[f64], gamma: &[f64]) -> Result<()> {
    if rates.len() != gamma.len() {
        return Err(Error::Dimension("rates and SNRs differ in length".into()));
    }
    if rates.len() > ML_SUBSET_LIMIT {
        return Err(Error::ActiveSetTooLarge { size: rates.len(), limit: ML_SUBSET_LIMIT });
    }
    Ok(())
}

/// `min_S C_S / R_S` over nonempty subsets with positive rate sum, where
/// `C_S = log2(1 + sum_S gamma / (1 + omega))`. The rate vector `a * rates`
/// lies strictly inside the capacity region iff `a` is below this value.
/// Subsets are visited in Gray-code order so each step updates one term.
pub fn ml_critical_scale(rates: &[f64], gamma: &[f64], omega: f64) -> Result<f64> {
    check_ml_inputs(rates, gamma)?;
    let n = rates.len();
    let noise = 1.0 + omega;
    let (mut rs, mut gs) = (0.0, 0.0);
    let mut best = f64::INFINITY;
    let mut prev = 0usize;
    for i in 1usize..(1 << n) {
        let gray = i ^ (i >> 1);
        let bit = (gray ^ prev).trailing_zeros() as usize;
        if gray & (1 << bit) != 0 {
            rs += rates[bit];
            gs += gamma[bit];
        } else {
            rs -= rates[bit];
            gs -= gamma[bit];
        }
        prev = gray;
        if rs > 0.0 {
            best = best.min(capacity(gs.max(0.0) / noise) / rs);
        }
    }
    Ok(best)
}

/// Common outage: the rate vector is not strictly inside the instantaneous
/// capacity region of the users decoded jointly at one base.
pub fn ml_common_outage(rates: &[f64], gamma: &[f64], omega: f64) -> Result<bool> {
    Ok(ml_critical_scale(rates, gamma, omega)? <= 1.0)
}

/// Rates for joint ML detection on the activity pattern of `plan`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlPlan {
    pub rates: Vec<f64>,
    /// Common scale applied to the single-user rates.
    pub scale: f64,
}

/// Single-user outage-`eps` rate for mean SNR `m`: `log2(1 - m ln(1 - eps))`.
pub fn single_user_rate(mean_snr: f64, eps: f64) -> f64 {
    capacity(-mean_snr * (-eps).ln_1p())
}

/// Common-outage rate planning. Every active user starts from its
/// single-user rate at the serving base; one scale factor shrinks the whole
/// vector until each user's common-outage probability, estimated over
/// `draws` calibration fading draws, is at most `eps`.
pub fn ml_plan(plan: &Plan, scene: &NetworkScene, eps: f64, draws: usize, rng: &mut StreamRng) -> Result<MlPlan> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("target outage must be in (0, 1), got {eps}")));
    }
    if draws == 0 {
        return Err(Error::InvalidParameter("calibration draws must be positive".into()));
    }
    let k = plan.n_users();
    let n_b = plan.n_bases();
    let base_rate: Vec<f64> = (0..k)
        .map(|u| {
            if plan.is_active(u) {
                single_user_rate(plan.power[u] * scene.gains[u][plan.assoc.serving[u]], eps)
            } else {
                0.0
            }
        })
        .collect();
    let active = plan.active_users();
    if active.is_empty() {
        return Ok(MlPlan { rates: vec![0.0; k], scale: 0.0 });
    }
    let sets: Vec<Vec<usize>> = (0..n_b).map(|b| plan.decode_set(b)).collect();
    let mut crit: Vec<Vec<f64>> = vec![Vec::with_capacity(draws); k];
    let mut snr = vec![vec![0.0; n_b]; k];
    let mut per_base = vec![0.0; n_b];
    for _ in 0..draws {
        for u in 0..k {
            for b in 0..n_b {
                let e: f64 = Exp1.sample(rng);
                snr[u][b] = plan.power[u] * scene.gains[u][b] * e;
            }
        }
        for b in 0..n_b {
            let omega: f64 = (0..k).filter(|u| !sets[b].contains(u)).map(|u| snr[u][b]).sum();
            let r: Vec<f64> = sets[b].iter().map(|&u| base_rate[u]).collect();
            let g: Vec<f64> = sets[b].iter().map(|&u| snr[u][b]).collect();
            per_base[b] = if r.is_empty() { 0.0 } else { ml_critical_scale(&r, &g, omega)? };
        }
        for &u in &active {
            crit[u].push(plan.mdiv[u].iter().map(|&b| per_base[b]).fold(0.0, f64::max));
        }
    }
    // outage at scale a happens when a >= crit; keep at most eps * draws of those
    let m = (eps * draws as f64).floor() as usize;
    let mut scale = f64::INFINITY;
    for &u in &active {
        let c = &mut crit[u];
        c.sort_by(f64::total_cmp);
        let a = if m == 0 { 0.5 * c[0] } else { 0.5 * (c[m - 1] + c[m]) };
        scale = scale.min(a);
    }
    let rates = base_rate.iter().map(|r| r * scale).collect();
    Ok(MlPlan { rates, scale })
}
