//! Per-user outage bound and goodput lower bound.
//!
//! For every base the analyzer keeps a table of decoding orders with their
//! probabilities and the conditional outage of every stage. A user's bound
//! at base `b` sums the stage outages up to its own position over all
//! orders. Fading is independent across bases, so the bases in `B_k` fail
//! independently given the macro state and the per-base factors multiply.

use super::order::{enumerate_orders, sample_orders};
use super::partial_fraction::ClosedForm;
use super::spacing::{fill_betas, stage_outage, Scratch};
use crate::channel::NetworkScene;
use crate::controller::Plan;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::units::rate_threshold;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

/// Stream tag for order sampling.
const ORDER_STREAM: u64 = 0x6f72_6465_72;

/// How stage outages accumulate into a user's bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnionBound {
    /// `sum_{i <= pos} sum_{j <= i} P(O_j = 0)`: stage `j` is counted once per
    /// later iteration up to the user's own.
    #[default]
    Nested,
    /// `sum_{j <= pos} P(O_j = 0)`: the plain union over the stages that
    /// must succeed. Tighter, still a valid upper bound.
    Single,
}

impl UnionBound {
    /// Multiplicity of stage `j` in the bound of the user decoded at `pos` (1-based).
    #[inline]
    fn weight(self, j: usize, pos: usize) -> f64 {
        match self {
            UnionBound::Nested => (pos - j + 1) as f64,
            UnionBound::Single => 1.0,
        }
    }
}

/// Which threshold enters the stage events in a user's bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageRate {
    /// Stage `j` is tested at the rate of the user decoded there. This is
    /// the event that truncates user `k`, so the bound dominates
    /// truncated SIC.
    #[default]
    Decoded,
    /// Every stage is tested at user `k`'s own threshold. Users decouple and
    /// each bound depends on one rate only. Not a bound on truncated SIC
    /// when stronger users carry higher rates.
    Own,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub closed_form: ClosedForm,
    pub union_bound: UnionBound,
    pub stage_rate: StageRate,
    /// Largest decode set whose orders are enumerated exactly.
    pub enumeration_cap: usize,
    /// Fading draws used to sample orders above the cap.
    pub order_samples: usize,
    /// Orders less likely than this are dropped and their mass reported.
    pub prune: f64,
    /// Keep inter-cell interference as negative exponential terms.
    pub intercell: bool,
    /// Absolute tolerance of `|bound - eps|` for solved rates.
    pub tolerance: f64,
    /// Gauss-Seidel sweeps over the coupled rates.
    pub max_rounds: usize,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            closed_form: ClosedForm::Validated,
            union_bound: UnionBound::Nested,
            stage_rate: StageRate::Decoded,
            enumeration_cap: 7,
            order_samples: 20_000,
            prune: 1e-10,
            intercell: true,
            tolerance: 1e-4,
            max_rounds: 60,
            seed: 0,
        }
    }
}

impl AnalysisConfig {
    /// Settings used when planning rates inside experiments: the single
    /// union over stages. The nested sum makes the strongest user's stage
    /// outage a floor of roughly `eps` on every later user's bound, which
    /// leaves about one active user per cell.
    pub fn planning() -> Self {
        Self { union_bound: UnionBound::Single, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enumeration_cap == 0 || self.enumeration_cap > 10 {
            return Err(Error::InvalidParameter("enumeration cap must be in 1..=10".into()));
        }
        if self.order_samples == 0 {
            return Err(Error::InvalidParameter("order samples must be positive".into()));
        }
        if !(0.0..1e-3).contains(&self.prune) {
            return Err(Error::InvalidParameter("prune threshold must be in [0, 1e-3)".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 0.1) {
            return Err(Error::InvalidParameter("tolerance must be in (0, 0.1)".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidParameter("max rounds must be positive".into()));
        }
        Ok(())
    }
}

/// How the orders of one base were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EnumMode {
    Exact { pruned_mass: f64 },
    Sampled { samples: usize },
}

impl fmt::Display for EnumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnumMode::Exact { pruned_mass } if *pruned_mass > 0.0 => {
                write!(f, "exact(pruned={pruned_mass:.1e})")
            }
            EnumMode::Exact { .. } => write!(f, "exact"),
            EnumMode::Sampled { samples } => write!(f, "sampled:{samples}"),
        }
    }
}

#[derive(Debug, Clone)]
struct OrderEntry {
    weight: f64,
    /// Global user ids, strongest first.
    seq: Vec<usize>,
    betas: Vec<f64>,
    /// `cond[j]` is the outage of stage `j + 1`.
    cond: Vec<f64>,
    clamped: Vec<bool>,
}

#[derive(Debug, Clone)]
struct BaseModel {
    users: Vec<usize>,
    inter: Vec<f64>,
    orders: Vec<OrderEntry>,
    mode: EnumMode,
    /// `slots[k]` lists `(order, 0-based position)` of user `k`.
    slots: Vec<Vec<(u32, u32)>>,
    /// `groups[k]`, built on first use; depends only on the order table.
    groups: Vec<OnceLock<Vec<Group>>>,
}

/// Per-base terms of one user's bound with its own stage outage factored out.
struct BaseSlice<'a> {
    /// Contribution of the other users' stages.
    fixed: f64,
    groups: &'a [Group],
}

/// Orders that share the same stage-outage expression for the user.
#[derive(Debug, Clone)]
struct Group {
    pos: usize,
    /// Representative order, whose betas the group uses.
    order: u32,
    weight: f64,
}

/// Bound of one user with per-base factors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserOutage {
    pub user: usize,
    pub rate: f64,
    pub bound: f64,
    /// `(base, clamped factor)` for every base in `B_k`.
    pub per_base: Vec<(usize, f64)>,
    pub clamp_count: usize,
    pub enum_mode: String,
    /// Standard error from order sampling; zero when enumerated exactly.
    pub sampling_se: f64,
}

/// One decoding order with its probability and stage outages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderTerm {
    pub order: Vec<usize>,
    pub probability: f64,
    pub stage_outage: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaseOrders {
    pub base: usize,
    pub mode: EnumMode,
    pub orders: Vec<OrderTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutageReport {
    pub users: Vec<UserOutage>,
    pub bases: Vec<BaseOrders>,
    pub goodput_lower_bound: f64,
    pub clamp_count: usize,
}

/// Closed-form outage machinery for one macro state.
#[derive(Debug, Clone)]
pub struct OutageAnalyzer {
    pub(crate) config: AnalysisConfig,
    pub(crate) mdiv: Vec<Vec<usize>>,
    pub(crate) active: Vec<bool>,
    pub(crate) rates: Vec<f64>,
    /// `mean[k][b] = P_k g_{k,b}`.
    pub(crate) mean: Vec<Vec<f64>>,
    serving: Vec<usize>,
    bases: Vec<BaseModel>,
}

impl OutageAnalyzer {
    /// Builds the order tables for `plan` over `scene`, using `plan.rates`.
    pub fn new(plan: &Plan, scene: &NetworkScene, config: &AnalysisConfig) -> Result<Self> {
        config.validate()?;
        plan.validate()?;
        let n = plan.n_users();
        if scene.n_users() != n || scene.n_bases() != plan.n_bases() || !scene.has_gains() {
            return Err(Error::Dimension("plan and scene disagree".into()));
        }
        let active: Vec<bool> = (0..n).map(|k| plan.is_active(k)).collect();
        let mean: Vec<Vec<f64>> = (0..n)
            .map(|k| scene.gains[k].iter().map(|g| plan.power[k] * g).collect())
            .collect();
        let mut bases = Vec::with_capacity(plan.n_bases());
        for b in 0..plan.n_bases() {
            let users = plan.decode_set(b);
            if users.len() > 64 {
                return Err(Error::ActiveSetTooLarge { size: users.len(), limit: 64 });
            }
            let inter = if config.intercell {
                plan.interferers(b).iter().map(|&i| 1.0 / mean[i][b]).collect()
            } else {
                Vec::new()
            };
            let means: Vec<f64> = users.iter().map(|&u| mean[u][b]).collect();
            let (weighted, mode) = if users.len() <= config.enumeration_cap {
                let (o, pruned_mass) = enumerate_orders(&means, config.prune)?;
                (o, EnumMode::Exact { pruned_mass })
            } else {
                let mut rng = stream(config.seed, &[ORDER_STREAM, b as u64]);
                let o = sample_orders(&means, config.order_samples, &mut rng)?;
                (o, EnumMode::Sampled { samples: config.order_samples })
            };
            let mut slots = vec![Vec::new(); n];
            let mut orders = Vec::with_capacity(weighted.len());
            for (oi, w) in weighted.into_iter().enumerate() {
                let seq: Vec<usize> = w.order.iter().map(|&l| users[l]).collect();
                let mut betas = Vec::with_capacity(seq.len());
                fill_betas(seq.iter().map(|&u| 1.0 / mean[u][b]), &mut betas);
                for (p, &u) in seq.iter().enumerate() {
                    slots[u].push((oi as u32, p as u32));
                }
                let len = seq.len();
                orders.push(OrderEntry {
                    weight: w.weight,
                    seq,
                    betas,
                    cond: vec![0.0; len],
                    clamped: vec![false; len],
                });
            }
            bases.push(BaseModel { users, inter, orders, mode, slots, groups: vec![OnceLock::new(); n] });
        }
        let mut this = Self {
            config: config.clone(),
            mdiv: plan.mdiv.clone(),
            active,
            rates: plan.rates.clone(),
            mean,
            serving: plan.assoc.serving.clone(),
            bases,
        };
        this.refresh();
        Ok(this)
    }

    pub fn n_users(&self) -> usize {
        self.active.len()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.active.get(k).copied().unwrap_or(false)
    }

    /// Mean SNR of user `k` at its serving base.
    pub(crate) fn serving_snr(&self, k: usize) -> f64 {
        self.mean[k][self.serving[k]]
    }

    /// Recomputes every stage outage from the current rates.
    fn refresh(&mut self) {
        let mut scratch = Scratch::default();
        let form = self.config.closed_form;
        for base in &mut self.bases {
            for o in &mut base.orders {
                for p in 0..o.seq.len() {
                    let theta = rate_threshold(self.rates[o.seq[p]]);
                    let e = stage_outage(p + 1, &o.betas, theta, &base.inter, form, &mut scratch);
                    o.cond[p] = e.value;
                    o.clamped[p] = e.clamped;
                }
            }
        }
    }

    /// Replaces all rates and recomputes the tables.
    pub fn set_rates(&mut self, rates: &[f64]) -> Result<()> {
        if rates.len() != self.n_users() {
            return Err(Error::Dimension("rate vector has the wrong length".into()));
        }
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Domain("rates must be nonnegative".into()));
        }
        self.rates = rates.to_vec();
        self.refresh();
        Ok(())
    }

    /// Sets the rate of user `k`, touching only the stages where it is decoded.
    pub fn set_user_rate(&mut self, k: usize, rate: f64) -> Result<()> {
        self.check_active(k)?;
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::Domain(format!("rate must be nonnegative, got {rate}")));
        }
        self.rates[k] = rate;
        let theta = rate_threshold(rate);
        let form = self.config.closed_form;
        let mut scratch = Scratch::default();
        for &b in &self.mdiv[k] {
            let base = &mut self.bases[b];
            for &(oi, p) in &base.slots[k] {
                let o = &mut base.orders[oi as usize];
                let p = p as usize;
                let e = stage_outage(p + 1, &o.betas, theta, &base.inter, form, &mut scratch);
                o.cond[p] = e.value;
                o.clamped[p] = e.clamped;
            }
        }
        Ok(())
    }

    fn check_active(&self, k: usize) -> Result<()> {
        if k >= self.n_users() {
            return Err(Error::Dimension(format!("user {k} out of range")));
        }
        if !self.active[k] {
            return Err(Error::Domain(format!("user {k} is not active")));
        }
        Ok(())
    }

    /// Unclamped bound factor of user `k` at base `b`, its sampling variance
    /// and the number of clamped stage terms.
    fn base_factor(&self, b: usize, k: usize) -> (f64, f64, usize) {
        if self.config.stage_rate == StageRate::Own {
            return self.own_factor(b, k, rate_threshold(self.rates[k]), &mut Scratch::default());
        }
        let base = &self.bases[b];
        let ub = self.config.union_bound;
        let (mut s, mut s2, mut clamps) = (0.0, 0.0, 0);
        for &(oi, p) in &base.slots[k] {
            let o = &base.orders[oi as usize];
            let pos = p as usize + 1;
            let f: f64 = (1..=pos).map(|j| ub.weight(j, pos) * o.cond[j - 1]).sum();
            s += o.weight * f;
            s2 += o.weight * f * f;
            clamps += o.clamped[p as usize] as usize;
        }
        (s, self.sampling_var(b, s, s2), clamps)
    }

    /// [`Self::base_factor`] with every stage tested at threshold `theta`.
    fn own_factor(&self, b: usize, k: usize, theta: f64, scratch: &mut Scratch) -> (f64, f64, usize) {
        let base = &self.bases[b];
        let ub = self.config.union_bound;
        let form = self.config.closed_form;
        let (mut s, mut s2, mut clamps) = (0.0, 0.0, 0);
        for &(oi, p) in &base.slots[k] {
            let o = &base.orders[oi as usize];
            let pos = p as usize + 1;
            let mut f = 0.0;
            for j in 1..=pos {
                let e = stage_outage(j, &o.betas, theta, &base.inter, form, scratch);
                f += ub.weight(j, pos) * e.value;
                clamps += e.clamped as usize;
            }
            s += o.weight * f;
            s2 += o.weight * f * f;
        }
        (s, self.sampling_var(b, s, s2), clamps)
    }

    fn sampling_var(&self, b: usize, s: f64, s2: f64) -> f64 {
        match self.bases[b].mode {
            EnumMode::Sampled { samples } => ((s2 - s * s).max(0.0)) / samples as f64,
            EnumMode::Exact { .. } => 0.0,
        }
    }

    /// Outage bound of active user `k` at the current rates.
    pub fn user_bound(&self, k: usize) -> Result<f64> {
        self.check_active(k)?;
        Ok(self.mdiv[k].iter().map(|&b| self.base_factor(b, k).0.min(1.0)).product())
    }

    pub fn user_outage(&self, k: usize) -> Result<UserOutage> {
        self.check_active(k)?;
        let factors: Vec<(usize, f64, f64, usize)> = self.mdiv[k]
            .iter()
            .map(|&b| {
                let (s, var, clamps) = self.base_factor(b, k);
                (b, s.min(1.0), var, clamps)
            })
            .collect();
        let bound: f64 = factors.iter().map(|f| f.1).product();
        // delta method over the product
        let var: f64 = (0..factors.len())
            .map(|i| {
                let others: f64 =
                    factors.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, f)| f.1).product();
                others * others * factors[i].2
            })
            .sum();
        let clamp_count = factors.iter().map(|f| f.3).sum();
        let enum_mode = self.mdiv[k]
            .iter()
            .map(|&b| self.bases[b].mode.to_string())
            .collect::<Vec<_>>()
            .join("|");
        Ok(UserOutage {
            user: k,
            rate: self.rates[k],
            bound,
            per_base: factors.iter().map(|f| (f.0, f.1)).collect(),
            clamp_count,
            enum_mode,
            sampling_se: var.sqrt(),
        })
    }

    /// `sum_k r_k (1 - bound_k)` over active users, each term floored at 0.
    pub fn goodput_lower_bound(&self) -> f64 {
        (0..self.n_users())
            .filter(|&k| self.active[k])
            .map(|k| {
                let b = self.user_bound(k).unwrap_or(1.0);
                self.rates[k] * (1.0 - b).max(0.0)
            })
            .sum()
    }

    /// Total clamp events in the current tables.
    pub fn clamp_count(&self) -> usize {
        self.bases
            .iter()
            .flat_map(|b| &b.orders)
            .map(|o| o.clamped.iter().filter(|&&c| c).count())
            .sum()
    }

    pub fn enum_modes(&self) -> Vec<EnumMode> {
        self.bases.iter().map(|b| b.mode).collect()
    }

    pub fn report(&self) -> OutageReport {
        let users = (0..self.n_users())
            .filter(|&k| self.active[k])
            .map(|k| self.user_outage(k).expect("active user"))
            .collect();
        let bases = self
            .bases
            .iter()
            .enumerate()
            .map(|(b, m)| BaseOrders {
                base: b,
                mode: m.mode,
                orders: m
                    .orders
                    .iter()
                    .map(|o| OrderTerm {
                        order: o.seq.clone(),
                        probability: o.weight,
                        stage_outage: o.cond.clone(),
                    })
                    .collect(),
            })
            .collect();
        OutageReport {
            users,
            bases,
            goodput_lower_bound: self.goodput_lower_bound(),
            clamp_count: self.clamp_count(),
        }
    }

    /// Decode set of base `b` as seen by the analyzer.
    pub fn decode_set(&self, b: usize) -> &[usize] {
        &self.bases[b].users
    }

    /// Collects the terms of user `k`'s bound that vary with its own rate.
    fn slices(&self, k: usize) -> Vec<BaseSlice<'_>> {
        if self.config.stage_rate == StageRate::Own {
            return Vec::new();
        }
        let ub = self.config.union_bound;
        self.mdiv[k]
            .iter()
            .map(|&b| {
                let base = &self.bases[b];
                let fixed = base.slots[k]
                    .iter()
                    .map(|&(oi, p)| {
                        let o = &base.orders[oi as usize];
                        let pos = p as usize + 1;
                        o.weight * (1..pos).map(|j| ub.weight(j, pos) * o.cond[j - 1]).sum::<f64>()
                    })
                    .sum();
                BaseSlice { fixed, groups: base.groups[k].get_or_init(|| group_orders(base, k)) }
            })
            .collect()
    }

    fn eval_slices(&self, k: usize, slices: &[BaseSlice], theta: f64, scratch: &mut Scratch) -> f64 {
        if self.config.stage_rate == StageRate::Own {
            return self.mdiv[k].iter().map(|&b| self.own_factor(b, k, theta, scratch).0.min(1.0)).product();
        }
        let form = self.config.closed_form;
        slices
            .iter()
            .zip(&self.mdiv[k])
            .map(|(s, &b)| {
                let inter = &self.bases[b].inter;
                let own: f64 = s
                    .groups
                    .iter()
                    .map(|g| {
                        let betas = &self.bases[b].orders[g.order as usize].betas;
                        g.weight * stage_outage(g.pos, betas, theta, inter, form, scratch).value
                    })
                    .sum();
                (s.fixed + own).min(1.0)
            })
            .product()
    }

    /// Bound of user `k` if its rate were `rate`, other rates unchanged.
    pub fn user_bound_at(&self, k: usize, rate: f64) -> Result<f64> {
        self.check_active(k)?;
        let slices = self.slices(k);
        let mut scratch = Scratch::default();
        Ok(self.eval_slices(k, &slices, rate_threshold(rate), &mut scratch))
    }

    /// Rate of user `k` whose bound equals `eps`, other rates held fixed.
    /// Returns 0 when the target is out of reach even at vanishing rate.
    pub fn solve_user(&self, k: usize, eps: f64, warm: Option<f64>) -> Result<f64> {
        self.check_active(k)?;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Domain(format!("target outage must be in (0, 1), got {eps}")));
        }
        let slices = self.slices(k);
        let mut scratch = Scratch::default();
        let mut f = |r: f64| self.eval_slices(k, &slices, rate_threshold(r), &mut scratch) - eps;
        super::solver::bracket_root(&mut f, warm, self.config.tolerance)
    }
}

/// Groups the orders of `base` in which user `k` is decoded. The stage
/// expression depends on who precedes `k` (as a set) and on the exact order
/// from `k` onwards.
fn group_orders(base: &BaseModel, k: usize) -> Vec<Group> {
    let local: HashMap<usize, usize> = base.users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let mut index: HashMap<(u64, &[usize]), usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for &(oi, p) in &base.slots[k] {
        let o = &base.orders[oi as usize];
        let pos = p as usize + 1;
        let mask = o.seq[..pos - 1].iter().fold(0u64, |m, u| m | 1 << local[u]);
        let gi = *index.entry((mask, &o.seq[pos - 1..])).or_insert_with(|| {
            groups.push(Group { pos, order: oi, weight: 0.0 });
            groups.len() - 1
        });
        groups[gi].weight += o.weight;
    }
    groups
}

/// Outage bound of user `k` at the rates stored in `plan`.
pub fn per_user_outage_bound(
    k: usize,
    plan: &Plan,
    scene: &NetworkScene,
    config: &AnalysisConfig,
) -> Result<f64> {
    if k >= plan.n_users() || !plan.is_active(k) {
        return Err(Error::Domain(format!("user {k} is not active")));
    }
    OutageAnalyzer::new(plan, scene, config)?.user_bound(k)
}

/// Goodput lower bound at the rates stored in `plan`.
pub fn goodput_lower_bound(plan: &Plan, scene: &NetworkScene, config: &AnalysisConfig) -> Result<f64> {
    Ok(OutageAnalyzer::new(plan, scene, config)?.goodput_lower_bound())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::controller::{Association, Plan};
    use crate::rng::stream;
    use crate::sic::{decode_all, DecodeMode};
    use rand_distr::{Distribution, Exp1};

    /// Plan over an explicit gain matrix with given serving bases and `B_k`.
    pub(crate) fn fixture(gains: Vec<Vec<f64>>, serving: Vec<usize>, mdiv: Vec<Vec<usize>>) -> (Plan, NetworkScene) {
        let scene = NetworkScene::from_gains(gains).unwrap();
        let plan = Plan::new(Association::from_serving(serving, scene.n_bases()), mdiv, 1.0);
        (plan, scene)
    }

    /// Truncate-mode outage per user and mean goodput from `n` fading draws.
    pub(crate) fn simulate(plan: &Plan, scene: &NetworkScene, n: usize, seed: u64) -> (Vec<f64>, f64, f64) {
        let k = plan.n_users();
        let nb = plan.n_bases();
        let sets: Vec<Vec<usize>> = (0..nb).map(|b| plan.decode_set(b)).collect();
        let inter: Vec<Vec<usize>> = (0..nb).map(|b| plan.interferers(b)).collect();
        let mut rng = stream(seed, &[9]);
        let mut fails = vec![0usize; k];
        let (mut sum, mut sum2) = (0.0, 0.0);
        let mut snr = vec![vec![0.0; nb]; k];
        for _ in 0..n {
            for u in 0..k {
                for b in 0..nb {
                    let e: f64 = Exp1.sample(&mut rng);
                    snr[u][b] = plan.power[u] * scene.gains[u][b] * e;
                }
            }
            let ok = decode_all(plan, &snr, &sets, &inter, DecodeMode::TruncateOnFailure);
            let mut g = 0.0;
            for u in 0..k {
                if plan.is_active(u) && !ok[u] {
                    fails[u] += 1;
                } else if plan.is_active(u) {
                    g += plan.rates[u];
                }
            }
            sum += g;
            sum2 += g * g;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
        (fails.iter().map(|&f| f as f64 / n as f64).collect(), mean, se)
    }

    #[test]
    fn lone_user_bound_is_exponential_cdf() {
        let (mut plan, scene) = fixture(vec![vec![100.0]], vec![0], vec![vec![0]]);
        plan.rates[0] = 1.0;
        let cfg = AnalysisConfig::default();
        let b = per_user_outage_bound(0, &plan, &scene, &cfg).unwrap();
        assert!((b - (1.0 - (-0.01f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn inactive_user_is_rejected() {
        let (mut plan, scene) = fixture(vec![vec![1.0], vec![2.0]], vec![0, 0], vec![vec![0], vec![0]]);
        plan.power[1] = 0.0;
        let cfg = AnalysisConfig::default();
        assert!(per_user_outage_bound(1, &plan, &scene, &cfg).is_err());
        assert!(per_user_outage_bound(5, &plan, &scene, &cfg).is_err());
    }

    #[test]
    fn two_equal_bases_square_the_bound() {
        let g = 20.0;
        let (mut one, s1) = fixture(vec![vec![g]], vec![0], vec![vec![0]]);
        let (mut two, s2) = fixture(vec![vec![g, g]], vec![0], vec![vec![0, 1]]);
        one.rates[0] = 2.0;
        two.rates[0] = 2.0;
        let cfg = AnalysisConfig::default();
        let p = per_user_outage_bound(0, &one, &s1, &cfg).unwrap();
        let p2 = per_user_outage_bound(0, &two, &s2, &cfg).unwrap();
        assert!((p * p - p2).abs() < 1e-15);
        // brute-force two-base selection combining
        let (sim, _, _) = simulate(&two, &s2, 200_000, 1);
        let se = (p2 * (1.0 - p2) / 200_000.0).sqrt();
        assert!((sim[0] - p2).abs() < 4.0 * se, "{} vs {p2}", sim[0]);
    }

    #[test]
    fn nested_dominates_single() {
        let (mut plan, scene) =
            fixture(vec![vec![30.0], vec![10.0], vec![3.0]], vec![0; 3], vec![vec![0]; 3]);
        plan.rates = vec![0.8, 0.5, 0.3];
        let nested = AnalysisConfig::default();
        let single = AnalysisConfig { union_bound: UnionBound::Single, ..AnalysisConfig::default() };
        for k in 0..3 {
            let a = per_user_outage_bound(k, &plan, &scene, &nested).unwrap();
            let b = per_user_outage_bound(k, &plan, &scene, &single).unwrap();
            assert!(a >= b - 1e-15);
        }
    }

    #[test]
    fn grouped_evaluation_matches_table() {
        let gains = vec![vec![30.0, 2.0], vec![10.0, 8.0], vec![3.0, 1.0], vec![1.0, 20.0], vec![4.0, 5.0]];
        let (mut plan, scene) = fixture(
            gains,
            vec![0, 0, 0, 1, 1],
            vec![vec![0], vec![0, 1], vec![0], vec![1], vec![0, 1]],
        );
        plan.rates = vec![0.8, 0.5, 0.3, 1.0, 0.4];
        let mut a = OutageAnalyzer::new(&plan, &scene, &AnalysisConfig::default()).unwrap();
        for k in 0..5 {
            let via_slices = a.user_bound_at(k, 0.7).unwrap();
            let before = a.rates()[k];
            a.set_user_rate(k, 0.7).unwrap();
            let via_table = a.user_bound(k).unwrap();
            assert!((via_slices - via_table).abs() < 1e-13, "user {k}: {via_slices} vs {via_table}");
            a.set_user_rate(k, before).unwrap();
        }
        let mut fresh = a.clone();
        fresh.set_rates(&plan.rates).unwrap();
        for k in 0..5 {
            assert!((fresh.user_bound(k).unwrap() - a.user_bound(k).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn bound_is_monotone_in_rate() {
        let (mut plan, scene) = fixture(vec![vec![30.0], vec![10.0], vec![3.0]], vec![0; 3], vec![vec![0]; 3]);
        plan.rates = vec![0.5, 0.5, 0.5];
        let a = OutageAnalyzer::new(&plan, &scene, &AnalysisConfig::default()).unwrap();
        for k in 0..3 {
            let mut prev = 0.0;
            for i in 0..40 {
                let b = a.user_bound_at(k, i as f64 * 0.1).unwrap();
                assert!(b >= prev - 1e-15);
                prev = b;
            }
        }
    }

    #[test]
    fn sampled_orders_track_exact_enumeration() {
        let gains: Vec<Vec<f64>> = [40.0, 20.0, 12.0, 6.0, 3.0].iter().map(|&g| vec![g]).collect();
        let (mut plan, scene) = fixture(gains, vec![0; 5], vec![vec![0]; 5]);
        plan.rates = vec![0.6, 0.4, 0.3, 0.2, 0.1];
        let exact = OutageAnalyzer::new(&plan, &scene, &AnalysisConfig::default()).unwrap();
        let cfg = AnalysisConfig { enumeration_cap: 4, seed: 11, ..AnalysisConfig::default() };
        let sampled = OutageAnalyzer::new(&plan, &scene, &cfg).unwrap();
        assert!(matches!(sampled.enum_modes()[0], EnumMode::Sampled { samples: 20_000 }));
        for k in 0..5 {
            let e = exact.user_bound(k).unwrap();
            let s = sampled.user_outage(k).unwrap();
            assert!((s.bound - e).abs() < 4.0 * s.sampling_se + 1e-9, "user {k}: {} vs {e}", s.bound);
        }
    }

    #[test]
    fn goodput_bound_floors_negative_terms() {
        let (mut plan, scene) = fixture(vec![vec![0.01], vec![100.0]], vec![0, 0], vec![vec![0]; 2]);
        plan.rates = vec![5.0, 1e-9];
        let a = OutageAnalyzer::new(&plan, &scene, &AnalysisConfig::default()).unwrap();
        let lb = a.goodput_lower_bound();
        assert!(lb >= 0.0 && lb <= 1e-9);
        let report = a.report();
        assert_eq!(report.users.len(), 2);
        assert_eq!(report.bases[0].orders.len(), 2);
        let total: f64 = report.bases[0].orders.iter().map(|o| o.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_dominates_truncated_simulation() {
        let gains = vec![vec![40.0, 3.0], vec![12.0, 9.0], vec![5.0, 0.5], vec![2.0, 25.0]];
        let (mut plan, scene) =
            fixture(gains, vec![0, 0, 0, 1], vec![vec![0], vec![0, 1], vec![0], vec![1]]);
        plan.rates = vec![1.0, 0.5, 0.3, 1.2];
        let a = OutageAnalyzer::new(&plan, &scene, &AnalysisConfig::default()).unwrap();
        let n = 100_000;
        let (sim, good, se) = simulate(&plan, &scene, n, 3);
        for k in 0..4 {
            let b = a.user_bound(k).unwrap();
            let s = (sim[k] * (1.0 - sim[k]) / n as f64).sqrt();
            assert!(b >= sim[k] - 3.0 * s, "user {k}: bound {b} < simulated {}", sim[k]);
        }
        assert!(a.goodput_lower_bound() <= good + 3.0 * se);
    }
}
