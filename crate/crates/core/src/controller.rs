//! Centralized controller: association, macro-diversity sets, on/off power
//! and the per-realization decoding order.

use std::fmt;
use std::str::FromStr;

use crate::channel::{FadingDraw, NetworkScene};
use crate::error::{Error, Result};
use crate::units::linear_to_db;

/// Users with a solved rate below this are switched off by default (bit/s/Hz).
pub const DEFAULT_RATE_FLOOR: f64 = 0.05;

/// Serving-base association.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Association {
    /// Serving base of each user.
    pub serving: Vec<usize>,
    /// Users served by each base, ascending.
    pub sets: Vec<Vec<usize>>,
}

impl Association {
    pub fn from_serving(serving: Vec<usize>, n_bases: usize) -> Self {
        let mut sets = vec![Vec::new(); n_bases];
        for (k, &b) in serving.iter().enumerate() {
            sets[b].push(k);
        }
        Self { serving, sets }
    }
}

/// Macro-diversity admission threshold on the serving-minus-candidate gain gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MdivThreshold {
    /// Every user is decoded by its serving base only.
    Off,
    /// A base joins `B_k` when its gain is within this many dB of the serving
    /// gain. `f64::INFINITY` admits every base.
    Db(f64),
}

impl MdivThreshold {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MdivThreshold::Db(t) if t.is_nan() || t < 0.0 => {
                Err(Error::Domain(format!("MDiv threshold must be nonnegative, got {t}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for MdivThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MdivThreshold::Off => write!(f, "off"),
            MdivThreshold::Db(t) if t.is_infinite() => write!(f, "inf"),
            MdivThreshold::Db(t) => write!(f, "{t}"),
        }
    }
}

impl FromStr for MdivThreshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = match s.trim().to_ascii_lowercase().as_str() {
            "off" | "none" => MdivThreshold::Off,
            "inf" | "infinity" => MdivThreshold::Db(f64::INFINITY),
            other => MdivThreshold::Db(
                other
                    .trim_end_matches("db")
                    .parse()
                    .map_err(|_| Error::Config(format!("bad MDiv threshold '{s}'")))?,
            ),
        };
        t.validate()?;
        Ok(t)
    }
}

/// Per-macro-state decisions of the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub assoc: Association,
    /// `B_k`: bases that decode user `k`, ascending, always containing the serving base.
    pub mdiv: Vec<Vec<usize>>,
    /// Transmit power in mW, each entry 0 or `p_max`.
    pub power: Vec<f64>,
    /// Rates in bit/s/Hz.
    pub rates: Vec<f64>,
    pub p_max: f64,
}

impl Plan {
    /// All users on at `p_max` with zero rates.
    pub fn new(assoc: Association, mdiv: Vec<Vec<usize>>, p_max: f64) -> Self {
        let k = assoc.serving.len();
        Self { assoc, mdiv, power: vec![p_max; k], rates: vec![0.0; k], p_max }
    }

    pub fn n_users(&self) -> usize {
        self.power.len()
    }

    pub fn n_bases(&self) -> usize {
        self.assoc.sets.len()
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.power[k] > 0.0
    }

    pub fn active_users(&self) -> Vec<usize> {
        (0..self.n_users()).filter(|&k| self.is_active(k)).collect()
    }

    /// Active users decoded at base `b` (served there or admitted by MDiv).
    pub fn decode_set(&self, b: usize) -> Vec<usize> {
        (0..self.n_users()).filter(|&k| self.is_active(k) && self.mdiv[k].contains(&b)).collect()
    }

    /// Active users that only interfere at base `b`.
    pub fn interferers(&self, b: usize) -> Vec<usize> {
        (0..self.n_users()).filter(|&k| self.is_active(k) && !self.mdiv[k].contains(&b)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_users();
        if self.assoc.serving.len() != k || self.mdiv.len() != k || self.rates.len() != k {
            return Err(Error::Dimension("plan vectors disagree on user count".into()));
        }
        let total: usize = self.assoc.sets.iter().map(Vec::len).sum();
        if total != k {
            return Err(Error::Config("association is not a partition of the users".into()));
        }
        for u in 0..k {
            if !self.mdiv[u].contains(&self.assoc.serving[u]) {
                return Err(Error::Config(format!("B_{u} misses its serving base")));
            }
            if self.power[u] != 0.0 && self.power[u] != self.p_max {
                return Err(Error::Config(format!("power of user {u} is not on/off")));
            }
            if !(self.rates[u] >= 0.0 && self.rates[u].is_finite()) {
                return Err(Error::Config(format!("rate of user {u} is undefined")));
            }
        }
        Ok(())
    }
}

/// Associates every user with its strongest base; ties go to the lowest index.
pub fn associate_users(scene: &NetworkScene) -> Result<Association> {
    if !scene.has_gains() {
        return Err(Error::InvalidParameter("scene has no gains".into()));
    }
    let serving = scene
        .gains
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (b, &g)| if g > best.1 { (b, g) } else { best })
                .0
        })
        .collect();
    Ok(Association::from_serving(serving, scene.n_bases()))
}

/// Builds the `B_k` sets: base `b` joins when `g_serving(dB) - g_b(dB) <= threshold`.
pub fn mdiv_assign(scene: &NetworkScene, assoc: &Association, threshold: MdivThreshold) -> Result<Vec<Vec<usize>>> {
    threshold.validate()?;
    let sets = assoc
        .serving
        .iter()
        .enumerate()
        .map(|(k, &serving)| match threshold {
            MdivThreshold::Off => vec![serving],
            MdivThreshold::Db(t) => {
                let top = linear_to_db(scene.gains[k][serving]);
                (0..scene.n_bases())
                    .filter(|&b| b == serving || top - linear_to_db(scene.gains[k][b]) <= t)
                    .collect()
            }
        })
        .collect();
    Ok(sets)
}

/// Outcome of [`onoff_power`].
#[derive(Debug, Clone, PartialEq)]
pub struct OnOffReport {
    pub rounds: usize,
    pub switched_off: Vec<usize>,
}

/// On/off power control. Every user starts at `p_max`; users whose solved
/// rate falls below `rate_floor` are switched off and the remaining rates
/// are re-solved until the active set is stable. `solve` maps a plan to a
/// rate per user.
pub fn onoff_power<F>(plan: &mut Plan, rate_floor: f64, mut solve: F) -> Result<OnOffReport>
where
    F: FnMut(&Plan) -> Result<Vec<f64>>,
{
    if !(rate_floor >= 0.0) {
        return Err(Error::Domain("rate floor must be nonnegative".into()));
    }
    let mut switched_off = Vec::new();
    let mut rounds = 0;
    loop {
        rounds += 1;
        let rates = solve(plan)?;
        if rates.len() != plan.n_users() {
            return Err(Error::Dimension("solver returned the wrong number of rates".into()));
        }
        let drop: Vec<usize> = plan.active_users().into_iter().filter(|&k| rates[k] < rate_floor).collect();
        if drop.is_empty() {
            for k in 0..plan.n_users() {
                plan.rates[k] = if plan.is_active(k) { rates[k] } else { 0.0 };
            }
            return Ok(OnOffReport { rounds, switched_off });
        }
        for &k in &drop {
            plan.power[k] = 0.0;
            plan.rates[k] = 0.0;
        }
        switched_off.extend(drop);
        if plan.active_users().is_empty() {
            return Ok(OnOffReport { rounds, switched_off });
        }
    }
}

/// Per-base SIC order over the active decode set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodingOrder {
    pub base: usize,
    /// User decoded at each iteration, first to last.
    pub order: Vec<usize>,
    /// Iteration index of each user (None when not decoded at this base).
    pub position: Vec<Option<usize>>,
}

impl DecodingOrder {
    pub fn new(base: usize, order: Vec<usize>, n_users: usize) -> Result<Self> {
        let mut position = vec![None; n_users];
        for (i, &k) in order.iter().enumerate() {
            if k >= n_users || position[k].is_some() {
                return Err(Error::InvalidParameter("decoding order is not a permutation".into()));
            }
            position[k] = Some(i);
        }
        Ok(Self { base, order, position })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Sorts `users` by descending `snr`, breaking ties by the lower index.
pub fn sort_by_snr_desc(users: &mut [usize], snr: impl Fn(usize) -> f64) {
    users.sort_by(|&a, &b| snr(b).total_cmp(&snr(a)).then(a.cmp(&b)));
}

/// Decodes the active users of base `b` in decreasing instantaneous receive SNR.
pub fn decoding_order(plan: &Plan, scene: &NetworkScene, fading: &FadingDraw, b: usize) -> Result<DecodingOrder> {
    if b >= plan.n_bases() {
        return Err(Error::Dimension(format!("base {b} out of range")));
    }
    let mut users = plan.decode_set(b);
    sort_by_snr_desc(&mut users, |k| plan.power[k] * scene.gains[k][b] * fading.power(k, b));
    DecodingOrder::new(b, users, plan.n_users())
}
