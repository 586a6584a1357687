//! Experiment orchestration: sweeps, macro/micro averaging and analysis
//! validation.
//!
//! Every macro trial owns the random streams `(seed, [tag, trial, ...])`.
//! Streams do not depend on the grid index or the scheme, so all grid
//! points and schemes see the same user drops, shadowing and fading. Macro
//! trials run in parallel and are reduced in trial order.

use crate::analysis::{plan_rates, AnalysisConfig, OutageAnalyzer};
use crate::baselines::{cdma_equal_sinr, fdma_peak, ml_common_outage, ml_plan, CdmaPlan, FdmaPlan};
use crate::channel::{draw_fading, draw_macro, place_users, ChannelParams, NetworkScene};
use crate::controller::{associate_users, mdiv_assign, Association, MdivThreshold, Plan, DEFAULT_RATE_FLOOR};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::sic::{decode_all, decode_all_exhaustive, DecodeMode};
use crate::units::dbm_to_mw;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

const TAG_PLACE: u64 = 1;
const TAG_SHADOW: u64 = 2;
const TAG_FADE: u64 = 3;
const TAG_FDMA: u64 = 4;
const TAG_ML: u64 = 5;
const TAG_ORDERS: u64 = 6;

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVar {
    /// Maximum transmit power in dBm.
    Pmax,
    PathLossExponent,
    Users,
    /// MDiv threshold in dB for every SIC and ML scheme.
    MdivThreshold,
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVar::Pmax => "pmax",
            SweepVar::PathLossExponent => "path-loss-exponent",
            SweepVar::Users => "users",
            SweepVar::MdivThreshold => "mdiv-threshold",
        })
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pmax" | "p-max" | "power" => Ok(SweepVar::Pmax),
            "path-loss-exponent" | "exponent" | "psi" => Ok(SweepVar::PathLossExponent),
            "users" | "k" => Ok(SweepVar::Users),
            "mdiv-threshold" | "threshold" => Ok(SweepVar::MdivThreshold),
            _ => Err(Error::Config(format!("unknown sweep variable '{s}'"))),
        }
    }
}

/// What an infinite MDiv threshold means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfReading {
    /// Every base decodes every user.
    #[default]
    AllBases,
    /// No macro-diversity at all.
    NoMdiv,
}

/// Rate planning for joint ML detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MlRates {
    /// Single-user rates scaled down to a common-outage target.
    #[default]
    CommonOutage,
    /// The rates planned for SIC.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    /// SIC in decreasing-SNR order with on/off power control.
    Sic(MdivThreshold),
    /// SIC with the best order per base and realization.
    SicExhaustive(MdivThreshold),
    /// Joint ML detection with common outage.
    Ml(MdivThreshold),
    Cdma,
    Fdma,
}

impl Scheme {
    pub fn threshold(&self) -> Option<MdivThreshold> {
        match *self {
            Scheme::Sic(t) | Scheme::SicExhaustive(t) | Scheme::Ml(t) => Some(t),
            Scheme::Cdma | Scheme::Fdma => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Sic(t) => write!(f, "sic:{t}"),
            Scheme::SicExhaustive(t) => write!(f, "sic-exhaustive:{t}"),
            Scheme::Ml(t) => write!(f, "ml:{t}"),
            Scheme::Cdma => write!(f, "cdma"),
            Scheme::Fdma => write!(f, "fdma"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (name, arg) = match lower.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (lower.as_str(), None),
        };
        let thr = || -> Result<MdivThreshold> { arg.unwrap_or("off").parse() };
        match name {
            "sic" => Ok(Scheme::Sic(thr()?)),
            "sic-exhaustive" => Ok(Scheme::SicExhaustive(thr()?)),
            "ml" => Ok(Scheme::Ml(thr()?)),
            "cdma" if arg.is_none() => Ok(Scheme::Cdma),
            "fdma" if arg.is_none() => Ok(Scheme::Fdma),
            _ => Err(Error::Config(format!("unknown scheme '{s}'"))),
        }
    }
}

impl TryFrom<String> for Scheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub channel: ChannelParams,
    pub n_users: usize,
    pub p_max_dbm: f64,
    pub sweep: SweepVar,
    pub grid: Vec<f64>,
    pub trials_macro: usize,
    pub trials_micro: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    /// Per-user outage target.
    pub epsilon: f64,
    pub decode_mode: DecodeMode,
    pub rate_floor: f64,
    pub analysis: AnalysisConfig,
    pub inf_reading: InfReading,
    pub ml_rates: MlRates,
    /// Fading draws used to calibrate the ML rate scale.
    pub ml_calibration_draws: usize,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            channel: ChannelParams::default(),
            n_users: 10,
            p_max_dbm: 0.0,
            sweep: SweepVar::Pmax,
            grid: vec![0.0],
            trials_macro: 10_000,
            trials_micro: 10,
            seed: 1,
            schemes: vec![Scheme::Sic(MdivThreshold::Off)],
            epsilon: 0.05,
            decode_mode: DecodeMode::FullPropagation,
            rate_floor: DEFAULT_RATE_FLOOR,
            analysis: AnalysisConfig::planning(),
            inf_reading: InfReading::AllBases,
            ml_rates: MlRates::CommonOutage,
            ml_calibration_draws: 1000,
            threads: 0,
        }
    }
}

/// Parameters of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub value: f64,
    pub channel: ChannelParams,
    pub n_users: usize,
    pub p_max_mw: f64,
    pub threshold: Option<MdivThreshold>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.analysis.validate()?;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.trials_macro == 0 || self.trials_micro == 0 {
            return bad("trial counts must be at least 1".into());
        }
        if self.grid.is_empty() {
            return bad("sweep grid is empty".into());
        }
        if self.schemes.is_empty() {
            return bad("no schemes selected".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must be in (0, 1), got {}", self.epsilon));
        }
        if !(self.rate_floor >= 0.0 && self.rate_floor.is_finite()) {
            return bad("rate floor must be nonnegative".into());
        }
        if self.ml_calibration_draws == 0 {
            return bad("ML calibration draws must be positive".into());
        }
        for s in &self.schemes {
            if let Some(t) = s.threshold() {
                t.validate()?;
            }
        }
        for &v in &self.grid {
            self.point(v)?;
        }
        Ok(())
    }

    /// Resolves the parameters at sweep value `v`.
    pub fn point(&self, v: f64) -> Result<GridPoint> {
        let mut channel = self.channel.clone();
        let mut n_users = self.n_users;
        let mut p_dbm = self.p_max_dbm;
        let mut threshold = None;
        match self.sweep {
            SweepVar::Pmax => p_dbm = v,
            SweepVar::PathLossExponent => channel.path_loss_exponent = vec![v],
            SweepVar::Users => {
                if !(v >= 1.0 && v.fract() == 0.0 && v < 1e6) {
                    return Err(Error::InvalidParameter(format!("user count must be a positive integer, got {v}")));
                }
                n_users = v as usize;
            }
            SweepVar::MdivThreshold => {
                let t = MdivThreshold::Db(v);
                t.validate()?;
                threshold = Some(t);
            }
        }
        channel.validate()?;
        if n_users == 0 {
            return Err(Error::InvalidParameter("at least one user is required".into()));
        }
        if !p_dbm.is_finite() {
            return Err(Error::InvalidParameter("power must be finite".into()));
        }
        Ok(GridPoint { value: v, channel, n_users, p_max_mw: dbm_to_mw(p_dbm), threshold })
    }

    /// Threshold actually applied for `scheme` at `point`.
    pub fn effective_threshold(&self, scheme: &Scheme, point: &GridPoint) -> Option<MdivThreshold> {
        let t = point.threshold.or(scheme.threshold())?;
        Some(match t {
            MdivThreshold::Db(x) if x.is_infinite() && self.inf_reading == InfReading::NoMdiv => MdivThreshold::Off,
            other => other,
        })
    }

    fn analysis_for(&self, macro_trial: usize) -> AnalysisConfig {
        let seed = stream(self.seed, &[TAG_ORDERS, macro_trial as u64]).next_u64();
        AnalysisConfig { seed, ..self.analysis.clone() }
    }
}

/// Per-scheme outcome of one macro trial.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MacroStats {
    /// Goodput averaged over the micro trials.
    pub goodput: f64,
    pub failures: usize,
    pub active: usize,
    pub clamp_count: usize,
    pub sampled_bases: usize,
    /// Planning error, non-converged rates, or every user switched off.
    pub solver_failed: bool,
}

impl MacroStats {
    /// Fraction of active-user packets lost, if any user was active.
    pub fn outage(&self, micro: usize) -> Option<f64> {
        (self.active > 0).then(|| self.failures as f64 / (self.active * micro) as f64)
    }
}

/// SIC plan for one threshold within a macro trial.
struct SicSetup {
    plan: Plan,
    decode_sets: Vec<Vec<usize>>,
    interferers: Vec<Vec<usize>>,
    clamps: usize,
    sampled: usize,
    failed: bool,
    ml_rates: Option<Vec<f64>>,
}

enum Prepared {
    Sic(usize),
    SicExhaustive(usize),
    Ml(usize),
    Cdma(CdmaPlan),
    Fdma(FdmaPlan),
    Failed,
}

/// Draws the macro state of trial `m` at `point`.
pub fn macro_scene(spec: &ExperimentSpec, point: &GridPoint, m: usize) -> Result<NetworkScene> {
    let mut place = stream(spec.seed, &[TAG_PLACE, m as u64]);
    let scene = place_users(&point.channel, point.n_users, &mut place)?;
    let mut shadow = stream(spec.seed, &[TAG_SHADOW, m as u64]);
    draw_macro(&scene, &point.channel, &mut shadow)
}

/// Fading powers `|H_{k,b}|^2` of micro trial `i` in macro trial `m`.
pub fn micro_fading(spec: &ExperimentSpec, n_users: usize, n_bases: usize, m: usize, i: usize) -> Result<Vec<Vec<f64>>> {
    let mut rng = stream(spec.seed, &[TAG_FADE, m as u64, i as u64]);
    let f = draw_fading(n_users, n_bases, &mut rng)?;
    Ok((0..n_users).map(|k| (0..n_bases).map(|b| f.power(k, b)).collect()).collect())
}

/// SIC plan with solved rates for one MDiv threshold.
pub fn sic_plan(
    spec: &ExperimentSpec,
    scene: &NetworkScene,
    assoc: &Association,
    threshold: MdivThreshold,
    p_max: f64,
    m: usize,
) -> Result<(Plan, Option<OutageAnalyzer>, bool)> {
    let mdiv = mdiv_assign(scene, assoc, threshold)?;
    let mut plan = Plan::new(assoc.clone(), mdiv, p_max);
    let rp = plan_rates(spec.epsilon, &mut plan, scene, &spec.analysis_for(m), spec.rate_floor)?;
    let converged = rp.solve.as_ref().is_some_and(|s| s.converged);
    Ok((plan, rp.analyzer, converged))
}

fn prepare_sic(
    spec: &ExperimentSpec,
    scene: &NetworkScene,
    assoc: &Association,
    threshold: MdivThreshold,
    p_max: f64,
    m: usize,
    need_ml: bool,
) -> Option<SicSetup> {
    let (plan, analyzer, converged) = sic_plan(spec, scene, assoc, threshold, p_max, m).ok()?;
    let n_b = plan.n_bases();
    let (clamps, sampled) = analyzer.as_ref().map_or((0, 0), |a| {
        let sampled = a.enum_modes().iter().filter(|m| matches!(m, crate::analysis::EnumMode::Sampled { .. })).count();
        (a.clamp_count(), sampled)
    });
    let ml_rates = if need_ml {
        match spec.ml_rates {
            MlRates::Shared => Some(plan.rates.clone()),
            MlRates::CommonOutage => {
                let mut rng = stream(spec.seed, &[TAG_ML, m as u64]);
                Some(ml_plan(&plan, scene, spec.epsilon, spec.ml_calibration_draws, &mut rng).ok()?.rates)
            }
        }
    } else {
        None
    };
    Some(SicSetup {
        decode_sets: (0..n_b).map(|b| plan.decode_set(b)).collect(),
        interferers: (0..n_b).map(|b| plan.interferers(b)).collect(),
        failed: !converged || plan.active_users().is_empty(),
        plan,
        clamps,
        sampled,
        ml_rates,
    })
}

fn ml_success(setup: &SicSetup, rates: &[f64], snr: &[Vec<f64>]) -> Result<Vec<bool>> {
    let mut ok = vec![false; setup.plan.n_users()];
    for b in 0..setup.plan.n_bases() {
        let set = &setup.decode_sets[b];
        if set.is_empty() {
            continue;
        }
        let omega: f64 = setup.interferers[b].iter().map(|&i| snr[i][b]).sum();
        let r: Vec<f64> = set.iter().map(|&u| rates[u]).collect();
        let g: Vec<f64> = set.iter().map(|&u| snr[u][b]).collect();
        if !ml_common_outage(&r, &g, omega)? {
            for &u in set {
                ok[u] = true;
            }
        }
    }
    Ok(ok)
}

/// Runs macro trial `m` at `point` for every scheme.
pub fn run_macro(spec: &ExperimentSpec, point: &GridPoint, m: usize) -> Result<Vec<MacroStats>> {
    let scene = macro_scene(spec, point, m)?;
    let assoc = associate_users(&scene)?;
    let k = scene.n_users();
    let n_b = scene.n_bases();
    let p = point.p_max_mw;

    let mut setups: Vec<(MdivThreshold, SicSetup)> = Vec::new();
    let mut setup_failed: Vec<MdivThreshold> = Vec::new();
    let mut prepared = Vec::with_capacity(spec.schemes.len());
    for scheme in &spec.schemes {
        let item = match (scheme, spec.effective_threshold(scheme, point)) {
            (Scheme::Cdma, _) => cdma_equal_sinr(&scene, &assoc, p, spec.epsilon).map_or(Prepared::Failed, Prepared::Cdma),
            (Scheme::Fdma, _) => {
                let mut rng = stream(spec.seed, &[TAG_FDMA, m as u64]);
                fdma_peak(&scene, &assoc, p, spec.epsilon, &mut rng).map_or(Prepared::Failed, Prepared::Fdma)
            }
            (_, Some(t)) => {
                let need_ml = spec
                    .schemes
                    .iter()
                    .any(|s| matches!(s, Scheme::Ml(_)) && spec.effective_threshold(s, point) == Some(t));
                let idx = match setups.iter().position(|(x, _)| *x == t) {
                    Some(i) => Some(i),
                    None if setup_failed.contains(&t) => None,
                    None => match prepare_sic(spec, &scene, &assoc, t, p, m, need_ml) {
                        Some(s) => {
                            setups.push((t, s));
                            Some(setups.len() - 1)
                        }
                        None => {
                            setup_failed.push(t);
                            None
                        }
                    },
                };
                match (idx, scheme) {
                    (None, _) => Prepared::Failed,
                    (Some(i), Scheme::Sic(_)) => Prepared::Sic(i),
                    (Some(i), Scheme::SicExhaustive(_)) => Prepared::SicExhaustive(i),
                    (Some(i), _) => Prepared::Ml(i),
                }
            }
            (_, None) => Prepared::Failed,
        };
        prepared.push(item);
    }

    let mut stats: Vec<MacroStats> = prepared
        .iter()
        .map(|pr| match pr {
            Prepared::Sic(i) | Prepared::SicExhaustive(i) | Prepared::Ml(i) => {
                let s = &setups[*i].1;
                MacroStats {
                    active: s.plan.active_users().len(),
                    clamp_count: s.clamps,
                    sampled_bases: s.sampled,
                    solver_failed: s.failed,
                    ..MacroStats::default()
                }
            }
            Prepared::Cdma(_) | Prepared::Fdma(_) => MacroStats { active: k, ..MacroStats::default() },
            Prepared::Failed => MacroStats { solver_failed: true, ..MacroStats::default() },
        })
        .collect();
    let mut goodput_sum = vec![0.0; prepared.len()];
    let mut snr = vec![vec![0.0; n_b]; k];
    for i in 0..spec.trials_micro {
        let fade = micro_fading(spec, k, n_b, m, i)?;
        for (idx, pr) in prepared.iter().enumerate() {
            let (ok, rates): (Vec<bool>, Vec<f64>) = match pr {
                Prepared::Sic(si) | Prepared::SicExhaustive(si) | Prepared::Ml(si) => {
                    let s = &setups[*si].1;
                    for u in 0..k {
                        for b in 0..n_b {
                            snr[u][b] = s.plan.power[u] * scene.gains[u][b] * fade[u][b];
                        }
                    }
                    match pr {
                        Prepared::Sic(_) => {
                            (decode_all(&s.plan, &snr, &s.decode_sets, &s.interferers, spec.decode_mode), s.plan.rates.clone())
                        }
                        Prepared::SicExhaustive(_) => (
                            decode_all_exhaustive(&s.plan, &snr, &s.decode_sets, &s.interferers, spec.decode_mode)?,
                            s.plan.rates.clone(),
                        ),
                        _ => {
                            let r = s.ml_rates.clone().expect("ML rates planned");
                            (ml_success(s, &r, &snr)?, r)
                        }
                    }
                }
                Prepared::Cdma(c) => (c.success(&scene, &fade), (0..k).map(|u| c.rate(u)).collect()),
                Prepared::Fdma(f) => (f.success(&scene, &fade), f.rates.clone()),
                Prepared::Failed => continue,
            };
            let active: Vec<bool> = match pr {
                Prepared::Sic(si) | Prepared::SicExhaustive(si) | Prepared::Ml(si) => {
                    (0..k).map(|u| setups[*si].1.plan.is_active(u)).collect()
                }
                _ => vec![true; k],
            };
            for u in 0..k {
                if !active[u] {
                    continue;
                }
                if ok[u] {
                    goodput_sum[idx] += rates[u];
                } else {
                    stats[idx].failures += 1;
                }
            }
        }
    }
    for (s, g) in stats.iter_mut().zip(goodput_sum) {
        s.goodput = g / spec.trials_micro as f64;
    }
    Ok(stats)
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub scheme: String,
    pub mean_goodput: f64,
    pub goodput_stderr: f64,
    pub per_user_outage: f64,
    pub outage_stderr: f64,
    pub mean_active_users: f64,
    pub trials_macro: usize,
    pub trials_micro: usize,
    pub clamp_count: usize,
    pub sampled_bases: usize,
    pub solver_failures: usize,
    pub flagged: bool,
}

pub const METRIC_HEADER: &str = "sweep_var,sweep_value,scheme,mean_goodput,goodput_stderr,per_user_outage,outage_stderr,mean_active_users,trials_macro,trials_micro,clamp_count,sampled_bases,solver_failures,flagged";

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wr.write_record(METRIC_HEADER.split(','))?;
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Rows of one scheme, in grid order.
    pub fn scheme(&self, name: &str) -> MetricTable {
        MetricTable { rows: self.rows.iter().filter(|r| r.scheme == name).cloned().collect() }
    }

    pub fn goodput_at(&self, name: &str, value: f64) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.scheme == name && r.sweep_value == value)
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Full result: the table plus every per-macro outcome, indexed
/// `[grid][scheme][macro]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub table: MetricTable,
    pub per_macro: Vec<Vec<Vec<MacroStats>>>,
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let points: Vec<GridPoint> = spec.grid.iter().map(|&v| spec.point(v)).collect::<Result<_>>()?;
    let per_point = with_pool(spec.threads, || {
        points
            .iter()
            .map(|pt| {
                (0..spec.trials_macro)
                    .into_par_iter()
                    .map(|m| run_macro(spec, pt, m))
                    .collect::<Result<Vec<Vec<MacroStats>>>>()
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut rows = Vec::new();
    let mut per_macro = Vec::with_capacity(points.len());
    for (pt, macros) in points.iter().zip(per_point) {
        let mut by_scheme = vec![Vec::with_capacity(macros.len()); spec.schemes.len()];
        for m in macros {
            for (s, st) in m.into_iter().enumerate() {
                by_scheme[s].push(st);
            }
        }
        for (scheme, stats) in spec.schemes.iter().zip(&by_scheme) {
            let goodput: Vec<f64> = stats.iter().map(|s| s.goodput).collect();
            let outage: Vec<f64> = stats.iter().filter_map(|s| s.outage(spec.trials_micro)).collect();
            let (mg, sg) = mean_se(&goodput);
            let (mo, so) = mean_se(&outage);
            let solver_failures = stats.iter().filter(|s| s.solver_failed).count();
            rows.push(MetricRow {
                sweep_var: spec.sweep.to_string(),
                sweep_value: pt.value,
                scheme: scheme.to_string(),
                mean_goodput: mg,
                goodput_stderr: sg,
                per_user_outage: mo,
                outage_stderr: so,
                mean_active_users: stats.iter().map(|s| s.active as f64).sum::<f64>() / stats.len() as f64,
                trials_macro: spec.trials_macro,
                trials_micro: spec.trials_micro,
                clamp_count: stats.iter().map(|s| s.clamp_count).sum(),
                sampled_bases: stats.iter().map(|s| s.sampled_bases).sum(),
                solver_failures,
                flagged: stats.iter().all(|s| s.solver_failed && s.active == 0) || outage.is_empty(),
            });
        }
        per_macro.push(by_scheme);
    }
    Ok(ExperimentResult { table: MetricTable { rows }, per_macro })
}

/// Comparison of closed-form bounds with truncated-SIC simulation.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub users_checked: usize,
    /// Largest `simulated outage - bound` over all users.
    pub max_signed_gap: f64,
    /// Users whose simulated outage exceeds the bound by more than 3 sigma.
    pub bound_violations: usize,
    /// Users alone at every decoding base, where the bound is exact.
    pub exact_checked: usize,
    /// Exact cases outside 3 sigma in either direction.
    pub exact_mismatches: usize,
    /// Smallest `simulated goodput - goodput lower bound`.
    pub min_goodput_gap: f64,
    pub goodput_violations: usize,
    pub clamp_count: usize,
    /// `(mode, bases)` tallies of the order enumeration modes used.
    pub enum_modes: Vec<(String, usize)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.bound_violations == 0 && self.exact_mismatches == 0 && self.goodput_violations == 0
    }
}

/// Checks every SIC scheme of `spec` at every grid point: per-user bounds
/// against simulated outage and the goodput bound against simulated
/// goodput, both under truncated SIC.
pub fn validate_analysis(spec: &ExperimentSpec) -> Result<ValidationReport> {
    spec.validate()?;
    let thresholds: Vec<Scheme> = spec.schemes.iter().copied().filter(|s| matches!(s, Scheme::Sic(_))).collect();
    if thresholds.is_empty() {
        return Err(Error::Config("validation needs at least one SIC scheme".into()));
    }
    let points: Vec<GridPoint> = spec.grid.iter().map(|&v| spec.point(v)).collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for pt in &points {
        for s in &thresholds {
            for m in 0..spec.trials_macro {
                jobs.push((pt, *s, m));
            }
        }
    }
    let parts = with_pool(spec.threads, || {
        jobs.par_iter()
            .map(|&(pt, s, m)| validate_macro(spec, pt, &s, m))
            .collect::<Result<Vec<ValidationReport>>>()
    })??;
    let mut out = ValidationReport { max_signed_gap: f64::NEG_INFINITY, min_goodput_gap: f64::INFINITY, ..Default::default() };
    for p in parts {
        out.users_checked += p.users_checked;
        out.max_signed_gap = out.max_signed_gap.max(p.max_signed_gap);
        out.bound_violations += p.bound_violations;
        out.exact_checked += p.exact_checked;
        out.exact_mismatches += p.exact_mismatches;
        out.min_goodput_gap = out.min_goodput_gap.min(p.min_goodput_gap);
        out.goodput_violations += p.goodput_violations;
        out.clamp_count += p.clamp_count;
        for (mode, n) in p.enum_modes {
            match out.enum_modes.iter_mut().find(|(m, _)| *m == mode) {
                Some(e) => e.1 += n,
                None => out.enum_modes.push((mode, n)),
            }
        }
    }
    Ok(out)
}

fn validate_macro(spec: &ExperimentSpec, pt: &GridPoint, scheme: &Scheme, m: usize) -> Result<ValidationReport> {
    let mut rep = ValidationReport { max_signed_gap: f64::NEG_INFINITY, min_goodput_gap: f64::INFINITY, ..Default::default() };
    let Some(t) = spec.effective_threshold(scheme, pt) else {
        return Ok(rep);
    };
    let scene = macro_scene(spec, pt, m)?;
    let assoc = associate_users(&scene)?;
    let (plan, analyzer, _) = sic_plan(spec, &scene, &assoc, t, pt.p_max_mw, m)?;
    let Some(a) = analyzer else {
        return Ok(rep);
    };
    let k = plan.n_users();
    let n_b = plan.n_bases();
    let sets: Vec<Vec<usize>> = (0..n_b).map(|b| plan.decode_set(b)).collect();
    let inter: Vec<Vec<usize>> = (0..n_b).map(|b| plan.interferers(b)).collect();
    let mut fails = vec![0usize; k];
    let (mut g_sum, mut g_sum2) = (0.0, 0.0);
    let mut snr = vec![vec![0.0; n_b]; k];
    for i in 0..spec.trials_micro {
        let fade = micro_fading(spec, k, n_b, m, i)?;
        for u in 0..k {
            for b in 0..n_b {
                snr[u][b] = plan.power[u] * scene.gains[u][b] * fade[u][b];
            }
        }
        let ok = decode_all(&plan, &snr, &sets, &inter, DecodeMode::TruncateOnFailure);
        let mut g = 0.0;
        for u in plan.active_users() {
            if ok[u] {
                g += plan.rates[u];
            } else {
                fails[u] += 1;
            }
        }
        g_sum += g;
        g_sum2 += g * g;
    }
    let n = spec.trials_micro as f64;
    for u in plan.active_users() {
        let bound = a.user_bound(u)?;
        let sim = fails[u] as f64 / n;
        let p = bound.clamp(1.0 / n, 1.0);
        let sigma = (p * (1.0 - p).max(1.0 / n) / n).sqrt();
        let gap = sim - bound;
        rep.users_checked += 1;
        rep.max_signed_gap = rep.max_signed_gap.max(gap);
        if gap > 3.0 * sigma {
            rep.bound_violations += 1;
        }
        if plan.mdiv[u].iter().all(|&b| sets[b].len() == 1) {
            rep.exact_checked += 1;
            if gap.abs() > 3.0 * sigma {
                rep.exact_mismatches += 1;
            }
        }
    }
    let mean = g_sum / n;
    let se = ((g_sum2 / n - mean * mean).max(0.0) / n).sqrt();
    let lb = a.goodput_lower_bound();
    rep.min_goodput_gap = mean - lb;
    if lb > mean + 3.0 * se.max(1e-12) {
        rep.goodput_violations += 1;
    }
    rep.clamp_count = a.clamp_count();
    for mode in a.enum_modes() {
        let key = match mode {
            crate::analysis::EnumMode::Exact { .. } => "exact".to_string(),
            crate::analysis::EnumMode::Sampled { samples } => format!("sampled:{samples}"),
        };
        match rep.enum_modes.iter_mut().find(|(m, _)| *m == key) {
            Some(e) => e.1 += 1,
            None => rep.enum_modes.push((key, 1)),
        }
    }
    Ok(rep)
}
