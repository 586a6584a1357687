//! Run configuration files and built-in presets.

use mudsic_core::analysis::AnalysisConfig;
use mudsic_core::channel::ChannelParams;
use mudsic_core::montecarlo::{ExperimentSpec, InfReading, MlRates, Scheme, SweepVar};
use mudsic_core::sic::DecodeMode;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// Sweep axis. Either `values` or the `from`/`to`/`step` triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub var: SweepVar,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

/// Contents of a TOML run file. Powers in dBm, thresholds and shadowing in
/// dB, distances in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    /// 0 uses every available core.
    pub threads: usize,
    pub n_users: usize,
    /// One series per value; ignored when the sweep variable is `pmax`.
    pub p_max_dbm: Vec<f64>,
    pub epsilon: f64,
    pub trials_macro: usize,
    pub trials_micro: usize,
    pub schemes: Vec<Scheme>,
    pub decode_mode: DecodeMode,
    pub rate_floor: f64,
    pub inf_reading: InfReading,
    pub ml_rates: MlRates,
    pub ml_calibration_draws: usize,
    pub sweep: SweepConfig,
    pub channel: ChannelParams,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = ExperimentSpec::default();
        Self {
            name: "run".into(),
            seed: spec.seed,
            threads: 0,
            n_users: spec.n_users,
            p_max_dbm: vec![spec.p_max_dbm],
            epsilon: spec.epsilon,
            trials_macro: spec.trials_macro,
            trials_micro: spec.trials_micro,
            schemes: spec.schemes,
            decode_mode: spec.decode_mode,
            rate_floor: spec.rate_floor,
            inf_reading: spec.inf_reading,
            ml_rates: spec.ml_rates,
            ml_calibration_draws: spec.ml_calibration_draws,
            sweep: SweepConfig { var: SweepVar::Pmax, from: Some(-10.0), to: Some(20.0), step: Some(5.0), values: None },
            channel: spec.channel,
            analysis: spec.analysis,
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Parse(String),
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Parse(m) => write!(f, "config parse error: {m}"),
            ConfigError::Invalid(m) => write!(f, "invalid config: {m}"),
        }
    }
}

/// Command-line values that replace file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub var: Option<SweepVar>,
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub step: Option<f64>,
    pub seed: Option<u64>,
    pub trials_macro: Option<usize>,
    pub trials_micro: Option<usize>,
    pub threads: Option<usize>,
    pub schemes: Option<Vec<Scheme>>,
}

/// One experiment of a run, with a label used in file names.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub spec: ExperimentSpec,
}

pub const PRESETS: [(&str, &str); 5] = [
    ("decoding-order", "descending-SNR decoding order against the best order per realization, versus max power"),
    ("baselines", "on/off SIC against equal-SINR CDMA and peak-power FDMA, no MDiv, versus max power"),
    ("mdiv", "SIC with MDiv thresholds off, 2 dB, 4 dB and infinite, plus joint ML, versus max power"),
    ("path-loss", "SIC goodput versus path-loss exponent at -10 and -3 dBm"),
    ("users", "SIC goodput with and without MDiv versus user count at -10 and -3 dBm"),
];

fn schemes(list: &[&str]) -> Vec<Scheme> {
    list.iter().map(|s| s.parse().expect("preset scheme")).collect()
}

pub fn preset(name: &str) -> Option<RunConfig> {
    let base = RunConfig { name: name.to_string(), ..RunConfig::default() };
    let range = |var, from, to, step| SweepConfig { var, from: Some(from), to: Some(to), step: Some(step), values: None };
    Some(match name {
        "decoding-order" => RunConfig {
            epsilon: 0.05,
            schemes: schemes(&["sic:off", "sic-exhaustive:off"]),
            sweep: range(SweepVar::Pmax, -10.0, 20.0, 5.0),
            ..base
        },
        "baselines" => RunConfig {
            epsilon: 0.05,
            schemes: schemes(&["sic:off", "cdma", "fdma"]),
            sweep: range(SweepVar::Pmax, -10.0, 20.0, 2.0),
            ..base
        },
        "mdiv" => RunConfig {
            epsilon: 0.05,
            schemes: schemes(&["sic:off", "sic:2", "sic:4", "sic:inf", "ml:2"]),
            sweep: range(SweepVar::Pmax, -10.0, 20.0, 1.0),
            ..base
        },
        "path-loss" => RunConfig {
            epsilon: 0.1,
            p_max_dbm: vec![-10.0, -3.0],
            schemes: schemes(&["sic:off", "sic:2"]),
            sweep: range(SweepVar::PathLossExponent, 2.0, 6.0, 0.25),
            ..base
        },
        "users" => RunConfig {
            epsilon: 0.1,
            p_max_dbm: vec![-10.0, -3.0],
            schemes: schemes(&["sic:off", "sic:2"]),
            sweep: range(SweepVar::Users, 2.0, 30.0, 1.0),
            ..base
        },
        _ => return None,
    })
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| match e {
        ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Inclusive arithmetic grid; the end point is kept when it lies on the grid.
pub fn grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>, ConfigError> {
    if !(from.is_finite() && to.is_finite() && step.is_finite()) {
        return Err(ConfigError::Invalid("sweep bounds must be finite".into()));
    }
    if step <= 0.0 || to < from {
        return Err(ConfigError::Invalid(format!("empty sweep {from}..{to} step {step}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize + 1;
    if n > 100_000 {
        return Err(ConfigError::Invalid(format!("sweep has {n} points")));
    }
    Ok((0..n).map(|i| ((from + i as f64 * step) * 1e9).round() / 1e9).collect())
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.var {
            if v != self.sweep.var {
                self.sweep = SweepConfig { var: v, from: None, to: None, step: None, values: None };
            }
        }
        if o.from.is_some() || o.to.is_some() || o.step.is_some() {
            self.sweep.values = None;
        }
        self.sweep.from = o.from.or(self.sweep.from);
        self.sweep.to = o.to.or(self.sweep.to);
        self.sweep.step = o.step.or(self.sweep.step);
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.trials_macro {
            self.trials_macro = n;
        }
        if let Some(n) = o.trials_micro {
            self.trials_micro = n;
        }
        if let Some(n) = o.threads {
            self.threads = n;
        }
        if let Some(s) = &o.schemes {
            self.schemes = s.clone();
        }
    }

    pub fn grid(&self) -> Result<Vec<f64>, ConfigError> {
        let s = &self.sweep;
        match (&s.values, s.from, s.to, s.step) {
            (Some(v), None, None, None) if !v.is_empty() => Ok(v.clone()),
            (None, Some(a), Some(b), Some(c)) => grid(a, b, c),
            _ => Err(ConfigError::Invalid("sweep needs either `values` or all of `from`, `to` and `step`".into())),
        }
    }

    /// Expands the config into validated experiments.
    pub fn series(&self) -> Result<Vec<Series>, ConfigError> {
        let grid = self.grid()?;
        let powers: Vec<Option<f64>> = if self.sweep.var == SweepVar::Pmax {
            vec![None]
        } else if self.p_max_dbm.is_empty() {
            return Err(ConfigError::Invalid("p_max_dbm needs at least one value".into()));
        } else {
            self.p_max_dbm.iter().map(|&p| Some(p)).collect()
        };
        let several = powers.len() > 1;
        powers
            .into_iter()
            .map(|p| {
                let spec = ExperimentSpec {
                    channel: self.channel.clone(),
                    n_users: self.n_users,
                    p_max_dbm: p.unwrap_or(0.0),
                    sweep: self.sweep.var,
                    grid: grid.clone(),
                    trials_macro: self.trials_macro,
                    trials_micro: self.trials_micro,
                    seed: self.seed,
                    schemes: self.schemes.clone(),
                    epsilon: self.epsilon,
                    decode_mode: self.decode_mode,
                    rate_floor: self.rate_floor,
                    analysis: self.analysis.clone(),
                    inf_reading: self.inf_reading,
                    ml_rates: self.ml_rates,
                    ml_calibration_draws: self.ml_calibration_draws,
                    threads: self.threads,
                };
                spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let label = match p {
                    Some(p) if several => format!("{}_p{}dBm", self.name, p),
                    _ => self.name.clone(),
                };
                Ok(Series { label, spec })
            })
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// File-name form of a scheme: `sic:2` becomes `sic-2`.
pub fn scheme_slug(s: &Scheme) -> String {
    s.to_string().replace(':', "-")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_arithmetic() {
        assert_eq!(grid(-10.0, 20.0, 1.0).unwrap().len(), 31);
        assert_eq!(grid(2.0, 6.0, 0.25).unwrap().len(), 17);
        assert_eq!(grid(0.0, 1.0, 0.1).unwrap().last(), Some(&1.0));
        assert_eq!(grid(0.0, 0.95, 0.1).unwrap().len(), 10);
        assert!(grid(1.0, 0.0, 0.1).is_err());
        assert!(grid(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn presets_expand_and_round_trip() {
        for (name, _) in PRESETS {
            let c = preset(name).unwrap();
            let back = parse(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert!(!c.series().unwrap().is_empty());
        }
        assert_eq!(preset("users").unwrap().series().unwrap().len(), 2);
        assert!(preset("nope").is_none());
    }

    #[test]
    fn unknown_keys_rejected_with_line() {
        let err = parse("name = \"x\"\nsed = 3\n").unwrap_err().to_string();
        assert!(err.contains("sed"), "{err}");
        assert!(err.contains("line 2") || err.contains(":2:") || err.contains("2 |"), "{err}");
        assert!(parse("[channel]\nradius = 3\n").is_err());
        assert!(parse("schemes = [\"tdma\"]\n").is_err());
    }

    #[test]
    fn overrides_replace_values() {
        let mut c = preset("mdiv").unwrap();
        c.apply(&Overrides { var: Some(SweepVar::Pmax), from: Some(0.0), to: Some(2.0), step: Some(1.0), seed: Some(9), ..Default::default() });
        assert_eq!(c.grid().unwrap(), vec![0.0, 1.0, 2.0]);
        assert_eq!(c.seed, 9);
        let mut c = preset("mdiv").unwrap();
        c.apply(&Overrides { var: Some(SweepVar::Users), ..Default::default() });
        assert!(c.grid().is_err());
    }
}
