//! `mudsic`: sweeps, self-checks, parameter descriptions and single-realization traces.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration or I/O error,
//! 3 validation failure.

mod checks;
mod config;

use clap::{Args, Parser, Subcommand};
use config::{ConfigError, Overrides, RunConfig, Series};
use mudsic_core::analysis::OutageReport;
use mudsic_core::channel::FadingDraw;
use mudsic_core::controller::{associate_users, MdivThreshold};
use mudsic_core::io;
use mudsic_core::montecarlo::{macro_scene, micro_fading, run_experiment, sic_plan, MetricTable, Scheme, SweepVar};
use mudsic_core::sic::simulate_realization;
use serde::Serialize;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(name = "mudsic", version, about = "Multi-cell uplink SIC with macro-diversity: simulation and outage analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a parameter sweep and write CSV tables.
    Sweep(SweepArgs),
    /// Check closed forms and bounds against independent oracles.
    Validate(ValidateArgs),
    /// Explain a configuration or list the presets.
    Describe(SourceArgs),
    /// Dump the SIC trace of one realization.
    Trace(TraceArgs),
}

#[derive(Args)]
struct SourceArgs {
    /// TOML run configuration.
    config: Option<PathBuf>,
    /// Built-in configuration instead of a file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Sweep variable: pmax, path-loss-exponent, users or mdiv-threshold.
    #[arg(long)]
    var: Option<SweepVar>,
    #[arg(long, allow_hyphen_values = true)]
    from: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    to: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials_macro: Option<usize>,
    #[arg(long)]
    trials_micro: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated schemes, for example `sic:off,sic:2,ml:2,cdma,fdma`.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Do not print the summary table.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, hide = true, value_enum)]
    inject_fault: Option<checks::Fault>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Sweep value of the grid point; defaults to the first grid value.
    #[arg(long, allow_hyphen_values = true)]
    point: Option<f64>,
    /// Fixed power of the series to use when the config has several.
    #[arg(long, allow_hyphen_values = true)]
    power: Option<f64>,
    #[arg(long = "macro", default_value_t = 0)]
    macro_trial: usize,
    #[arg(long = "micro", default_value_t = 0)]
    micro_trial: usize,
    /// SIC scheme whose plan is traced.
    #[arg(long, default_value = "sic:off")]
    scheme: Scheme,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "trace")]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure { code: EXIT_CONFIG, message: e.to_string() }
    }
}

impl From<mudsic_core::Error> for Failure {
    fn from(e: mudsic_core::Error) -> Self {
        Failure { code: EXIT_CONFIG, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: EXIT_CONFIG, message: format!("i/o error: {e}") }
    }
}

fn resolve(source: &SourceArgs) -> Result<RunConfig, Failure> {
    match (&source.config, &source.preset) {
        (Some(path), _) => Ok(config::load(path)?),
        (None, Some(name)) => config::preset(name).ok_or_else(|| Failure {
            code: EXIT_USAGE,
            message: format!(
                "unknown preset '{name}'; available: {}",
                config::PRESETS.iter().map(|p| p.0).collect::<Vec<_>>().join(", ")
            ),
        }),
        (None, None) => Err(Failure { code: EXIT_USAGE, message: "give a config file or --preset NAME".into() }),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure { code: EXIT_CONFIG, message: format!("cannot create {}: {e}", path.display()) })
}

#[derive(Serialize)]
struct SeriesManifest {
    label: String,
    p_max_dbm: Option<f64>,
    grid: Vec<f64>,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    program: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a RunConfig,
    series: Vec<SeriesManifest>,
}

fn print_table(label: &str, table: &MetricTable) {
    println!("== {label}");
    println!("{:>10}  {:<18} {:>10} {:>9} {:>9} {:>7}", "value", "scheme", "goodput", "stderr", "outage", "active");
    for r in &table.rows {
        let flag = if r.flagged { "  flagged" } else { "" };
        println!(
            "{:>10}  {:<18} {:>10.4} {:>9.4} {:>9.4} {:>7.2}{flag}",
            r.sweep_value, r.scheme, r.mean_goodput, r.goodput_stderr, r.per_user_outage, r.mean_active_users
        );
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let mut cfg = resolve(&a.source)?;
    cfg.apply(&Overrides {
        var: a.var,
        from: a.from,
        to: a.to,
        step: a.step,
        seed: a.seed,
        trials_macro: a.trials_macro,
        trials_micro: a.trials_micro,
        threads: a.threads,
        schemes: a.schemes,
    });
    let series = cfg.series()?;
    fs::create_dir_all(&a.out)?;
    let mut manifest = Manifest { program: "mudsic", version: env!("CARGO_PKG_VERSION"), seed: cfg.seed, config: &cfg, series: Vec::new() };
    for Series { label, spec } in series {
        let result = run_experiment(&spec)?;
        let mut files = Vec::new();
        let overlay = format!("{label}.csv");
        result.table.write_csv(create(&a.out.join(&overlay))?)?;
        files.push(overlay);
        for scheme in &spec.schemes {
            let name = format!("{label}_{}.csv", config::scheme_slug(scheme));
            result.table.scheme(&scheme.to_string()).write_csv(create(&a.out.join(&name))?)?;
            files.push(name);
        }
        if !a.quiet {
            print_table(&label, &result.table);
        }
        manifest.series.push(SeriesManifest {
            label,
            p_max_dbm: (spec.sweep != SweepVar::Pmax).then_some(spec.p_max_dbm),
            grid: spec.grid.clone(),
            files,
        });
    }
    let path = a.out.join(format!("{}_manifest.json", cfg.name));
    serde_json::to_writer_pretty(create(&path)?, &manifest).map_err(|e| Failure { code: EXIT_CONFIG, message: e.to_string() })?;
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<(), Failure> {
    let report = checks::run(a.seed, a.threads, a.inject_fault);
    for c in &report.checks {
        println!(
            "{} {:<20} [{}] observed {:.3e} (limit {:.3e}): {}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.module,
            c.observed,
            c.limit,
            c.detail
        );
    }
    let modes: Vec<String> = report.enum_modes.iter().map(|(m, n)| format!("{m} x{n}")).collect();
    println!("clamp events: {}; enumeration modes: {}", report.clamp_count, modes.join(", "));
    if let Some(path) = &a.json {
        serde_json::to_writer_pretty(create(path)?, &report).map_err(|e| Failure { code: EXIT_CONFIG, message: e.to_string() })?;
    }
    if report.passed() {
        println!("all checks passed");
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        Err(Failure { code: EXIT_VALIDATION, message: format!("failed checks: {}", failed.join(", ")) })
    }
}

const PARAMETERS: [(&str, &str); 22] = [
    ("name", "label used for output file names"),
    ("seed", "root of every random stream; equal seeds give byte-identical tables"),
    ("threads", "worker threads for macro trials (0 = all cores); does not change results"),
    ("n_users", "users dropped uniformly over the cells in each macro trial"),
    ("p_max_dbm", "peak transmit power in dBm; one series per value unless power is swept"),
    ("epsilon", "per-user packet outage target used to pick each rate"),
    ("trials_macro", "macro trials: user positions and shadowing, with rates re-planned for each"),
    ("trials_micro", "fast-fading draws per macro trial with the plan held fixed"),
    ("schemes", "sic:T (descending-SNR SIC, MDiv threshold T in dB, off or inf), sic-exhaustive:T, ml:T (joint ML, common outage), cdma, fdma"),
    ("decode_mode", "full-propagation keeps decoding after a failure; truncate stops the base at the first failure"),
    ("rate_floor", "users whose planned rate falls below this many bit/s/Hz are switched off"),
    ("inf_reading", "meaning of an infinite MDiv threshold: all-bases decode every user, or no-mdiv"),
    ("ml_rates", "joint ML rates: common-outage scales single-user rates to meet epsilon jointly; shared reuses the SIC rates"),
    ("ml_calibration_draws", "fading draws used to calibrate the joint ML rate scale"),
    ("sweep.var", "swept quantity: pmax (dBm), path-loss-exponent, users or mdiv-threshold (dB)"),
    ("sweep.from/to/step", "inclusive arithmetic grid; alternatively sweep.values lists the points"),
    ("channel.n_bases / inter_base_distance_m", "cells on a line, spaced this far apart"),
    ("channel.cell_radius_m / min_dist_m", "users fall in a disk around their cell's base, outside the exclusion radius"),
    ("channel.pl0_db / d0_m / path_loss_exponent", "mean path loss pl0_db at d0_m, growing 10*exponent dB per decade"),
    ("channel.shadow_sigma_db / noise_dbm", "log-normal shadowing spread and receiver noise power"),
    ("analysis.union_bound / stage_rate", "single or nested union over SIC stages; stage events tested at the decoded user's rate or the user's own"),
    ("analysis.enumeration_cap / order_samples / prune", "decode sets up to the cap enumerate orders exactly, larger ones sample them"),
];

fn cmd_describe(a: SourceArgs) -> Result<(), Failure> {
    if a.config.is_none() && a.preset.is_none() {
        println!("presets:");
        for (name, what) in config::PRESETS {
            println!("  {name:<16} {what}");
        }
        println!("\nparameters:");
        for (key, what) in PARAMETERS {
            println!("  {key:<48} {what}");
        }
        return Ok(());
    }
    let cfg = resolve(&a)?;
    if let Some((_, what)) = config::PRESETS.iter().find(|p| Some(p.0) == a.preset.as_deref()) {
        println!("# {what}");
    }
    let series = cfg.series()?;
    let grid = cfg.grid()?;
    println!(
        "# {} series, {} grid points from {} to {}, {} x {} trials per point",
        series.len(),
        grid.len(),
        grid[0],
        grid[grid.len() - 1],
        cfg.trials_macro,
        cfg.trials_micro
    );
    println!("# files: {}", series.iter().map(|s| format!("{}.csv", s.label)).collect::<Vec<_>>().join(", "));
    print!("{}", cfg.to_toml());
    Ok(())
}

fn cmd_trace(a: TraceArgs) -> Result<(), Failure> {
    let mut cfg = resolve(&a.source)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let series = cfg.series()?;
    let chosen = match a.power {
        Some(p) => series.into_iter().find(|s| s.spec.p_max_dbm == p).ok_or_else(|| Failure {
            code: EXIT_USAGE,
            message: format!("no series at {p} dBm"),
        })?,
        None => series.into_iter().next().expect("at least one series"),
    };
    let spec = chosen.spec;
    if !matches!(a.scheme, Scheme::Sic(_) | Scheme::SicExhaustive(_)) {
        return Err(Failure { code: EXIT_USAGE, message: "trace needs a sic scheme".into() });
    }
    let value = a.point.unwrap_or(spec.grid[0]);
    let point = spec.point(value)?;
    let threshold = spec.effective_threshold(&a.scheme, &point).unwrap_or(MdivThreshold::Off);
    let scene = macro_scene(&spec, &point, a.macro_trial)?;
    let assoc = associate_users(&scene)?;
    let (plan, analyzer, converged) = sic_plan(&spec, &scene, &assoc, threshold, point.p_max_mw, a.macro_trial)?;
    let fade = micro_fading(&spec, scene.n_users(), scene.n_bases(), a.macro_trial, a.micro_trial)?;
    let (result, traces) = simulate_realization(&plan, &scene, &FadingDraw::from_powers(&fade), spec.decode_mode)?;

    fs::create_dir_all(&a.out)?;
    io::write_positions(&scene, create(&a.out.join("positions.csv"))?)?;
    io::write_gains(&scene, create(&a.out.join("gains.csv"))?)?;
    io::write_plan(&plan, create(&a.out.join("plan.csv"))?)?;
    io::write_trace(&traces, create(&a.out.join("trace.csv"))?)?;
    let report = analyzer.map(|an| an.report()).unwrap_or(OutageReport {
        users: Vec::new(),
        bases: Vec::new(),
        goodput_lower_bound: 0.0,
        clamp_count: 0,
    });
    io::write_outage_report(&report, create(&a.out.join("outage.csv"))?)?;

    println!(
        "{} = {value}, macro {}, micro {}, threshold {threshold}, rates {}",
        spec.sweep,
        a.macro_trial,
        a.micro_trial,
        if converged { "converged" } else { "not converged" }
    );
    println!("{:>4} {:>6} {:>9} {:>8} {:>8}", "user", "base", "rate", "bound", "decoded");
    for k in 0..plan.n_users() {
        let bound = report.users.iter().find(|u| u.user == k).map_or(f64::NAN, |u| u.bound);
        println!("{k:>4} {:>6} {:>9.4} {:>8.4} {:>8}", plan.assoc.serving[k], plan.rates[k], bound, result.success[k]);
    }
    println!(
        "goodput {:.4} bit/s/Hz, lower bound {:.4}; files written to {}",
        result.total,
        report.goodput_lower_bound,
        a.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Describe(a) => cmd_describe(a),
        Command::Trace(a) => cmd_trace(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
