//! Self-check suite run by `mudsic validate`: closed forms against
//! independent oracles and the analysis against simulation.

use mudsic_core::analysis::{
    conditional_outage, order_probability, solve_rate, spacing_model, AnalysisConfig, ClosedForm,
};
use mudsic_core::channel::{draw_fading, NetworkScene};
use mudsic_core::controller::{associate_users, decoding_order, mdiv_assign, MdivThreshold, Plan};
use mudsic_core::montecarlo::{run_experiment, validate_analysis, ExperimentSpec, Scheme, SweepVar};
use mudsic_core::rng::stream;
use mudsic_core::sic::{receive_snr, sic_decode, DecodeMode};
use mudsic_core::units::capacity;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

/// Deliberate faults for exercising the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Flip the sign of the spacing rates in the stage-outage closed form.
    BetaSign,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub module: &'static str,
    pub passed: bool,
    /// Largest observed discrepancy, in the unit of the check.
    pub observed: f64,
    pub limit: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub clamp_count: usize,
    pub enum_modes: Vec<(String, usize)>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn one_cell(gains: &[f64]) -> (NetworkScene, Plan) {
    let scene = NetworkScene::from_gains(gains.iter().map(|&g| vec![g]).collect()).expect("positive gains");
    let assoc = associate_users(&scene).expect("scene has bases");
    let mdiv = mdiv_assign(&scene, &assoc, MdivThreshold::Off).expect("valid threshold");
    (scene, Plan::new(assoc, mdiv, 1.0))
}

fn chain_rule(seed: u64) -> CheckResult {
    let mut rng = stream(seed, &[1]);
    let mut worst: f64 = 0.0;
    for k in 2..=6 {
        for _ in 0..200 {
            let gains: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(-1.0..3.0))).collect();
            let (scene, plan) = one_cell(&gains);
            let fade = draw_fading(k, 1, &mut rng).expect("fading");
            let snr = receive_snr(&plan, &scene, &fade).expect("snr");
            let order = decoding_order(&plan, &scene, &fade, 0).expect("order");
            let trace = sic_decode(&plan, &order, &snr, DecodeMode::FullPropagation).expect("trace");
            let sum: f64 = trace.steps.iter().map(|s| s.capacity).sum();
            let total = capacity(snr.iter().map(|r| r[0]).sum());
            worst = worst.max((sum - total).abs() / total);
        }
    }
    CheckResult {
        name: "chain-rule",
        module: "sic",
        passed: worst <= 1e-9,
        observed: worst,
        limit: 1e-9,
        detail: "relative error of summed stage capacities against log2(1 + total SNR)".into(),
    }
}

fn order_sums(seed: u64) -> CheckResult {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }
    let mut rng = stream(seed, &[2]);
    let mut worst: f64 = 0.0;
    for mu in 1..=6 {
        let all = perms(mu);
        for _ in 0..10 {
            let rates: Vec<f64> = (0..mu).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))).collect();
            let s: f64 = all.iter().map(|p| order_probability(&rates, p).expect("valid rates")).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    let p = order_probability(&[1.0, 2.0, 3.0], &[0, 1, 2]).expect("valid rates");
    worst = worst.max((p - 1.0 / 15.0).abs());
    CheckResult {
        name: "order-probability",
        module: "analysis",
        passed: worst <= 1e-12,
        observed: worst,
        limit: 1e-12,
        detail: "order probabilities over all permutations sum to 1; (1,2,3) ascending is 1/15".into(),
    }
}

fn stage_outage(seed: u64, form: ClosedForm) -> CheckResult {
    let mut rng = stream(seed, &[3]);
    let rates = [0.1, 0.5, 1.0, 2.0];
    let n = 200_000;
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    let mut total = 0;
    for mu in 2..=4 {
        for _ in 0..3 {
            let mut gains: Vec<f64> = (0..mu).map(|_| 10f64.powf(rng.random_range(0.0..2.0))).collect();
            gains.sort_by(|a, b| b.total_cmp(a));
            let model = spacing_model(&(0..mu).collect::<Vec<_>>(), &gains, 1.0).expect("positive gains");
            let exps: Vec<Exp<f64>> = gains.iter().map(|&g| Exp::new(1.0 / g).expect("positive rate")).collect();
            let thetas: Vec<f64> = rates.iter().map(|r| 2f64.powf(*r) - 1.0).collect();
            let mut counts = vec![vec![0usize; mu]; rates.len()];
            let mut x = vec![0.0; mu];
            let mut accepted = 0;
            while accepted < n {
                for (xi, e) in x.iter_mut().zip(&exps) {
                    *xi = e.sample(&mut rng);
                }
                if x.windows(2).any(|w| w[0] <= w[1]) {
                    continue;
                }
                accepted += 1;
                for (ri, &t) in thetas.iter().enumerate() {
                    let mut tail: f64 = x.iter().sum();
                    for j in 0..mu {
                        tail -= x[j];
                        if x[j] - t * tail < t {
                            counts[ri][j] += 1;
                        }
                    }
                }
            }
            for (ri, &r) in rates.iter().enumerate() {
                for j in 1..=mu {
                    let mc = counts[ri][j - 1] as f64 / n as f64;
                    let tol = (4.0 * (mc * (1.0 - mc) / n as f64).sqrt()).max(2e-3);
                    let v = conditional_outage(j, &model, r, &[], form).expect("valid stage").value;
                    worst = worst.max((v - mc).abs() / tol);
                    total += 1;
                    bad += ((v - mc).abs() > tol) as usize;
                }
            }
        }
    }
    CheckResult {
        name: "conditional-outage",
        module: "analysis",
        passed: bad == 0,
        observed: worst,
        limit: 1.0,
        detail: format!("closed-form stage outage against order-conditioned Monte Carlo; {bad}/{total} outside tolerance (observed is the worst ratio to tolerance)"),
    }
}

fn rate_solver() -> CheckResult {
    let (scene, plan) = one_cell(&[100.0]);
    let r = solve_rate(0, 0.05, &plan, &scene, &AnalysisConfig::default()).unwrap_or(f64::NAN);
    let expect = (1.0 - 100.0 * 0.95f64.ln()).log2();
    let err = (r - expect).abs();
    CheckResult {
        name: "rate-solver",
        module: "analysis",
        passed: err <= 1e-6,
        observed: err,
        limit: 1e-6,
        detail: format!("single user at mean SNR 100 and outage 0.05: {r:.7} against {expect:.7}"),
    }
}

fn union_bound(seed: u64, threads: usize, analysis: &AnalysisConfig) -> (CheckResult, usize, Vec<(String, usize)>) {
    let spec = ExperimentSpec {
        sweep: SweepVar::Users,
        grid: vec![2.0, 3.0, 4.0],
        p_max_dbm: 10.0,
        trials_macro: 4,
        trials_micro: 20_000,
        seed,
        schemes: vec![Scheme::Sic(MdivThreshold::Off), Scheme::Sic(MdivThreshold::Db(4.0))],
        analysis: analysis.clone(),
        threads,
        ..ExperimentSpec::default()
    };
    match validate_analysis(&spec) {
        Ok(rep) => (
            CheckResult {
                name: "union-bound",
                module: "analysis",
                passed: rep.passed(),
                observed: rep.max_signed_gap,
                limit: 0.0,
                detail: format!(
                    "{} users: {} bound violations, {}/{} single-user mismatches, {} goodput violations (observed is the largest simulated minus bound)",
                    rep.users_checked, rep.bound_violations, rep.exact_mismatches, rep.exact_checked, rep.goodput_violations
                ),
            },
            rep.clamp_count,
            rep.enum_modes,
        ),
        Err(e) => (
            CheckResult {
                name: "union-bound",
                module: "analysis",
                passed: false,
                observed: f64::NAN,
                limit: 0.0,
                detail: e.to_string(),
            },
            0,
            Vec::new(),
        ),
    }
}

fn decoding_order_check(seed: u64, threads: usize) -> CheckResult {
    let spec = ExperimentSpec {
        channel: mudsic_core::channel::ChannelParams { n_bases: 1, ..Default::default() },
        n_users: 5,
        grid: vec![20.0],
        trials_macro: 200,
        trials_micro: 10,
        seed,
        schemes: vec![Scheme::Sic(MdivThreshold::Off), Scheme::SicExhaustive(MdivThreshold::Off)],
        threads,
        ..ExperimentSpec::default()
    };
    let (ratio, detail) = match run_experiment(&spec) {
        Ok(r) => {
            let (d, b) = (r.table.rows[0].mean_goodput, r.table.rows[1].mean_goodput);
            (d / b, format!("descending {d:.4} vs best order {b:.4} bit/s/Hz"))
        }
        Err(e) => (f64::NAN, e.to_string()),
    };
    CheckResult {
        name: "decoding-order",
        module: "sic",
        passed: ratio >= 0.95,
        observed: ratio,
        limit: 0.95,
        detail,
    }
}

pub fn run(seed: u64, threads: usize, fault: Option<Fault>) -> Report {
    let form = match fault {
        Some(Fault::BetaSign) => ClosedForm::NegatedBeta,
        None => ClosedForm::Validated,
    };
    let analysis = AnalysisConfig { closed_form: form, ..AnalysisConfig::planning() };
    let (ub, clamp_count, enum_modes) = union_bound(seed, threads, &analysis);
    Report {
        seed,
        checks: vec![chain_rule(seed), order_sums(seed), stage_outage(seed, form), rate_solver(), ub, decoding_order_check(seed, threads)],
        clamp_count,
        enum_modes,
    }
}
