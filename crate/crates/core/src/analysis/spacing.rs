//! Spacing representation of ordered exponential SNRs and the conditional
//! outage of one decoding stage.
//!
//! With received SNRs `X_k ~ Exp(1 / m_k)` sorted in decreasing order, the
//! ordered variables can be written as sums of independent spacings
//! `M_l ~ Exp(beta_l)`, where `beta_l` is the average inverse mean over the
//! `l` strongest users.

use super::partial_fraction::{survival, ClosedForm, PfEval, Term};
use crate::error::{Error, Result};
use crate::units::rate_threshold;

/// Spacing rates for one decoding order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacingModel {
    /// `betas[l - 1]` belongs to the `l`-th spacing.
    pub betas: Vec<f64>,
    /// Users in decoding order (strongest first).
    pub order: Vec<usize>,
}

impl SpacingModel {
    pub fn mu(&self) -> usize {
        self.betas.len()
    }
}

/// Spacing rates for users whose noise-normalized gains are listed in
/// decoding order (strongest first), all transmitting at `p_max`.
pub fn spacing_betas(gains: &[f64], p_max: f64) -> Result<SpacingModel> {
    spacing_model(&(0..gains.len()).collect::<Vec<_>>(), gains, p_max)
}

/// Spacing rates for `order` over per-user gains `gains[user]`.
pub fn spacing_model(order: &[usize], gains: &[f64], p_max: f64) -> Result<SpacingModel> {
    if !(p_max.is_finite() && p_max > 0.0) {
        return Err(Error::Domain(format!("power must be positive, got {p_max}")));
    }
    let mut inv = Vec::with_capacity(order.len());
    for &u in order {
        let g = *gains
            .get(u)
            .ok_or_else(|| Error::Dimension(format!("user {u} has no gain")))?;
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::Domain(format!("gain must be positive, got {g}")));
        }
        inv.push(1.0 / (p_max * g));
    }
    let mut betas = Vec::new();
    fill_betas(inv.into_iter(), &mut betas);
    Ok(SpacingModel { betas, order: order.to_vec() })
}

/// Fills `betas` from inverse means in decoding order, without allocation.
pub(crate) fn fill_betas(inv_means: impl Iterator<Item = f64>, betas: &mut Vec<f64>) {
    betas.clear();
    let mut acc = 0.0;
    for (l, lam) in inv_means.enumerate() {
        acc += lam;
        betas.push(acc / (l + 1) as f64);
    }
}

/// Scratch buffers for repeated conditional outage evaluations.
#[derive(Debug, Default)]
pub(crate) struct Scratch {
    poles: Vec<(f64, bool)>,
}

/// Probability that stage `j` (1-based) fails given stages `1..j` succeeded,
/// for a common rate `rate` in bits/s/Hz.
///
/// `interferers` holds the inverse mean SNRs of inter-cell users that stay
/// as noise at this base. Pass an empty slice for the isolated-cell form.
pub fn conditional_outage(
    j: usize,
    model: &SpacingModel,
    rate: f64,
    interferers: &[f64],
    form: ClosedForm,
) -> Result<PfEval> {
    if j == 0 || j > model.mu() {
        return Err(Error::Dimension(format!(
            "stage {j} outside 1..={}",
            model.mu()
        )));
    }
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(Error::Domain(format!("rate must be nonnegative, got {rate}")));
    }
    let mut scratch = Scratch::default();
    Ok(stage_outage(j, &model.betas, rate_threshold(rate), interferers, form, &mut scratch))
}

/// Core evaluation with the SINR threshold `theta = 2^r - 1` precomputed.
///
/// The stage succeeds when `sum_{l >= j} v_l M_l - theta * Omega >= theta`
/// with `v_l = (1 - (l - j) theta) / l`.
pub(crate) fn stage_outage(
    j: usize,
    betas: &[f64],
    theta: f64,
    interferers: &[f64],
    form: ClosedForm,
    scratch: &mut Scratch,
) -> PfEval {
    if theta <= 0.0 {
        return PfEval::default();
    }
    let sign = if form == ClosedForm::NegatedBeta { -1.0 } else { 1.0 };
    let spacing = (j..=betas.len()).map(|l| Term {
        coef: (1.0 - (l - j) as f64 * theta) / l as f64,
        rate: sign * betas[l - 1],
    });
    let noise = interferers.iter().map(|&lam| Term { coef: -theta, rate: lam });
    let (surv, perturbed) = survival(spacing.chain(noise), theta, form, &mut scratch.poles);
    PfEval::from_raw(1.0 - surv, perturbed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn betas_are_running_means_of_inverse_snr() {
        let m = spacing_betas(&[10.0, 5.0, 2.0], 1.0).unwrap();
        let expect = [0.1, (0.1 + 0.2) / 2.0, (0.1 + 0.2 + 0.5) / 3.0];
        for (a, b) in m.betas.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(spacing_betas(&[1.0, 0.0], 1.0).is_err());
        assert!(spacing_betas(&[1.0], 0.0).is_err());
    }

    #[test]
    fn hand_examples() {
        let m = spacing_betas(&[1.0; 4], 1.0).unwrap();
        assert!(m.betas.iter().all(|&b| b == 1.0));
        let m = spacing_betas(&[2.0, 1.0], 1.0).unwrap();
        assert_eq!(m.betas, vec![0.5, 0.75]);
        let m4 = spacing_betas(&[2.0, 1.0], 4.0).unwrap();
        for (a, b) in m.betas.iter().zip(&m4.betas) {
            assert!((a / 4.0 - b).abs() < 1e-15);
        }
        let m = spacing_model(&[2, 0], &[1.0, 9.0, 4.0], 1.0).unwrap();
        assert_eq!(m.order, vec![2, 0]);
        assert_eq!(m.betas, vec![0.25, 0.625]);
    }

    #[test]
    fn lone_user_matches_exponential_tail() {
        // Pg = 100, rate 1 bit: theta = 1, outage = 1 - exp(-0.01)
        let m = spacing_betas(&[100.0], 1.0).unwrap();
        let v = conditional_outage(1, &m, 1.0, &[], ClosedForm::Validated).unwrap();
        assert!((v.value - (1.0 - (-0.01f64).exp())).abs() < 1e-12);
        assert!((v.value - 0.00995).abs() < 1e-5);
    }

    #[test]
    fn two_equal_users_at_unit_rate() {
        // m = 1, theta = 1: the last stage fails iff the weaker SNR < 1.
        // min of two Exp(1) is Exp(2): outage 1 - e^{-2}
        let m = spacing_betas(&[1.0, 1.0], 1.0).unwrap();
        let v = conditional_outage(2, &m, 1.0, &[], ClosedForm::Validated).unwrap();
        assert!((v.value - (1.0 - (-2.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn first_stage_of_two_users_has_known_value() {
        // theta = 1, v_1 = 1, v_2 = 0: only M_1 ~ Exp(1) remains, P(M_1 < 1)
        let m = spacing_betas(&[1.0, 1.0], 1.0).unwrap();
        let v = conditional_outage(1, &m, 1.0, &[], ClosedForm::Validated).unwrap();
        assert!((v.value - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn rate_zero_never_fails() {
        let m = spacing_betas(&[3.0, 1.0], 1.0).unwrap();
        let v = conditional_outage(1, &m, 0.0, &[0.5], ClosedForm::Validated).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn bad_arguments() {
        let m = spacing_betas(&[3.0], 1.0).unwrap();
        assert!(conditional_outage(0, &m, 1.0, &[], ClosedForm::Validated).is_err());
        assert!(conditional_outage(2, &m, 1.0, &[], ClosedForm::Validated).is_err());
        assert!(conditional_outage(1, &m, -1.0, &[], ClosedForm::Validated).is_err());
    }

    /// Empirical stage event over i.i.d. draws of the ordered SNRs.
    fn empirical(j: usize, means: &[f64], rate: f64, inter: &[f64], n: usize) -> f64 {
        let theta = rate_threshold(rate);
        let mut rng = stream(77, &[j as u64, means.len() as u64]);
        let exps: Vec<Exp<f64>> = means.iter().map(|m| Exp::new(1.0 / m).unwrap()).collect();
        let mut x = vec![0.0; means.len()];
        let mut hits = 0usize;
        for _ in 0..n {
            for (xi, e) in x.iter_mut().zip(&exps) {
                *xi = e.sample(&mut rng);
            }
            x.sort_by(|a, b| b.total_cmp(a));
            let omega: f64 = inter.iter().map(|&lam| -rng.random::<f64>().ln() / lam).sum();
            // stage j: x_j / (sum_{l > j} x_l + omega + 1) < theta
            let rest: f64 = x[j..].iter().sum();
            if x[j - 1] < theta * (rest + omega + 1.0) {
                hits += 1;
            }
        }
        hits as f64 / n as f64
    }

    #[test]
    fn matches_unconditional_monte_carlo_for_iid_users() {
        // With i.i.d. users the stage event on the sorted SNRs is exactly the
        // event the spacing form describes.
        let means = [4.0, 4.0, 4.0];
        let model = spacing_betas(&means, 1.0).unwrap();
        for j in 1..=3 {
            let a = conditional_outage(j, &model, 0.5, &[], ClosedForm::Validated).unwrap();
            let e = empirical(j, &means, 0.5, &[], 200_000);
            let se = (e * (1.0 - e) / 200_000.0).sqrt();
            assert!((a.value - e).abs() < 5.0 * se + 1e-3, "j={j}: {} vs {e}", a.value);
        }
    }

    #[test]
    fn interferers_raise_outage_and_match_monte_carlo() {
        let means = [6.0, 6.0];
        let model = spacing_betas(&means, 1.0).unwrap();
        let inter = [1.0 / 0.8];
        let a0 = conditional_outage(1, &model, 0.4, &[], ClosedForm::Validated).unwrap();
        let a1 = conditional_outage(1, &model, 0.4, &inter, ClosedForm::Validated).unwrap();
        assert!(a1.value > a0.value);
        let e = empirical(1, &means, 0.4, &inter, 200_000);
        let se = (e * (1.0 - e) / 200_000.0).sqrt();
        assert!((a1.value - e).abs() < 5.0 * se + 1e-3, "{} vs {e}", a1.value);
    }

    #[test]
    fn matches_order_conditioned_monte_carlo() {
        // g = (4, 2, 1), P = 1, r = 0.5, stage 2 of the order 0 > 1 > 2
        let g = [4.0, 2.0, 1.0];
        let model = spacing_betas(&g, 1.0).unwrap();
        let a = conditional_outage(2, &model, 0.5, &[], ClosedForm::Validated).unwrap();
        let theta = rate_threshold(0.5);
        let exps: Vec<Exp<f64>> = g.iter().map(|m| Exp::new(1.0 / m).unwrap()).collect();
        let mut rng = stream(5, &[2]);
        let (mut kept, mut hits) = (0usize, 0usize);
        while kept < 300_000 {
            let x: Vec<f64> = exps.iter().map(|e| e.sample(&mut rng)).collect();
            if !(x[0] > x[1] && x[1] > x[2]) {
                continue;
            }
            kept += 1;
            if x[1] < theta * (x[2] + 1.0) {
                hits += 1;
            }
        }
        let e = hits as f64 / kept as f64;
        let se = (e * (1.0 - e) / kept as f64).sqrt();
        assert!((a.value - e).abs() < 4.0 * se, "{} vs {e} (se {se})", a.value);
    }

    #[test]
    fn negated_betas_are_detectably_wrong() {
        let model = spacing_betas(&[4.0, 4.0], 1.0).unwrap();
        let good = conditional_outage(1, &model, 0.5, &[], ClosedForm::Validated).unwrap();
        let bad = conditional_outage(1, &model, 0.5, &[], ClosedForm::NegatedBeta).unwrap();
        assert!((good.value - bad.value).abs() > 0.2 * good.value || bad.clamped, "{good:?} {bad:?}");
    }
}
