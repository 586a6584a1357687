//! Probabilities of SNR orderings among independent exponential users.

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use rand_distr::{Distribution, Exp1};
use std::collections::BTreeMap;

/// Probability that independent `Exp(rates[i])` variables satisfy
/// `X_{asc[0]} < X_{asc[1]} < ...`, i.e. `asc` lists users weakest first.
pub fn order_probability(rates: &[f64], asc: &[usize]) -> Result<f64> {
    check_permutation(rates.len(), asc)?;
    if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::Domain(format!("rate must be positive, got {r}")));
    }
    // tails are summed afresh, smallest first, so that widely spread rates
    // do not lose the small ones to cancellation
    let mut p = 1.0;
    for m in 0..asc.len() {
        let tail = tail_sum(asc[m..].iter().map(|&i| rates[i]));
        p *= rates[asc[m]] / tail;
    }
    Ok(p)
}

/// Probability of a decoding order (strongest first) given mean SNRs.
pub fn decode_order_probability(mean_snr: &[f64], order: &[usize]) -> Result<f64> {
    let rates: Vec<f64> = mean_snr.iter().map(|m| 1.0 / m).collect();
    let asc: Vec<usize> = order.iter().rev().copied().collect();
    order_probability(&rates, &asc)
}

fn tail_sum(it: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = it.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

fn check_permutation(n: usize, perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::Dimension(format!("order has {} entries, expected {n}", perm.len())));
    }
    for &i in perm {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Dimension(format!("order is not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

/// A decoding order (strongest first, local indices) with its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedOrder {
    pub order: Vec<usize>,
    pub weight: f64,
}

/// All decoding orders with probability at least `prune`, plus the total
/// probability of the discarded ones.
pub fn enumerate_orders(mean_snr: &[f64], prune: f64) -> Result<(Vec<WeightedOrder>, f64)> {
    for &m in mean_snr {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::Domain(format!("mean SNR must be positive, got {m}")));
        }
    }
    let rates: Vec<f64> = mean_snr.iter().map(|m| 1.0 / m).collect();
    let mut out = Vec::new();
    let mut pruned = 0.0;
    let mut asc = Vec::with_capacity(rates.len());
    let mut used = vec![false; rates.len()];
    dfs(&rates, 1.0, prune, &mut asc, &mut used, &mut out, &mut pruned);
    Ok((out, pruned))
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    rates: &[f64],
    p: f64,
    prune: f64,
    asc: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut Vec<WeightedOrder>,
    pruned: &mut f64,
) {
    if asc.len() == rates.len() {
        out.push(WeightedOrder { order: asc.iter().rev().copied().collect(), weight: p });
        return;
    }
    let tail = tail_sum((0..rates.len()).filter(|&i| !used[i]).map(|i| rates[i]));
    for i in 0..rates.len() {
        if used[i] {
            continue;
        }
        // the next weakest user is i
        let q = p * rates[i] / tail;
        if q < prune {
            *pruned += q;
            continue;
        }
        used[i] = true;
        asc.push(i);
        dfs(rates, q, prune, asc, used, out, pruned);
        asc.pop();
        used[i] = false;
    }
}

/// Empirical decoding order distribution from `samples` fading draws.
pub fn sample_orders(
    mean_snr: &[f64],
    samples: usize,
    rng: &mut StreamRng,
) -> Result<Vec<WeightedOrder>> {
    if samples == 0 {
        return Err(Error::InvalidParameter("order samples must be positive".into()));
    }
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut snr = vec![0.0; mean_snr.len()];
    let mut idx: Vec<usize> = (0..mean_snr.len()).collect();
    for _ in 0..samples {
        for (s, &m) in snr.iter_mut().zip(mean_snr) {
            let e: f64 = Exp1.sample(rng);
            *s = m * e;
        }
        idx.sort_by(|&a, &b| snr[b].total_cmp(&snr[a]).then(a.cmp(&b)));
        *counts.entry(idx.clone()).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(order, c)| WeightedOrder { order, weight: c as f64 / samples as f64 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn two_users_closed_form() {
        // P(X_0 < X_1) = r0 / (r0 + r1)
        let p = order_probability(&[2.0, 3.0], &[0, 1]).unwrap();
        assert!((p - 0.4).abs() < 1e-15);
    }

    #[test]
    fn three_users_known_value() {
        // rates 1, 2, 3 with X_2 < X_1 < X_0: 3/6 * 2/3 * 1 = 1/3
        let p = order_probability(&[1.0, 2.0, 3.0], &[2, 1, 0]).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
        // the reverse: 1/6 * 2/5 * 1 = 1/15
        let p = order_probability(&[1.0, 2.0, 3.0], &[0, 1, 2]).unwrap();
        assert!((p - 1.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_permutations() {
        assert!(order_probability(&[1.0, 1.0], &[0, 0]).is_err());
        assert!(order_probability(&[1.0, 1.0], &[0]).is_err());
        assert!(order_probability(&[1.0, 0.0], &[0, 1]).is_err());
    }

    #[test]
    fn enumeration_matches_direct_probabilities() {
        let means = [5.0, 1.0, 0.5, 2.0];
        let (orders, pruned) = enumerate_orders(&means, 0.0).unwrap();
        assert_eq!(orders.len(), 24);
        assert_eq!(pruned, 0.0);
        for o in &orders {
            let p = decode_order_probability(&means, &o.order).unwrap();
            assert!((p - o.weight).abs() < 1e-15);
        }
    }

    #[test]
    fn pruning_accounts_for_discarded_mass() {
        let means = [1000.0, 1.0, 0.001, 3.0, 0.3];
        let (orders, pruned) = enumerate_orders(&means, 1e-6).unwrap();
        assert!(orders.len() < 120);
        let kept: f64 = orders.iter().map(|o| o.weight).sum();
        assert!((kept + pruned - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_distribution_is_close() {
        let means = [4.0, 2.0, 1.0];
        let mut rng = stream(3, &[1]);
        let s = sample_orders(&means, 200_000, &mut rng).unwrap();
        for o in &s {
            let p = decode_order_probability(&means, &o.order).unwrap();
            assert!((p - o.weight).abs() < 5e-3, "{:?}: {p} vs {}", o.order, o.weight);
        }
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(rates in prop::collection::vec(1e-3f64..1e3, 1..=6)) {
            let total: f64 = permutations(rates.len())
                .iter()
                .map(|p| order_probability(&rates, p).unwrap())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-12, "{total}");
        }
    }
}
