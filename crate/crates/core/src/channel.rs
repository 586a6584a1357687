//! Network geometry, large-scale gains and Rayleigh fading.
//!
//! All gains are stored as linear channel gains divided by the linear noise
//! power, so the received SNR of user `k` at base `b` is
//! `P_k * gains[k][b] * |h[k][b]|^2` with unit noise. The physical path loss
//! is positive in dB; the stored gain is its negative (received over
//! transmitted), converted once in [`draw_macro`].

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::db_to_linear;

/// Maximum rejection-sampling attempts per user in [`place_users`].
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub n_bases: usize,
    pub cell_radius_m: f64,
    /// Path-loss exponent of each cell; a single value applies to every cell.
    pub path_loss_exponent: Vec<f64>,
    pub d0_m: f64,
    /// Average path loss at `d0_m`, in dB.
    pub pl0_db: f64,
    pub shadow_sigma_db: f64,
    pub min_dist_m: f64,
    pub noise_dbm: f64,
    /// Spacing of the bases, which sit on a line. Defaults to twice the radius.
    pub inter_base_distance_m: f64,
}

impl Default for ChannelParams {
    /// Two abutting 1 km cells, exponent 3.6, 30 m exclusion zone, 8 dB
    /// shadowing and -105 dBm noise. The 48 dB loss at 30 m gives the
    /// 48..103 dB span between the exclusion radius and the cell edge.
    fn default() -> Self {
        Self {
            n_bases: 2,
            cell_radius_m: 1000.0,
            path_loss_exponent: vec![3.6],
            d0_m: 30.0,
            pl0_db: 48.0,
            shadow_sigma_db: 8.0,
            min_dist_m: 30.0,
            noise_dbm: -105.0,
            inter_base_distance_m: 2000.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.n_bases == 0 {
            return bad("n_bases must be at least 1");
        }
        if !(self.min_dist_m > 0.0 && self.cell_radius_m > self.min_dist_m) {
            return bad("require cell_radius_m > min_dist_m > 0");
        }
        if !(self.shadow_sigma_db >= 0.0 && self.shadow_sigma_db.is_finite()) {
            return bad("shadow_sigma_db must be finite and nonnegative");
        }
        if !(self.d0_m > 0.0 && self.d0_m <= self.min_dist_m) {
            return bad("require 0 < d0_m <= min_dist_m");
        }
        if self.path_loss_exponent.len() != 1 && self.path_loss_exponent.len() != self.n_bases {
            return bad("path_loss_exponent needs one value or one per base");
        }
        if self.path_loss_exponent.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return bad("path-loss exponents must be positive");
        }
        if self.n_bases > 1 && !(self.inter_base_distance_m > 0.0) {
            return bad("inter_base_distance_m must be positive");
        }
        if !self.pl0_db.is_finite() || !self.noise_dbm.is_finite() {
            return bad("pl0_db and noise_dbm must be finite");
        }
        Ok(())
    }

    pub fn exponent(&self, b: usize) -> f64 {
        if self.path_loss_exponent.len() == 1 {
            self.path_loss_exponent[0]
        } else {
            self.path_loss_exponent[b]
        }
    }

    pub fn base_positions(&self) -> Vec<[f64; 2]> {
        (0..self.n_bases)
            .map(|b| [b as f64 * self.inter_base_distance_m, 0.0])
            .collect()
    }

    /// Linear noise power in mW.
    pub fn noise_mw(&self) -> f64 {
        db_to_linear(self.noise_dbm)
    }
}

/// Geometry plus the macroscopic (path loss and shadowing) state.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkScene {
    pub base_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
    /// `gains[k][b]`, noise-normalized linear gains. Empty until [`draw_macro`].
    pub gains: Vec<Vec<f64>>,
}

impl NetworkScene {
    pub fn n_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn n_bases(&self) -> usize {
        self.base_positions.len()
    }

    pub fn has_gains(&self) -> bool {
        self.gains.len() == self.n_users() && !self.gains.is_empty()
    }

    pub fn distance(&self, k: usize, b: usize) -> f64 {
        dist(self.user_positions[k], self.base_positions[b])
    }

    /// Builds a scene directly from a gain matrix; positions are left at the origin.
    pub fn from_gains(gains: Vec<Vec<f64>>) -> Result<Self> {
        let n_b = gains.first().map_or(0, Vec::len);
        if gains.is_empty() {
            return Err(Error::EmptyScene);
        }
        if n_b == 0 || gains.iter().any(|row| row.len() != n_b) {
            return Err(Error::Dimension("ragged gain matrix".into()));
        }
        if gains.iter().flatten().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::Domain("gains must be positive and finite".into()));
        }
        Ok(Self {
            base_positions: vec![[0.0, 0.0]; n_b],
            user_positions: vec![[0.0, 0.0]; gains.len()],
            gains,
        })
    }
}

/// One draw of the small-scale fading coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingDraw {
    pub h: Vec<Vec<Complex64>>,
}

impl FadingDraw {
    /// `|h[k][b]|^2`.
    pub fn power(&self, k: usize, b: usize) -> f64 {
        self.h[k][b].norm_sqr()
    }

    /// Constant-magnitude draw, useful for deterministic checks.
    pub fn unit(k: usize, n_b: usize) -> Self {
        Self { h: vec![vec![Complex64::new(1.0, 0.0); n_b]; k] }
    }

    pub fn from_powers(powers: &[Vec<f64>]) -> Self {
        Self {
            h: powers
                .iter()
                .map(|row| row.iter().map(|&p| Complex64::new(p.sqrt(), 0.0)).collect())
                .collect(),
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Places `k` users uniformly over the union of the cell disks, rejecting
/// points inside the exclusion radius of their nearest base.
pub fn place_users<R: Rng + ?Sized>(params: &ChannelParams, k: usize, rng: &mut R) -> Result<NetworkScene> {
    params.validate()?;
    if k == 0 {
        return Err(Error::EmptyScene);
    }
    let bases = params.base_positions();
    let r = params.cell_radius_m;
    let x_lo = bases.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min) - r;
    let x_hi = bases.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) + r;
    let mut users = Vec::with_capacity(k);
    for user in 0..k {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let p = [rng.random_range(x_lo..x_hi), rng.random_range(-r..r)];
            let nearest = bases.iter().map(|&b| dist(p, b)).fold(f64::INFINITY, f64::min);
            if nearest <= r && nearest >= params.min_dist_m {
                placed = Some(p);
                break;
            }
        }
        users.push(placed.ok_or(Error::PlacementFailed { user, attempts: MAX_PLACEMENT_ATTEMPTS })?);
    }
    Ok(NetworkScene { base_positions: bases, user_positions: users, gains: Vec::new() })
}

/// Deterministic distance-dependent path loss in dB (positive number).
pub fn path_loss_db(params: &ChannelParams, b: usize, d: f64) -> Result<f64> {
    if b >= params.n_bases {
        return Err(Error::Dimension(format!("base {b} out of range")));
    }
    if !(d >= params.d0_m) {
        return Err(Error::Domain(format!("distance {d} m is below the reference distance {} m", params.d0_m)));
    }
    Ok(params.pl0_db + 10.0 * params.exponent(b) * (d / params.d0_m).log10())
}

/// Draws log-normal shadowing and fills the noise-normalized gain matrix.
pub fn draw_macro<R: Rng + ?Sized>(scene: &NetworkScene, params: &ChannelParams, rng: &mut R) -> Result<NetworkScene> {
    params.validate()?;
    if scene.n_users() == 0 {
        return Err(Error::EmptyScene);
    }
    if scene.n_bases() != params.n_bases {
        return Err(Error::Dimension("scene and parameters disagree on base count".into()));
    }
    let mut gains = Vec::with_capacity(scene.n_users());
    for k in 0..scene.n_users() {
        let mut row = Vec::with_capacity(params.n_bases);
        for b in 0..params.n_bases {
            let pl = path_loss_db(params, b, scene.distance(k, b))?;
            let z: f64 = StandardNormal.sample(rng);
            let gain_db = -(pl + params.shadow_sigma_db * z);
            row.push(db_to_linear(gain_db - params.noise_dbm));
        }
        gains.push(row);
    }
    Ok(NetworkScene { gains, ..scene.clone() })
}

/// Draws i.i.d. CN(0, 1) coefficients for every user/base pair.
pub fn draw_fading<R: Rng + ?Sized>(k: usize, n_b: usize, rng: &mut R) -> Result<FadingDraw> {
    if k == 0 || n_b == 0 {
        return Err(Error::InvalidParameter("fading needs at least one user and one base".into()));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h = (0..k)
        .map(|_| {
            (0..n_b)
                .map(|_| {
                    let re: f64 = StandardNormal.sample(rng);
                    let im: f64 = StandardNormal.sample(rng);
                    Complex64::new(s * re, s * im)
                })
                .collect()
        })
        .collect();
    Ok(FadingDraw { h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::units::linear_to_db;

    fn one_cell() -> ChannelParams {
        ChannelParams { n_bases: 1, ..ChannelParams::default() }
    }

    #[test]
    fn placement_respects_geometry() {
        let params = ChannelParams::default();
        let scene = place_users(&params, 10, &mut stream(1, &[0])).unwrap();
        assert_eq!(scene.n_users(), 10);
        for k in 0..10 {
            let nearest = (0..2).map(|b| scene.distance(k, b)).fold(f64::INFINITY, f64::min);
            assert!((30.0..=1000.0).contains(&nearest), "{nearest}");
        }
    }

    #[test]
    fn single_user_single_cell() {
        let scene = place_users(&one_cell(), 1, &mut stream(3, &[])).unwrap();
        let d = scene.distance(0, 0);
        assert!((30.0..=1000.0).contains(&d));
    }

    #[test]
    fn placement_is_deterministic() {
        let p = ChannelParams::default();
        let a = place_users(&p, 5, &mut stream(9, &[4])).unwrap();
        let b = place_users(&p, 5, &mut stream(9, &[4])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_users_is_an_error() {
        assert!(matches!(place_users(&ChannelParams::default(), 0, &mut stream(0, &[])), Err(Error::EmptyScene)));
    }

    #[test]
    fn degenerate_geometry_gives_up() {
        // The exclusion zone swallows almost the whole disk.
        let p = ChannelParams { n_bases: 1, cell_radius_m: 1000.0, min_dist_m: 999.999_999, d0_m: 1.0, ..ChannelParams::default() };
        assert!(matches!(place_users(&p, 1, &mut stream(0, &[])), Err(Error::PlacementFailed { .. })));
    }

    #[test]
    fn path_loss_reference_and_decade() {
        let p = ChannelParams::default();
        assert_eq!(path_loss_db(&p, 0, p.d0_m).unwrap(), p.pl0_db);
        let ten = path_loss_db(&p, 0, 10.0 * p.d0_m).unwrap();
        assert!((ten - (p.pl0_db + 36.0)).abs() < 1e-12);
        assert!(path_loss_db(&p, 0, 10.0).is_err());
    }

    #[test]
    fn path_loss_dynamic_range() {
        let p = ChannelParams::default();
        let near = path_loss_db(&p, 0, 30.0).unwrap();
        let far = path_loss_db(&p, 0, 1000.0).unwrap();
        assert!((near - 48.0).abs() < 1e-9);
        assert!((far - 103.0).abs() < 0.5, "{far}");
        assert!((far - near - 54.8).abs() < 0.1);
    }

    #[test]
    fn zero_shadowing_is_deterministic_path_loss() {
        let p = ChannelParams { shadow_sigma_db: 0.0, ..ChannelParams::default() };
        let scene = place_users(&p, 4, &mut stream(5, &[0])).unwrap();
        let a = draw_macro(&scene, &p, &mut stream(5, &[1])).unwrap();
        let b = draw_macro(&scene, &p, &mut stream(77, &[1])).unwrap();
        assert_eq!(a.gains, b.gains);
        for k in 0..4 {
            for bs in 0..2 {
                let expect = -path_loss_db(&p, bs, scene.distance(k, bs)).unwrap() - p.noise_dbm;
                assert!((linear_to_db(a.gains[k][bs]) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noise_normalization_unit_snr() {
        // Received -105 dBm against -105 dBm noise is exactly 0 dB.
        let p = ChannelParams { shadow_sigma_db: 0.0, ..one_cell() };
        let pl = path_loss_db(&p, 0, 100.0).unwrap();
        let scene = NetworkScene { base_positions: vec![[0.0, 0.0]], user_positions: vec![[100.0, 0.0]], gains: vec![] };
        let scene = draw_macro(&scene, &p, &mut stream(0, &[])).unwrap();
        let tx_dbm = -105.0 + pl;
        let snr = db_to_linear(tx_dbm) * scene.gains[0][0];
        assert!((snr - 1.0).abs() < 1e-9, "{snr}");
    }

    #[test]
    fn shadowing_spread_matches_sigma() {
        let p = one_cell();
        let scene = NetworkScene { base_positions: vec![[0.0, 0.0]], user_positions: vec![[500.0, 0.0]; 1000], gains: vec![] };
        let mut samples = Vec::with_capacity(100_000);
        for t in 0..100 {
            let s = draw_macro(&scene, &p, &mut stream(11, &[t])).unwrap();
            samples.extend(s.gains.iter().map(|r| linear_to_db(r[0])));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 8.0).abs() < 0.1, "sd {sd}");

        // Jarque-Bera on the residual; 1% critical value of chi2(2) is 9.21.
        let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m3 = samples.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2);
        let jb = n / 6.0 * (skew * skew + (kurt - 3.0).powi(2) / 4.0);
        assert!(jb < 9.21, "JB {jb}");
    }

    #[test]
    fn fading_power_is_unit_exponential() {
        let mut rng = stream(21, &[]);
        let n = 1_000_000;
        let mut xs = Vec::with_capacity(n);
        while xs.len() < n {
            let f = draw_fading(100, 1, &mut rng).unwrap();
            xs.extend((0..100).map(|k| f.power(k, 0)));
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.003, "{mean}");

        let p = (-1f64).exp();
        let tail = xs.iter().filter(|&&x| x > 1.0).count() as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((tail - p).abs() < 3.0 * sigma, "{tail}");

        xs.sort_by(f64::total_cmp);
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = 1.0 - (-x).exp();
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.002, "KS {ks}");
    }

    #[test]
    fn fading_is_reproducible() {
        let a = draw_fading(3, 2, &mut stream(4, &[8])).unwrap();
        let b = draw_fading(3, 2, &mut stream(4, &[8])).unwrap();
        assert_eq!(a, b);
    }
}
