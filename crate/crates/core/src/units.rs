//! dB / linear conversions used at the configuration boundary.

#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Power in dBm to milliwatts.
#[inline]
pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

/// SINR threshold `2^r - 1` for a rate in bit/s/Hz.
#[inline]
pub fn rate_threshold(rate: f64) -> f64 {
    (rate * std::f64::consts::LN_2).exp_m1()
}

#[inline]
pub fn capacity(sinr: f64) -> f64 {
    sinr.ln_1p() / std::f64::consts::LN_2
}
