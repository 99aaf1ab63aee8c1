//! Negative Binomial (NB2) log-likelihood, `Var(Y) = mu + alpha * mu^2`.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Above this shape `1/alpha` the Stirling form of `ln Γ(y+r) - ln Γ(r)` is
/// used; it stays accurate as `alpha -> 0` where direct differences of
/// `ln Γ` cancel catastrophically.
const LARGE_SHAPE: f64 = 1e4;

fn stirling_tail(x: f64) -> f64 {
    let x2 = x * x;
    1.0 / (12.0 * x) - 1.0 / (360.0 * x * x2) + 1.0 / (1260.0 * x * x2 * x2)
}

/// Log-probability of `y` under NB2 with mean `mu` and dispersion `alpha`.
pub fn nb_logpmf(y: f64, mu: f64, alpha: f64) -> f64 {
    let r = 1.0 / alpha;
    let am = alpha * mu;
    let tail = y * mu.ln() - (y + r) * am.ln_1p() - ln_gamma(y + 1.0);
    if y == 0.0 {
        return -r * am.ln_1p();
    }
    if r >= LARGE_SHAPE {
        let ya = (y * alpha).ln_1p();
        (r + y - 0.5) * ya - y + stirling_tail(r + y) - stirling_tail(r) + tail
    } else {
        ln_gamma(y + r) - ln_gamma(r) + y * alpha.ln() + tail
    }
}

pub fn poisson_logpmf(y: f64, mu: f64) -> f64 {
    if y == 0.0 {
        -mu
    } else {
        y * mu.ln() - mu - ln_gamma(y + 1.0)
    }
}

/// Weighted NB2 log-likelihood `Σ w_i log NB(y_i; mu_i, alpha)`.
pub fn nb_loglik(y: &[f64], mu: &[f64], alpha: f64, w: &[f64]) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid("alpha", format!("dispersion must be > 0, got {alpha}")));
    }
    if y.len() != mu.len() || y.len() != w.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: y={}, mu={}, w={}",
            y.len(),
            mu.len(),
            w.len()
        )));
    }
    if let Some(m) = mu.iter().find(|m| !(**m > 0.0)) {
        return Err(Error::invalid("mu", format!("means must be > 0, got {m}")));
    }
    Ok(weighted_loglik(y, mu, alpha, w))
}

pub(crate) fn weighted_loglik(y: &[f64], mu: &[f64], alpha: f64, w: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .zip(w)
        .filter(|(_, &wi)| wi != 0.0)
        .map(|((&yi, &mi), &wi)| wi * nb_logpmf(yi, mi, alpha))
        .sum()
}

pub fn poisson_loglik(y: &[f64], mu: &[f64], w: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .zip(w)
        .filter(|(_, &wi)| wi != 0.0)
        .map(|((&yi, &mi), &wi)| wi * poisson_logpmf(yi, mi))
        .sum()
}
