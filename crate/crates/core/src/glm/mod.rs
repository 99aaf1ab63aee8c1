//! Negative-Binomial (NB2) GLM with log link.
//!
//! `β` is fitted by IRLS for a given dispersion `α`; `α` is then updated by a
//! golden-section maximization of the profile likelihood over `log α`. The
//! two steps alternate until the log-likelihood stabilizes.

mod nb;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub use nb::{nb_loglik, nb_logpmf, poisson_loglik, poisson_logpmf};

use crate::error::{Error, Result};
use crate::flows::FeatureMatrix;
use crate::optimize::golden_section_min;

pub const INTERCEPT: &str = "intercept";

/// Row-major design matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    names: Vec<String>,
    data: Vec<f64>,
    n: usize,
}

impl Design {
    pub fn new(names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let p = names.len();
        if p == 0 {
            return Err(Error::InvalidInput("design has no columns".into()));
        }
        if !data.len().is_multiple_of(p) {
            return Err(Error::InvalidInput(format!(
                "design data length {} is not a multiple of {p} columns",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("design contains non-finite values".into()));
        }
        let n = data.len() / p;
        Ok(Design { names, data, n })
    }

    /// Intercept column followed by every feature column.
    pub fn from_features(fm: &FeatureMatrix) -> Result<Self> {
        let p = fm.n_cols() + 1;
        let mut names = Vec::with_capacity(p);
        names.push(INTERCEPT.to_string());
        names.extend(fm.columns.iter().cloned());
        let mut data = Vec::with_capacity(fm.n_rows() * p);
        for i in 0..fm.n_rows() {
            data.push(1.0);
            data.extend_from_slice(fm.row(i));
        }
        Design::new(names, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Design {
        let p = self.n_cols();
        let mut data = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Design {
            names: self.names.clone(),
            data,
            n: rows.len(),
        }
    }

    fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(beta).map(|(x, b)| x * b).sum())
            .collect()
    }

    /// `(Xᵀ diag(ω) X, Xᵀ diag(ω) z)`.
    fn weighted_normal_equations(&self, omega: &[f64], z: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.n_cols();
        let mut m = vec![0.0; p * p];
        let mut v = vec![0.0; p];
        for i in 0..self.n {
            let wi = omega[i];
            if wi == 0.0 {
                continue;
            }
            let x = self.row(i);
            for a in 0..p {
                let wa = wi * x[a];
                v[a] += wa * z[i];
                let row = &mut m[a * p..(a + 1) * p];
                for b in a..p {
                    row[b] += wa * x[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                m[a * p + b] = m[b * p + a];
            }
        }
        (DMatrix::from_row_slice(p, p, &m), DVector::from_vec(v))
    }

    /// Fails with the names of a collinear column set when `sqrt(w) X` does
    /// not have full column rank.
    pub fn check_rank(&self, w: &[f64]) -> Result<()> {
        let p = self.n_cols();
        let sw: Vec<f64> = w.iter().map(|wi| wi.max(0.0).sqrt()).collect();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(p);
        let mut basis_cols: Vec<usize> = Vec::with_capacity(p);
        // r[k][j]: coefficient of basis vector j in original column k
        let mut r_rows: Vec<Vec<f64>> = Vec::with_capacity(p);
        let mut norms = Vec::with_capacity(p);
        for k in 0..p {
            let col: Vec<f64> = (0..self.n).map(|i| self.row(i)[k] * sw[i]).collect();
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(norm);
            let mut v = col;
            let mut coef = vec![0.0; basis.len()];
            for _ in 0..2 {
                for (j, q) in basis.iter().enumerate() {
                    let d: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                    coef[j] += d;
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= d * qi;
                    }
                }
            }
            let resid = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 || resid <= 1e-9 * norm {
                // Express the column in terms of the independent columns.
                let r = basis.len();
                let mut c = vec![0.0; r];
                for j in (0..r).rev() {
                    let mut s = coef[j];
                    for l in j + 1..r {
                        s -= r_rows[l][j] * c[l];
                    }
                    c[j] = s / r_rows[j][j];
                }
                let mut columns: Vec<String> = c
                    .iter()
                    .enumerate()
                    .filter(|(j, cj)| norm > 0.0 && cj.abs() * norms[basis_cols[*j]] > 1e-6 * norm)
                    .map(|(j, _)| self.names[basis_cols[j]].clone())
                    .collect();
                columns.push(self.names[k].clone());
                return Err(Error::RankDeficient {
                    columns,
                    location: None,
                });
            }
            for vi in v.iter_mut() {
                *vi /= resid;
            }
            coef.push(resid);
            r_rows.push(coef);
            basis.push(v);
            basis_cols.push(k);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlmConfig {
    /// Relative log-likelihood change for convergence (inner and outer).
    pub tolerance: f64,
    pub max_outer_iterations: usize,
    pub max_irls_iterations: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Width of the final golden-section bracket on `log α`.
    pub log_alpha_tolerance: f64,
    /// Holds the dispersion fixed instead of profiling it.
    pub fixed_alpha: Option<f64>,
}

impl Default for GlmConfig {
    fn default() -> Self {
        GlmConfig {
            tolerance: 1e-8,
            max_outer_iterations: 100,
            max_irls_iterations: 100,
            alpha_min: 1e-4,
            alpha_max: 1e2,
            log_alpha_tolerance: 1e-7,
            fixed_alpha: None,
        }
    }
}

/// Starting point for a fit (e.g. a previous fit on similar data).
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub beta: Vec<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub alpha: f64,
    pub loglik: f64,
    /// `None` when `n_obs <= k_params + 1`.
    pub aicc: Option<f64>,
    pub n_obs: usize,
    /// Coefficients plus the dispersion.
    pub k_params: usize,
    /// Inverse Fisher information for `β`, row-major `p x p`.
    pub covariance: Vec<f64>,
    pub outer_iterations: usize,
    pub loglik_trace: Vec<f64>,
}

impl GlmFit {
    /// Gravity constant `G = exp(β0)`, when the design has an intercept.
    pub fn gravity_constant(&self) -> Option<f64> {
        self.coefficient(INTERCEPT).map(f64::exp)
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.beta[k])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.se[k])
    }

    pub fn predict(&self, design: &Design) -> Vec<f64> {
        design.linear_predictor(&self.beta).into_iter().map(safe_exp).collect()
    }

    /// Report rows `variable,beta,se,t,p`.
    pub fn write_report(&self, w: impl std::io::Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::parse("fit report", e);
        wr.write_record(["variable", "beta", "se", "t", "p"]).map_err(err)?;
        for k in 0..self.beta.len() {
            wr.write_record([
                self.names[k].clone(),
                format!("{:.6}", self.beta[k]),
                format!("{:.6}", self.se[k]),
                format!("{:.6}", self.t_values[k]),
                format!("{:.6e}", self.p_values[k]),
            ])
            .map_err(err)?;
        }
        wr.flush().map_err(|e| Error::parse("fit report", e))?;
        Ok(())
    }
}

fn safe_exp(eta: f64) -> f64 {
    eta.clamp(-700.0, 700.0).exp()
}

const WORKING_WEIGHT_FLOOR: f64 = 1e-10;

/// `AIC + 2k(k+1)/(n-k-1)` with `AIC = -2 loglik + 2k`.
pub fn aicc(loglik: f64, k_params: f64, n_obs: usize) -> Result<f64> {
    let n = n_obs as f64;
    if n <= k_params + 1.0 {
        return Err(Error::InvalidInput(format!(
            "AICc needs n_obs > k + 1 (n={n_obs}, k={k_params})"
        )));
    }
    let aic = -2.0 * loglik + 2.0 * k_params;
    Ok(aic + 2.0 * k_params * (k_params + 1.0) / (n - k_params - 1.0))
}

/// Two-sided normal-approximation p-value of a t statistic.
pub fn normal_two_sided_p(t: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * n.sf(t.abs())).min(1.0)
}

struct Irls {
    beta: Vec<f64>,
    loglik: f64,
}

/// IRLS for `β` at fixed `α`, with step-halving when the likelihood drops.
fn irls(x: &Design, y: &[f64], w: &[f64], alpha: f64, start: Option<&[f64]>, cfg: &GlmConfig) -> Result<Irls> {
    let n = x.n_rows();
    let mut eta: Vec<f64> = match start {
        Some(b) => x.linear_predictor(b),
        None => {
            let (sw, swy) = w
                .iter()
                .zip(y)
                .fold((0.0, 0.0), |(a, b), (wi, yi)| (a + wi, b + wi * yi));
            let ybar = if sw > 0.0 { swy / sw } else { 1.0 };
            y.iter().map(|yi| (0.5 * (yi + ybar)).max(0.1).ln()).collect()
        }
    };
    let mut beta_old: Option<Vec<f64>> = start.map(<[f64]>::to_vec);
    let mut ll_old = beta_old.as_ref().map(|_| {
        let mu: Vec<f64> = eta.iter().map(|&e| safe_exp(e)).collect();
        nb::weighted_loglik(y, &mu, alpha, w)
    });
    let mut omega = vec![0.0; n];
    let mut z = vec![0.0; n];
    for _ in 0..cfg.max_irls_iterations {
        for i in 0..n {
            // Newton step: observed information is PSD for NB2 with log link.
            let mu = safe_exp(eta[i]);
            let d = 1.0 + alpha * mu;
            let h = (mu * (1.0 + alpha * y[i]) / (d * d)).max(WORKING_WEIGHT_FLOOR);
            omega[i] = w[i] * h;
            z[i] = eta[i] + (y[i] - mu) / (d * h);
        }
        let (m, v) = x.weighted_normal_equations(&omega, &z);
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Numerical("weighted information matrix is not positive definite".into()))?;
        let mut beta: Vec<f64> = chol.solve(&v).iter().copied().collect();
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numerical("IRLS produced non-finite coefficients".into()));
        }
        let ll_of = |b: &[f64]| {
            let mu: Vec<f64> = x.linear_predictor(b).into_iter().map(safe_exp).collect();
            nb::weighted_loglik(y, &mu, alpha, w)
        };
        let mut ll = ll_of(&beta);
        if let (Some(prev), Some(old)) = (ll_old, beta_old.as_ref()) {
            let mut halvings = 0;
            while !(ll >= prev) && halvings < 30 {
                for (b, o) in beta.iter_mut().zip(old) {
                    *b = 0.5 * (*b + *o);
                }
                ll = ll_of(&beta);
                halvings += 1;
            }
            if !(ll >= prev) {
                // No ascent direction left; keep the previous iterate.
                return Ok(Irls {
                    beta: old.clone(),
                    loglik: prev,
                });
            }
            let converged = (ll - prev).abs() <= cfg.tolerance * prev.abs().max(1e-300);
            if converged {
                return Ok(Irls { beta, loglik: ll });
            }
        }
        eta = x.linear_predictor(&beta);
        ll_old = Some(ll);
        beta_old = Some(beta);
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_irls_iterations,
        trace: ll_old.into_iter().collect(),
    })
}

/// Fits the NB2 log-link GLM by maximum likelihood.
pub fn fit_nbglm(x: &Design, y: &[f64], w: &[f64], cfg: &GlmConfig) -> Result<GlmFit> {
    fit_nbglm_from(x, y, w, cfg, None)
}

pub fn fit_nbglm_from(x: &Design, y: &[f64], w: &[f64], cfg: &GlmConfig, start: Option<&WarmStart>) -> Result<GlmFit> {
    let n = x.n_rows();
    let p = x.n_cols();
    if y.len() != n || w.len() != n {
        return Err(Error::InvalidInput(format!(
            "length mismatch: design has {n} rows, y={}, w={}",
            y.len(),
            w.len()
        )));
    }
    if let Some(v) = y.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("y", format!("responses must be nonnegative, got {v}")));
    }
    if let Some(v) = w.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("w", format!("weights must be nonnegative, got {v}")));
    }
    let n_obs = w.iter().filter(|&&wi| wi > 0.0).count();
    if n_obs <= p {
        return Err(Error::InvalidInput(format!(
            "need more observations ({n_obs}) than coefficients ({p})"
        )));
    }
    x.check_rank(w)?;
    if let Some(a) = cfg.fixed_alpha {
        if !(a > 0.0) {
            return Err(Error::invalid("fixed_alpha", "must be > 0"));
        }
    }

    let (lo, hi) = (cfg.alpha_min.ln(), cfg.alpha_max.ln());
    let mut alpha = cfg
        .fixed_alpha
        .or(start.map(|s| s.alpha))
        .unwrap_or(0.1)
        .clamp(cfg.alpha_min, cfg.alpha_max);
    let mut beta: Option<Vec<f64>> = start.map(|s| s.beta.clone());
    let mut trace = Vec::new();
    let mut converged = false;
    let mut outer = 0;
    while outer < cfg.max_outer_iterations {
        outer += 1;
        let fit = irls(x, y, w, alpha, beta.as_deref(), cfg)?;
        let b = fit.beta;
        let ll = if cfg.fixed_alpha.is_some() {
            fit.loglik
        } else {
            let mu: Vec<f64> = x.linear_predictor(&b).into_iter().map(safe_exp).collect();
            let g = golden_section_min(
                |la| -nb::weighted_loglik(y, &mu, la.exp(), w),
                lo,
                hi,
                cfg.log_alpha_tolerance,
            );
            alpha = g.x.exp();
            -g.fx
        };
        beta = Some(b);
        let done = cfg.fixed_alpha.is_some()
            || trace
                .last()
                .is_some_and(|&prev: &f64| (ll - prev).abs() <= cfg.tolerance * prev.abs().max(1e-300));
        trace.push(ll);
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: outer,
            trace,
        });
    }
    let beta = beta.expect("at least one outer iteration");
    let mu: Vec<f64> = x.linear_predictor(&beta).into_iter().map(safe_exp).collect();
    let loglik = nb::weighted_loglik(y, &mu, alpha, w);

    let omega: Vec<f64> = mu
        .iter()
        .zip(w)
        .map(|(&m, &wi)| wi * (m / (1.0 + alpha * m)).max(WORKING_WEIGHT_FLOOR))
        .collect();
    let (info, _) = x.weighted_normal_equations(&omega, &vec![0.0; n]);
    let cov = info
        .cholesky()
        .ok_or_else(|| Error::Numerical("Fisher information is not positive definite".into()))?
        .inverse();
    let se: Vec<f64> = (0..p).map(|k| cov[(k, k)].sqrt()).collect();
    if se.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Numerical("non-positive standard error".into()));
    }
    let t_values: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    let p_values = t_values.iter().map(|&t| normal_two_sided_p(t)).collect();
    let k_params = p + 1;
    let mut covariance = Vec::with_capacity(p * p);
    for a in 0..p {
        for b in 0..p {
            covariance.push(cov[(a, b)]);
        }
    }
    Ok(GlmFit {
        names: x.names().to_vec(),
        beta,
        se,
        t_values,
        p_values,
        alpha,
        loglik,
        aicc: aicc(loglik, k_params as f64, n_obs).ok(),
        n_obs,
        k_params,
        covariance,
        outer_iterations: outer,
        loglik_trace: trace,
    })
}
