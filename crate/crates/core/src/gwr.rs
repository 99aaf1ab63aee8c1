//! Geographically weighted NB regression anchored at origin zones.
//!
//! Every distinct origin is a regression point. A local NB GLM is fitted at
//! each point with observations weighted by a distance kernel on their
//! origin centroid; all rows sharing an origin report that origin's local
//! coefficients.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::flows::FeatureMatrix;
use crate::geo::Point;
use crate::glm::{aicc, fit_nbglm, fit_nbglm_from, nb_logpmf, Design, GlmConfig, GlmFit, WarmStart};
use crate::optimize::golden_section_min;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    Bisquare,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    /// Bandwidth in meters, identical everywhere.
    FixedDistance,
    /// Bandwidth as a neighbor count; each point uses the distance to its
    /// k-th nearest other regression point.
    AdaptiveKnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub mode: BandwidthMode,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn fixed(shape: KernelShape, meters: f64) -> Self {
        KernelSpec {
            shape,
            mode: BandwidthMode::FixedDistance,
            bandwidth: meters,
        }
    }

    pub fn adaptive(shape: KernelShape, k: usize) -> Self {
        KernelSpec {
            shape,
            mode: BandwidthMode::AdaptiveKnn,
            bandwidth: k as f64,
        }
    }
}

pub fn kernel_weight(d: f64, shape: KernelShape, bandwidth: f64) -> f64 {
    match shape {
        KernelShape::Bisquare => {
            if d < bandwidth {
                let u = d / bandwidth;
                let v = 1.0 - u * u;
                v * v
            } else {
                0.0
            }
        }
        KernelShape::Exponential => (-d / bandwidth).exp(),
    }
}

/// Per-point bandwidth in meters.
pub fn local_bandwidths(points: &[Point], spec: &KernelSpec) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("need at least two regression points".into()));
    }
    if !(spec.bandwidth > 0.0) || !spec.bandwidth.is_finite() {
        return Err(Error::invalid(
            "bandwidth",
            format!("must be positive, got {}", spec.bandwidth),
        ));
    }
    match spec.mode {
        BandwidthMode::FixedDistance => Ok(vec![spec.bandwidth; points.len()]),
        BandwidthMode::AdaptiveKnn => {
            if spec.bandwidth.fract() != 0.0 {
                return Err(Error::invalid(
                    "bandwidth",
                    "adaptive bandwidth must be a whole neighbor count",
                ));
            }
            let k = spec.bandwidth as usize;
            if k >= points.len() {
                return Err(Error::invalid(
                    "bandwidth",
                    format!("{k} neighbors requested but only {} regression points", points.len()),
                ));
            }
            Ok(points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut d: Vec<f64> = points
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, q)| p.distance(q))
                        .collect();
                    d.sort_by(f64::total_cmp);
                    d[k - 1]
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionPoint {
    pub id: String,
    pub location: Point,
}

/// One regression point per distinct origin, ordered by id.
pub fn regression_points(fm: &FeatureMatrix) -> Vec<RegressionPoint> {
    let mut by_id: BTreeMap<&str, Point> = BTreeMap::new();
    for (o, a) in fm.origin.iter().zip(&fm.anchor) {
        by_id.entry(o.as_str()).or_insert(*a);
    }
    by_id
        .into_iter()
        .map(|(id, location)| RegressionPoint {
            id: id.to_string(),
            location,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwrConfig {
    pub glm: GlmConfig,
    /// Use the global dispersion at every location instead of profiling it.
    pub shared_alpha: bool,
    pub significance_level: f64,
}

impl Default for GwrConfig {
    fn default() -> Self {
        GwrConfig {
            glm: GlmConfig::default(),
            shared_alpha: false,
            significance_level: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub zone_id: String,
    pub location: Point,
    pub bandwidth_m: f64,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t_values: Vec<f64>,
    pub alpha: f64,
    /// Rows with nonzero kernel weight.
    pub n_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwrFit {
    pub names: Vec<String>,
    pub kernel: KernelSpec,
    pub locals: Vec<LocalFit>,
    pub enp: f64,
    /// Sum of each row's log-likelihood under its own anchor's fit.
    pub loglik: f64,
    pub aicc: f64,
    pub n_obs: usize,
    pub adj_critical_t: f64,
    /// `significant[g][k]` for location `g` and coefficient `k`.
    pub significant: Vec<Vec<bool>>,
}

impl GwrFit {
    pub fn local(&self, zone_id: &str) -> Option<&LocalFit> {
        self.locals.iter().find(|l| l.zone_id == zone_id)
    }

    pub fn k_local(&self) -> usize {
        self.names.len()
    }

    /// Per-variable `mean,std,min,median,max` of the local coefficients.
    pub fn write_summary(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::parse("gwr summary", e);
        wr.write_record(["variable", "mean", "std", "min", "median", "max"])
            .map_err(err)?;
        for (k, name) in self.names.iter().enumerate() {
            let s = Summary::of(self.locals.iter().map(|l| l.beta[k]));
            wr.write_record([
                name.clone(),
                format!("{:.6}", s.mean),
                format!("{:.6}", s.std),
                format!("{:.6}", s.min),
                format!("{:.6}", s.median),
                format!("{:.6}", s.max),
            ])
            .map_err(err)?;
        }
        wr.flush().map_err(|e| Error::parse("gwr summary", e))?;
        Ok(())
    }

    /// Long format `zone_id,variable,beta,se,t,significant`.
    pub fn write_coefficients(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::parse("gwr coefficients", e);
        wr.write_record(["zone_id", "variable", "beta", "se", "t", "significant"])
            .map_err(err)?;
        for (g, l) in self.locals.iter().enumerate() {
            for (k, name) in self.names.iter().enumerate() {
                wr.write_record([
                    l.zone_id.clone(),
                    name.clone(),
                    format!("{:.6}", l.beta[k]),
                    format!("{:.6}", l.se[k]),
                    format!("{:.6}", l.t_values[k]),
                    self.significant[g][k].to_string(),
                ])
                .map_err(err)?;
            }
        }
        wr.flush().map_err(|e| Error::parse("gwr coefficients", e))?;
        Ok(())
    }
}

/// Population statistics of a set of values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Summary {
        let mut v: Vec<f64> = values.into_iter().collect();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m = v.len() / 2;
        let median = if v.len() % 2 == 1 {
            v[m]
        } else {
            0.5 * (v[m - 1] + v[m])
        };
        Summary {
            mean,
            std: var.sqrt(),
            min: v[0],
            median,
            max: v[v.len() - 1],
        }
    }
}

/// Two-sided critical value after the `level * k_local / enp` correction.
pub fn adjusted_critical_t(level: f64, k_local: usize, enp: f64) -> Result<f64> {
    if !(enp > 0.0) {
        return Err(Error::invalid("enp", format!("must be positive, got {enp}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(
            "significance_level",
            format!("must be in (0, 1), got {level}"),
        ));
    }
    let adj = (level * k_local as f64 / enp).min(1.0);
    Ok(Normal::standard().inverse_cdf(1.0 - adj / 2.0))
}

/// Recomputes the significance mask at `level`.
pub fn adjusted_significance(fit: &GwrFit, level: f64) -> Result<Vec<Vec<bool>>> {
    let crit = adjusted_critical_t(level, fit.k_local(), fit.enp)?;
    Ok(mask(&fit.locals, crit))
}

fn mask(locals: &[LocalFit], crit: f64) -> Vec<Vec<bool>> {
    locals
        .iter()
        .map(|l| l.t_values.iter().map(|t| t.abs() > crit).collect())
        .collect()
}

/// Data shared by every GWR fit of one feature matrix.
pub struct GwrProblem {
    design: Design,
    y: Vec<f64>,
    points: Vec<RegressionPoint>,
    /// Regression point index of each row's origin.
    row_point: Vec<usize>,
    /// Rows anchored at each point.
    rows_at: Vec<Vec<usize>>,
    /// Point-to-point distances, row-major.
    dist: Vec<f64>,
    global: GlmFit,
    cfg: GwrConfig,
}

impl GwrProblem {
    pub fn new(fm: &FeatureMatrix, points: Vec<RegressionPoint>, cfg: GwrConfig) -> Result<Self> {
        let design = Design::from_features(fm)?;
        let index: BTreeMap<&str, usize> = points.iter().enumerate().map(|(g, p)| (p.id.as_str(), g)).collect();
        if index.len() != points.len() {
            return Err(Error::InvalidInput("duplicate regression point ids".into()));
        }
        let row_point = fm
            .origin
            .iter()
            .map(|o| {
                index
                    .get(o.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("origin {o} has no regression point")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows_at = vec![Vec::new(); points.len()];
        for (i, &g) in row_point.iter().enumerate() {
            rows_at[g].push(i);
        }
        let m = points.len();
        let mut dist = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                dist[a * m + b] = points[a].location.distance(&points[b].location);
            }
        }
        let y = fm.response.clone();
        let global = fit_nbglm(&design, &y, &vec![1.0; y.len()], &cfg.glm)?;
        Ok(GwrProblem {
            design,
            y,
            points,
            row_point,
            rows_at,
            dist,
            global,
            cfg,
        })
    }

    pub fn global(&self) -> &GlmFit {
        &self.global
    }

    pub fn points(&self) -> &[RegressionPoint] {
        &self.points
    }

    pub fn fit(&self, spec: &KernelSpec) -> Result<GwrFit> {
        let coords: Vec<Point> = self.points.iter().map(|p| p.location).collect();
        let bws = local_bandwidths(&coords, spec)?;
        let m = self.points.len();
        let results: Vec<Result<(LocalFit, f64, f64)>> = (0..m)
            .into_par_iter()
            .map(|g| self.fit_location(g, bws[g], spec.shape))
            .collect();
        let mut locals = Vec::with_capacity(m);
        let (mut enp, mut loglik) = (0.0, 0.0);
        for r in results {
            let (l, s, ll) = r?;
            locals.push(l);
            enp += s;
            loglik += ll;
        }
        let n_obs = self.y.len();
        // The dispersion counts as one extra parameter, as in the global model.
        let aicc = aicc(loglik, enp + 1.0, n_obs)?;
        let crit = adjusted_critical_t(self.cfg.significance_level, self.design.n_cols(), enp)?;
        let significant = mask(&locals, crit);
        Ok(GwrFit {
            names: self.design.names().to_vec(),
            kernel: *spec,
            locals,
            enp,
            loglik,
            aicc,
            n_obs,
            adj_critical_t: crit,
            significant,
        })
    }

    /// Local fit at point `g`, its trace contribution and its own rows'
    /// log-likelihood.
    fn fit_location(&self, g: usize, bandwidth: f64, shape: KernelShape) -> Result<(LocalFit, f64, f64)> {
        let m = self.points.len();
        let mut rows = Vec::new();
        let mut w = Vec::new();
        for (i, &o) in self.row_point.iter().enumerate() {
            let k = kernel_weight(self.dist[g * m + o], shape, bandwidth);
            if k > 0.0 {
                rows.push(i);
                w.push(k);
            }
        }
        let here = &self.points[g].id;
        let with_location = |e: Error| match e {
            Error::RankDeficient { columns, .. } => Error::RankDeficient {
                columns,
                location: Some(here.clone()),
            },
            Error::InvalidInput(msg) => Error::RankDeficient {
                columns: vec![msg],
                location: Some(here.clone()),
            },
            other => other,
        };
        let x = self.design.select_rows(&rows);
        let y: Vec<f64> = rows.iter().map(|&i| self.y[i]).collect();
        let mut glm_cfg = self.cfg.glm.clone();
        if self.cfg.shared_alpha {
            glm_cfg.fixed_alpha = Some(self.global.alpha);
        }
        let start = WarmStart {
            beta: self.global.beta.clone(),
            alpha: self.global.alpha,
        };
        let fit = fit_nbglm_from(&x, &y, &w, &glm_cfg, Some(&start)).map_err(with_location)?;

        let p = self.design.n_cols();
        let (mut trace, mut ll) = (0.0, 0.0);
        for &i in &self.rows_at[g] {
            let xi = self.design.row(i);
            let eta: f64 = xi.iter().zip(&fit.beta).map(|(a, b)| a * b).sum();
            let mu = eta.clamp(-700.0, 700.0).exp();
            let omega = (mu / (1.0 + fit.alpha * mu)).max(1e-10);
            let mut q = 0.0;
            for a in 0..p {
                let row = &fit.covariance[a * p..(a + 1) * p];
                let s: f64 = row.iter().zip(xi).map(|(c, x)| c * x).sum();
                q += xi[a] * s;
            }
            // Own-anchor kernel weight is 1 (zero distance).
            trace += omega * q;
            ll += nb_logpmf(self.y[i], mu, fit.alpha);
        }
        Ok((
            LocalFit {
                zone_id: here.clone(),
                location: self.points[g].location,
                bandwidth_m: bandwidth,
                beta: fit.beta,
                se: fit.se,
                t_values: fit.t_values,
                alpha: fit.alpha,
                n_rows: rows.len(),
            },
            trace,
            ll,
        ))
    }

    /// Golden-section search for the AICc-minimizing bandwidth on `[lo, hi]`.
    pub fn select_bandwidth(
        &self,
        shape: KernelShape,
        mode: BandwidthMode,
        lo: f64,
        hi: f64,
    ) -> Result<BandwidthSearch> {
        if !(lo < hi) || !(lo > 0.0) || !hi.is_finite() {
            return Err(Error::invalid(
                "bandwidth_range",
                format!("need 0 < lo < hi, got [{lo}, {hi}]"),
            ));
        }
        let (lo, hi, tol) = match mode {
            BandwidthMode::FixedDistance => (lo, hi, 10.0),
            BandwidthMode::AdaptiveKnn => {
                let (l, h) = (lo.ceil(), hi.floor());
                if l > h {
                    return Err(Error::invalid("bandwidth_range", "no whole neighbor count in range"));
                }
                (l, h, 1.0)
            }
        };
        let mut trace: Vec<BandwidthEval> = Vec::new();
        let mut best: Option<GwrFit> = None;
        let mut first_err: Option<Error> = None;
        let mut eval = |b: f64| -> f64 {
            let b = match mode {
                BandwidthMode::FixedDistance => b,
                BandwidthMode::AdaptiveKnn => b.round(),
            };
            if let Some(e) = trace.iter().find(|e| e.bandwidth == b) {
                return e.aicc.unwrap_or(f64::INFINITY);
            }
            let spec = KernelSpec {
                shape,
                mode,
                bandwidth: b,
            };
            match self.fit(&spec) {
                Ok(fit) => {
                    let a = fit.aicc;
                    trace.push(BandwidthEval {
                        bandwidth: b,
                        aicc: Some(a),
                    });
                    if best.as_ref().is_none_or(|f| a < f.aicc) {
                        best = Some(fit);
                    }
                    a
                }
                Err(e) => {
                    trace.push(BandwidthEval {
                        bandwidth: b,
                        aicc: None,
                    });
                    first_err.get_or_insert(e);
                    f64::INFINITY
                }
            }
        };
        let g = golden_section_min(&mut eval, lo, hi, tol);
        if mode == BandwidthMode::AdaptiveKnn {
            let c = g.x.round();
            for b in [c - 1.0, c + 1.0] {
                if (lo..=hi).contains(&b) {
                    eval(b);
                }
            }
        }
        match best {
            Some(fit) => Ok(BandwidthSearch {
                bandwidth: fit.kernel.bandwidth,
                trace,
                fit,
            }),
            None => Err(first_err.unwrap_or_else(|| Error::Numerical("no bandwidth could be evaluated".into()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthEval {
    pub bandwidth: f64,
    /// `None` when the fit failed at this bandwidth.
    pub aicc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSearch {
    pub bandwidth: f64,
    pub trace: Vec<BandwidthEval>,
    pub fit: GwrFit,
}

pub fn fit_gwr(fm: &FeatureMatrix, points: Vec<RegressionPoint>, spec: &KernelSpec, cfg: GwrConfig) -> Result<GwrFit> {
    GwrProblem::new(fm, points, cfg)?.fit(spec)
}

pub fn select_bandwidth(
    fm: &FeatureMatrix,
    points: Vec<RegressionPoint>,
    shape: KernelShape,
    mode: BandwidthMode,
    range: (f64, f64),
    cfg: GwrConfig,
) -> Result<BandwidthSearch> {
    GwrProblem::new(fm, points, cfg)?.select_bandwidth(shape, mode, range.0, range.1)
}
