//! Rank correlations with Bonferroni correction, and AICc month ranking.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::flows::YearMonth;
use crate::glm::GlmFit;

/// Average ranks (1-based); ties share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho and its two-sided p-value (t approximation, n-2 df).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in correlation input".into()));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::InvalidInput("constant vector has no rank correlation".into()))?;
    let df = (x.len() - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok((rho, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub variable: String,
    pub rho: f64,
    pub p_value: f64,
    pub p_bonferroni: f64,
    pub significant: bool,
}

pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).clamp(0.0, 1.0)
}

/// Zone-by-variable table; `NaN` marks a missing value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ZoneTable {
    pub zone_ids: Vec<String>,
    pub columns: BTreeMap<String, Vec<f64>>,
}

impl ZoneTable {
    pub fn new(zone_ids: Vec<String>) -> Self {
        ZoneTable {
            zone_ids,
            columns: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.zone_ids.len() {
            return Err(Error::InvalidInput(format!(
                "column {name} has {} values for {} zones",
                values.len(),
                self.zone_ids.len()
            )));
        }
        self.columns.insert(name, values);
        Ok(())
    }
}

/// Correlates every non-target column with `target`; one Bonferroni batch.
pub fn correlate_with_target(table: &ZoneTable, target: &str, level: f64) -> Result<Vec<CorrelationResult>> {
    let t = table
        .columns
        .get(target)
        .ok_or_else(|| Error::invalid("target", format!("unknown variable {target}")))?;
    let m = table.columns.len() - 1;
    let mut out = Vec::with_capacity(m);
    for (name, v) in table.columns.iter().filter(|(n, _)| n.as_str() != target) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = v
            .iter()
            .zip(t)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| (*a, *b))
            .unzip();
        if xs.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "{name}: only {} complete zone rows, need at least 3",
                xs.len()
            )));
        }
        let (rho, p) = spearman(&xs, &ys).map_err(|e| Error::InvalidInput(format!("{name}: {e}")))?;
        let pb = bonferroni(p, m);
        out.push(CorrelationResult {
            variable: name.clone(),
            rho,
            p_value: p,
            p_bonferroni: pb,
            significant: pb < level,
        });
    }
    Ok(out)
}

/// `variable,rho,p,p_bonferroni,significant`.
pub fn write_correlations(w: impl Write, rows: &[CorrelationResult]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::parse("correlations", e);
    wr.write_record(["variable", "rho", "p", "p_bonferroni", "significant"])
        .map_err(err)?;
    for r in rows {
        wr.write_record([
            r.variable.clone(),
            format!("{:.6}", r.rho),
            format!("{:.6e}", r.p_value),
            format!("{:.6e}", r.p_bonferroni),
            r.significant.to_string(),
        ])
        .map_err(err)?;
    }
    wr.flush().map_err(|e| Error::parse("correlations", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedMonth {
    pub month: YearMonth,
    pub aicc: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthRanking {
    /// Non-excluded months, ascending AICc (ties: earlier month first).
    pub ranked: Vec<(YearMonth, f64)>,
    pub excluded: Vec<ExcludedMonth>,
    pub selected: YearMonth,
}

impl MonthRanking {
    /// `month,aicc,rank,excluded,reason,selected`, all months by AICc.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut all: Vec<(YearMonth, f64, Option<&str>)> = self.ranked.iter().map(|(m, a)| (*m, *a, None)).collect();
        all.extend(self.excluded.iter().map(|e| (e.month, e.aicc, Some(e.reason.as_str()))));
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::parse("month ranking", e);
        wr.write_record(["month", "aicc", "rank", "excluded", "reason", "selected"])
            .map_err(err)?;
        for (i, (m, a, reason)) in all.iter().enumerate() {
            wr.write_record([
                m.to_string(),
                format!("{a:.6}"),
                (i + 1).to_string(),
                reason.is_some().to_string(),
                reason.unwrap_or("").to_string(),
                (*m == self.selected).to_string(),
            ])
            .map_err(err)?;
        }
        wr.flush().map_err(|e| Error::parse("month ranking", e))?;
        Ok(())
    }
}

/// Ranks months by AICc and selects the lowest one not excluded.
pub fn rank_month_aiccs(
    aiccs: &BTreeMap<YearMonth, f64>,
    excluded: &BTreeMap<YearMonth, String>,
) -> Result<MonthRanking> {
    if let Some((m, _)) = aiccs.iter().find(|(_, a)| a.is_nan()) {
        return Err(Error::invalid("aicc", format!("AICc for {m} is NaN")));
    }
    let mut ranked: Vec<(YearMonth, f64)> = aiccs
        .iter()
        .filter(|(m, _)| !excluded.contains_key(m))
        .map(|(m, a)| (*m, *a))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let selected = ranked
        .first()
        .map(|(m, _)| *m)
        .ok_or_else(|| Error::InvalidInput("every month is excluded".into()))?;
    let excluded = aiccs
        .iter()
        .filter_map(|(m, a)| {
            excluded.get(m).map(|r| ExcludedMonth {
                month: *m,
                aicc: *a,
                reason: r.clone(),
            })
        })
        .collect();
    Ok(MonthRanking {
        ranked,
        excluded,
        selected,
    })
}

pub fn rank_months(fits: &BTreeMap<YearMonth, GlmFit>, excluded: &BTreeMap<YearMonth, String>) -> Result<MonthRanking> {
    let aiccs = fits
        .iter()
        .map(|(m, f)| {
            f.aicc
                .map(|a| (*m, a))
                .ok_or_else(|| Error::InvalidInput(format!("AICc undefined for {m}")))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    rank_month_aiccs(&aiccs, excluded)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_is_exact() {
        let x = [1.0, 2.0, 5.0, 9.0, 10.0];
        let up = [0.1, 0.3, 0.31, 4.0, 100.0];
        let down = [9.0, 8.0, 1.0, -3.0, -30.0];
        assert_eq!(spearman(&x, &up).unwrap(), (1.0, 0.0));
        assert_eq!(spearman(&x, &down).unwrap().0, -1.0);
    }

    #[test]
    fn hand_example() {
        let (rho, _) = spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((rho - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn constant_or_short_inputs_fail() {
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bonferroni_rule() {
        assert_eq!(bonferroni(0.2, 1), 0.2);
        assert!((bonferroni(0.01, 10) - 0.1).abs() < 1e-15);
        assert!((bonferroni(0.004, 10) - 0.04).abs() < 1e-15);
        assert_eq!(bonferroni(0.3, 10), 1.0);
    }

    #[test]
    fn correlate_batch() {
        let mut t = ZoneTable::new((0..6).map(|i| format!("z{i}")).collect());
        t.insert("rent", vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        t.insert("food", vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        t.insert("noise", vec![3.0, 1.0, f64::NAN, 2.0, 6.0, 4.0]).unwrap();
        let r = correlate_with_target(&t, "rent", 0.05).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].variable, "food");
        assert_eq!(r[0].rho, 1.0);
        assert!(r[0].significant);
        assert!(r[1].p_bonferroni >= r[1].p_value);
        assert!(correlate_with_target(&t, "price", 0.05).is_err());
    }

    fn ym(m: u32) -> YearMonth {
        YearMonth::new(2019, m).unwrap()
    }

    #[test]
    fn third_lowest_when_two_excluded() {
        let aiccs = BTreeMap::from([(ym(8), 100.0), (ym(12), 110.0), (ym(6), 120.0), (ym(3), 130.0)]);
        let excl = BTreeMap::from([(ym(8), "holidays".to_string()), (ym(12), "holidays".to_string())]);
        let r = rank_month_aiccs(&aiccs, &excl).unwrap();
        assert_eq!(r.selected, ym(6));
        assert_eq!(r.ranked, vec![(ym(6), 120.0), (ym(3), 130.0)]);
        assert_eq!(r.excluded.len(), 2);
    }

    #[test]
    fn ties_prefer_earlier_month() {
        let aiccs = BTreeMap::from([(ym(9), 5.0), (ym(2), 5.0), (ym(4), 7.0)]);
        let r = rank_month_aiccs(&aiccs, &BTreeMap::new()).unwrap();
        assert_eq!(r.selected, ym(2));
    }

    #[test]
    fn all_excluded_fails() {
        let aiccs = BTreeMap::from([(ym(1), 5.0)]);
        let excl = BTreeMap::from([(ym(1), "x".to_string())]);
        assert!(rank_month_aiccs(&aiccs, &excl).is_err());
    }
}
