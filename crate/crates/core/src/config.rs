//! Run configuration: a TOML file plus `dotted.key=value` overrides.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::access::{DiversityMode, DEFAULT_BUDGET_S, DEFAULT_SNAP_M, DEFAULT_WALKING_SPEED};
use crate::error::{Error, Result};
use crate::flows::YearMonth;
use crate::geo::ProjectionSpec;
use crate::glm::GlmConfig;
use crate::gwr::{BandwidthMode, KernelShape};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub zones: PathBuf,
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub amenities: PathBuf,
    pub residents: PathBuf,
    pub grid_cells: PathBuf,
    pub grid_counts: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            zones: "zones.geojson".into(),
            nodes: "nodes.csv".into(),
            edges: "edges.csv".into(),
            amenities: "amenities.geojson".into(),
            residents: "residents.geojson".into(),
            grid_cells: "grid_cells.csv".into(),
            grid_counts: "grid_counts.csv".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccessSettings {
    /// Meters per second.
    pub walking_speed: f64,
    pub budget_s: f64,
    pub snap_m: f64,
    pub diversity: DiversityMode,
}

impl Default for AccessSettings {
    fn default() -> Self {
        AccessSettings {
            walking_speed: DEFAULT_WALKING_SPEED,
            budget_s: DEFAULT_BUDGET_S,
            snap_m: DEFAULT_SNAP_M,
            diversity: DiversityMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSettings {
    /// Months processed by `flows` and `fit-global`.
    pub months: Vec<YearMonth>,
    pub visitor_class: String,
    /// Dates treated as weekend days.
    pub holidays: BTreeSet<NaiveDate>,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings {
            months: vec![YearMonth { year: 2019, month: 6 }],
            visitor_class: "resident".into(),
            holidays: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GwrSettings {
    /// Month fitted by `fit-gwr`; defaults to the first of `flows.months`.
    pub month: Option<YearMonth>,
    pub shape: KernelShape,
    pub mode: BandwidthMode,
    /// Skips the search when set.
    pub bandwidth: Option<f64>,
    pub bandwidth_range: [f64; 2],
    pub shared_alpha: bool,
}

impl Default for GwrSettings {
    fn default() -> Self {
        GwrSettings {
            month: None,
            shape: KernelShape::Bisquare,
            mode: BandwidthMode::FixedDistance,
            bandwidth: None,
            bandwidth_range: [750.0, 2000.0],
            shared_alpha: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub significance_level: f64,
    pub target: String,
    /// Months left out of the selection, with the reason.
    pub excluded_months: BTreeMap<YearMonth, String>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            significance_level: 0.05,
            target: "rent_per_m2".into(),
            excluded_months: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub projection: ProjectionSpec,
    pub access: AccessSettings,
    pub flows: FlowSettings,
    pub glm: GlmConfig,
    pub gwr: GwrSettings,
    pub analysis: AnalysisSettings,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("config", e))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::parse("config", e))
    }

    /// Reads `path`, applies `key=value` overrides and resolves relative
    /// paths against the config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_with_overrides(&text, overrides)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        cfg.paths.resolve_against(base);
        Ok(cfg)
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::parse("config", e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        table.try_into().map_err(|e| Error::parse("config", e))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive, got {v}")))
            }
        };
        positive("access.walking_speed", self.access.walking_speed)?;
        positive("access.budget_s", self.access.budget_s)?;
        positive("access.snap_m", self.access.snap_m)?;
        positive("glm.tolerance", self.glm.tolerance)?;
        positive("gwr.bandwidth_range", self.gwr.bandwidth_range[0])?;
        if self.gwr.bandwidth_range[0] >= self.gwr.bandwidth_range[1] {
            return Err(Error::invalid(
                "gwr.bandwidth_range",
                "lower bound must be below the upper bound",
            ));
        }
        if let Some(b) = self.gwr.bandwidth {
            positive("gwr.bandwidth", b)?;
        }
        let level = self.analysis.significance_level;
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::invalid("analysis.significance_level", "must lie in (0, 1)"));
        }
        if self.flows.months.is_empty() {
            return Err(Error::invalid("flows.months", "at least one month is required"));
        }
        Ok(())
    }

    pub fn gwr_month(&self) -> YearMonth {
        self.gwr.month.unwrap_or(self.flows.months[0])
    }
}

impl Paths {
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.zones,
            &mut self.nodes,
            &mut self.edges,
            &mut self.amenities,
            &mut self.residents,
            &mut self.grid_cells,
            &mut self.grid_counts,
            &mut self.output_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Sets `a.b.c = value`; `value` is parsed as a TOML value when possible and
/// kept as a string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid("--set", format!("`{assignment}` is not key=value")))?;
    let keys: Vec<&str> = key.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::invalid("--set", format!("bad key `{key}`")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::invalid("--set", format!("`{k}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides() {
        let cfg = RunConfig::from_toml_with_overrides(
            "[gwr]\nshape = \"exponential\"\n",
            &[
                "gwr.bandwidth=769".into(),
                "access.budget_s = 600.0".into(),
                "flows.months=[\"2019-07\", \"2019-08\"]".into(),
                "analysis.target=rent_mean".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.gwr.shape, KernelShape::Exponential);
        assert_eq!(cfg.gwr.bandwidth, Some(769.0));
        assert_eq!(cfg.access.budget_s, 600.0);
        assert_eq!(cfg.flows.months.len(), 2);
        assert_eq!(cfg.analysis.target, "rent_mean");
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::from_toml("[access]\nbudget = 3\n").is_err());
        assert!(RunConfig::from_toml_with_overrides("", &["noequals".into()]).is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.access.walking_speed = 0.0;
        assert!(cfg.validate().is_err());
    }
}
