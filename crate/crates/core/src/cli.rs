//! Pipeline commands. Each reads the run configuration and writes plain
//! CSV / JSON / GeoJSON files into the output directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::access::{zone_accessibility, AccessibilityTable};
use crate::analysis::{correlate_with_target, rank_month_aiccs, write_correlations, ZoneTable};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flows::{
    build_features, build_od_table, filter_zero_pairs, importance_scores, read_od_csv, write_od_csv, Calendar,
    FeatureMatrix, Role, YearMonth,
};
use crate::geo::io::{load_amenities, load_graph, load_grid, load_residents, load_zones, write_zones};
use crate::geo::{allocate_cell_counts, AmenityCategory, Projection, ProjectionSpec, Zone};
use crate::glm::{fit_nbglm, Design};
use crate::gwr::{regression_points, BandwidthEval, GwrConfig, GwrProblem, KernelSpec};
use crate::synth::{files, generate_city, write_city};

#[derive(Debug, Parser)]
#[command(
    name = "walkflow",
    version,
    about = "Walking accessibility and NB gravity / GWR flow models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set gwr.bandwidth=769`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-zone amenity accessibility and diversity.
    Accessibility(Common),
    /// Monthly OD tables from gridded counts.
    Flows(Common),
    /// Global NB gravity model for every configured month.
    FitGlobal(Common),
    /// Geographically weighted NB model for one month.
    FitGwr(Common),
    /// Rank correlations of zone attributes and local coefficients with a target.
    Correlate {
        #[command(flatten)]
        common: Common,
        /// Target variable; overrides `analysis.target`.
        #[arg(long)]
        target: Option<String>,
    },
    /// Orders months by global-model AICc and selects one.
    RankMonths(Common),
    /// Writes a synthetic city (inputs, truth and a config) to the output directory.
    Synth(Common),
}

pub fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path, &common.overrides)?,
        None => RunConfig::from_toml_with_overrides("", &common.overrides)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Accessibility(c) => cmd_accessibility(&load_config(&c)?),
        Command::Flows(c) => cmd_flows(&load_config(&c)?),
        Command::FitGlobal(c) => cmd_fit_global(&load_config(&c)?),
        Command::FitGwr(c) => cmd_fit_gwr(&load_config(&c)?),
        Command::Correlate { common, target } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = target {
                cfg.analysis.target = t;
            }
            cmd_correlate(&cfg)
        }
        Command::RankMonths(c) => cmd_rank_months(&load_config(&c)?),
        Command::Synth(c) => cmd_synth(&load_config(&c)?),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.paths.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path.display().to_string(), e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ))
    }
}

fn zones(cfg: &RunConfig) -> Result<(Vec<Zone>, Projection)> {
    require(&cfg.paths.zones)?;
    load_zones(&cfg.paths.zones, &cfg.projection)
}

pub const ACCESSIBILITY_CSV: &str = "accessibility.csv";
pub const ZONES_ENRICHED: &str = "zones_enriched.geojson";
pub const GWR_SUMMARY: &str = "gwr_summary.csv";
pub const GWR_COEFFICIENTS: &str = "gwr_coefficients.csv";
pub const GWR_BANDWIDTH: &str = "gwr_bandwidth.json";
pub const CORRELATIONS: &str = "correlations.csv";
pub const MONTH_RANKING: &str = "month_ranking.csv";

pub fn od_file(month: YearMonth) -> String {
    format!("od_{month}.csv")
}

pub fn global_fit_file(month: YearMonth) -> String {
    format!("global_fit_{month}.csv")
}

pub fn global_summary_file(month: YearMonth) -> String {
    format!("global_summary_{month}.json")
}

pub fn cmd_accessibility(cfg: &RunConfig) -> Result<()> {
    for p in [
        &cfg.paths.nodes,
        &cfg.paths.edges,
        &cfg.paths.amenities,
        &cfg.paths.residents,
    ] {
        require(p)?;
    }
    let (zones, proj) = zones(cfg)?;
    let graph = load_graph(&cfg.paths.nodes, &cfg.paths.edges, &proj, cfg.access.walking_speed)?;
    let amenities = load_amenities(&cfg.paths.amenities, &proj)?;
    let residents = load_residents(&cfg.paths.residents, &proj)?;
    let table = zone_accessibility(
        &graph,
        &amenities,
        &residents,
        &zones,
        cfg.access.budget_s,
        cfg.access.snap_m,
        cfg.access.diversity,
    )?;
    let dir = out_dir(cfg)?;
    let mut w = create(&dir.join(ACCESSIBILITY_CSV))?;
    table.write_csv(&mut w)?;
    w.flush().map_err(|e| Error::io(dir.join(ACCESSIBILITY_CSV), e))?;

    let extra: BTreeMap<String, Vec<(String, Option<f64>)>> = zones
        .iter()
        .map(|z| {
            let mut props: Vec<(String, Option<f64>)> = AmenityCategory::ALL
                .iter()
                .map(|c| (format!("access_{}", c.as_str()), table.get(&z.id).map(|a| a.get(*c))))
                .collect();
            props.push(("amenity_diversity".into(), table.get(&z.id).and_then(|a| a.diversity)));
            (z.id.clone(), props)
        })
        .collect();
    write_zones(&dir.join(ZONES_ENRICHED), &zones, &proj, &extra)
}

pub fn cmd_flows(cfg: &RunConfig) -> Result<()> {
    require(&cfg.paths.grid_cells)?;
    require(&cfg.paths.grid_counts)?;
    let (zones, _) = zones(cfg)?;
    let cells = load_grid(&cfg.paths.grid_cells, &cfg.paths.grid_counts)?;
    let allocated = allocate_cell_counts(&cells, &zones)?;
    let ids: Vec<String> = zones.iter().map(|z| z.id.clone()).collect();
    let calendar = Calendar {
        holidays: cfg.flows.holidays.clone(),
    };
    let dir = out_dir(cfg)?;
    for &month in &cfg.flows.months {
        let obs = build_od_table(&allocated, &ids, month, &calendar, &cfg.flows.visitor_class)?;
        let kept = filter_zero_pairs(&obs);
        let path = dir.join(od_file(month));
        let mut w = create(&path)?;
        write_od_csv(&mut w, &kept)?;
        w.flush().map_err(|e| Error::io(&path, e))?;

        let origin = importance_scores(&kept, Role::Origin);
        let dest = importance_scores(&kept, Role::Destination);
        let path = dir.join(format!("importance_{month}.csv"));
        let mut wr = csv::Writer::from_writer(create(&path)?);
        let err = |e: csv::Error| Error::parse("importance csv", e);
        wr.write_record(["zone_id", "origin_importance", "destination_importance"])
            .map_err(err)?;
        for id in &ids {
            let f = |m: &BTreeMap<String, f64>| m.get(id).map(|v| format!("{v:.6}")).unwrap_or_default();
            wr.write_record([id.clone(), f(&origin), f(&dest)]).map_err(err)?;
        }
        wr.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn month_features(cfg: &RunConfig, zones: &[Zone], month: YearMonth) -> Result<FeatureMatrix> {
    let dir = &cfg.paths.output_dir;
    let access_path = dir.join(ACCESSIBILITY_CSV);
    let od_path = dir.join(od_file(month));
    require(&access_path)?;
    require(&od_path)?;
    let access = AccessibilityTable::read_csv_path(&access_path)?;
    let obs = read_od_csv(&od_path)?;
    if obs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "flow table {} is empty",
            od_path.display()
        )));
    }
    build_features(&obs, zones, &access, &crate::flows::zone_distances(zones))
}

#[derive(Debug, Serialize)]
struct GlobalSummary {
    month: YearMonth,
    n_obs: usize,
    k_params: usize,
    loglik: f64,
    aicc: Option<f64>,
    alpha: f64,
    gravity_constant: Option<f64>,
    outer_iterations: usize,
}

pub fn cmd_fit_global(cfg: &RunConfig) -> Result<()> {
    let (zones, _) = zones(cfg)?;
    let dir = out_dir(cfg)?;
    for &month in &cfg.flows.months {
        let fm = month_features(cfg, &zones, month)?;
        let x = Design::from_features(&fm)?;
        let fit = fit_nbglm(&x, &fm.response, &vec![1.0; fm.n_rows()], &cfg.glm)?;

        let path = dir.join(global_fit_file(month));
        let mut w = create(&path)?;
        fit.write_report(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(format!("features_{month}.csv"));
        let mut w = create(&path)?;
        fm.write_csv(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;

        write_json(
            &dir.join(global_summary_file(month)),
            &GlobalSummary {
                month,
                n_obs: fit.n_obs,
                k_params: fit.k_params,
                loglik: fit.loglik,
                aicc: fit.aicc,
                alpha: fit.alpha,
                gravity_constant: fit.gravity_constant(),
                outer_iterations: fit.outer_iterations,
            },
        )?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BandwidthRecord<'a> {
    month: YearMonth,
    kernel: KernelSpec,
    searched: bool,
    range: [f64; 2],
    bandwidth: f64,
    aicc: f64,
    global_aicc: Option<f64>,
    enp: f64,
    adj_critical_t: f64,
    trace: &'a [BandwidthEval],
}

pub fn cmd_fit_gwr(cfg: &RunConfig) -> Result<()> {
    let (zones, _) = zones(cfg)?;
    let month = cfg.gwr_month();
    let fm = month_features(cfg, &zones, month)?;
    let gcfg = GwrConfig {
        glm: cfg.glm.clone(),
        shared_alpha: cfg.gwr.shared_alpha,
        significance_level: cfg.analysis.significance_level,
    };
    let advise = |e: Error| match e {
        Error::RankDeficient { .. } => Error::Numerical(format!(
            "{e}; the kernel covers too few origins, increase gwr.bandwidth_range or gwr.bandwidth"
        )),
        other => other,
    };
    let problem = GwrProblem::new(&fm, regression_points(&fm), gcfg)?;
    let (fit, trace, searched) = match cfg.gwr.bandwidth {
        Some(b) => {
            let spec = KernelSpec {
                shape: cfg.gwr.shape,
                mode: cfg.gwr.mode,
                bandwidth: b,
            };
            let fit = problem.fit(&spec).map_err(advise)?;
            let trace = vec![BandwidthEval {
                bandwidth: b,
                aicc: Some(fit.aicc),
            }];
            (fit, trace, false)
        }
        None => {
            let [lo, hi] = cfg.gwr.bandwidth_range;
            let s = problem
                .select_bandwidth(cfg.gwr.shape, cfg.gwr.mode, lo, hi)
                .map_err(advise)?;
            (s.fit, s.trace, true)
        }
    };
    let dir = out_dir(cfg)?;
    let path = dir.join(GWR_SUMMARY);
    let mut w = create(&path)?;
    fit.write_summary(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join(GWR_COEFFICIENTS);
    let mut w = create(&path)?;
    fit.write_coefficients(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(
        &dir.join(GWR_BANDWIDTH),
        &BandwidthRecord {
            month,
            kernel: fit.kernel,
            searched,
            range: cfg.gwr.bandwidth_range,
            bandwidth: fit.kernel.bandwidth,
            aicc: fit.aicc,
            global_aicc: problem.global().aicc,
            enp: fit.enp,
            adj_critical_t: fit.adj_critical_t,
            trace: &trace,
        },
    )
}

/// Zone attributes used as predictors; rent columns are outcomes.
fn attribute_table(zones: &[Zone], access: &AccessibilityTable) -> ZoneTable {
    let ids: Vec<String> = zones.iter().map(|z| z.id.clone()).collect();
    let mut t = ZoneTable::new(ids);
    let col = |f: &dyn Fn(&Zone) -> f64| zones.iter().map(f).collect::<Vec<f64>>();
    let cols: [(&str, Vec<f64>); 8] = [
        ("population", col(&|z| z.population)),
        ("hdi", col(&|z| z.hdi)),
        ("mean_age", col(&|z| z.mean_age)),
        ("pct_women", col(&|z| z.pct_women)),
        ("immigrant_ratio", col(&|z| z.immigrant_ratio)),
        ("touristic_attractiveness", col(&|z| z.touristic_attractiveness)),
        ("rent_mean", col(&|z| z.rent_mean)),
        ("rent_per_m2", col(&|z| z.rent_per_m2)),
    ];
    for (name, v) in cols {
        t.columns.insert(name.to_string(), v);
    }
    for c in AmenityCategory::ALL {
        let v = zones
            .iter()
            .map(|z| access.get(&z.id).map_or(f64::NAN, |a| a.get(c)))
            .collect();
        t.columns.insert(format!("access_{}", c.as_str()), v);
    }
    let v = zones
        .iter()
        .map(|z| access.get(&z.id).and_then(|a| a.diversity).unwrap_or(f64::NAN))
        .collect();
    t.columns.insert("amenity_diversity".into(), v);
    t
}

fn read_local_coefficients(path: &Path, zones: &[Zone]) -> Result<BTreeMap<String, Vec<f64>>> {
    let index: BTreeMap<&str, usize> = zones.iter().enumerate().map(|(i, z)| (z.id.as_str(), i)).collect();
    let ctx = path.display().to_string();
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::parse(&ctx, e))?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::parse(&ctx, e))?;
        if rec.len() < 3 {
            return Err(Error::parse(&ctx, "expected zone_id,variable,beta,..."));
        }
        let &i = index
            .get(&rec[0])
            .ok_or_else(|| Error::InvalidInput(format!("{ctx}: unknown zone `{}`", &rec[0])))?;
        let beta: f64 = rec[2].parse().map_err(|e| Error::parse(&ctx, format!("beta: {e}")))?;
        out.entry(format!("local_{}", &rec[1]))
            .or_insert_with(|| vec![f64::NAN; zones.len()])[i] = beta;
    }
    Ok(out)
}

pub fn cmd_correlate(cfg: &RunConfig) -> Result<()> {
    let (zones, _) = zones(cfg)?;
    let dir = &cfg.paths.output_dir;
    let access_path = dir.join(ACCESSIBILITY_CSV);
    let coef_path = dir.join(GWR_COEFFICIENTS);
    require(&access_path)?;
    require(&coef_path)?;
    let access = AccessibilityTable::read_csv_path(&access_path)?;
    let attrs = attribute_table(&zones, &access);
    let target = cfg.analysis.target.as_str();
    let target_values = attrs
        .columns
        .get(target)
        .cloned()
        .ok_or_else(|| Error::invalid("analysis.target", format!("unknown variable `{target}`")))?;
    let level = cfg.analysis.significance_level;

    let mut predictors = attrs.clone();
    predictors.columns.retain(|name, _| !name.starts_with("rent_"));
    predictors.columns.insert(target.to_string(), target_values.clone());
    let mut rows = correlate_with_target(&predictors, target, level)?;

    let mut local = ZoneTable::new(attrs.zone_ids.clone());
    local.columns = read_local_coefficients(&coef_path, &zones)?;
    local.columns.insert(target.to_string(), target_values);
    rows.extend(correlate_with_target(&local, target, level)?);

    let path = out_dir(cfg)?.join(CORRELATIONS);
    let mut w = create(&path)?;
    write_correlations(&mut w, &rows)?;
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn cmd_rank_months(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let mut aiccs = BTreeMap::new();
    for &month in &cfg.flows.months {
        let path = dir.join(global_summary_file(month));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        let aicc = v["aicc"]
            .as_f64()
            .ok_or_else(|| Error::InvalidInput(format!("{}: AICc is undefined", path.display())))?;
        aiccs.insert(month, aicc);
    }
    let ranking = rank_month_aiccs(&aiccs, &cfg.analysis.excluded_months)?;
    let path = dir.join(MONTH_RANKING);
    let mut w = create(&path)?;
    ranking.write_csv(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Writes a synthetic city and a config that runs the pipeline on it.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let city = generate_city(&cfg.synth)?;
    let dir = out_dir(cfg)?;
    write_city(&city, dir)?;
    let mut months: Vec<YearMonth> = city
        .cells
        .iter()
        .flat_map(|c| c.counts.keys().map(|k| YearMonth::of(&k.date)))
        .collect();
    months.sort();
    months.dedup();
    if months.is_empty() {
        months.push(YearMonth::of(&cfg.synth.start_date));
    }
    let mut run = cfg.clone();
    run.paths = crate::config::Paths {
        zones: files::ZONES.into(),
        nodes: files::NODES.into(),
        edges: files::EDGES.into(),
        amenities: files::AMENITIES.into(),
        residents: files::RESIDENTS.into(),
        grid_cells: files::GRID_CELLS.into(),
        grid_counts: files::GRID_COUNTS.into(),
        output_dir: "out".into(),
    };
    run.projection = ProjectionSpec::Planar;
    run.flows.months = months;
    run.flows.holidays.clear();
    run.flows.visitor_class = crate::synth::VISITOR_CLASS.into();
    let path = dir.join("config.toml");
    std::fs::write(&path, run.to_toml()?).map_err(|e| Error::io(path, e))
}
