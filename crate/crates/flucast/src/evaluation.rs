//! MAPE/RMSE metrics and the with-vs-without-spatial comparison protocol
//! over countries x models x horizons, reported in the Table-1 layout.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epiweek::EpiWeek;
use crate::error::{FlucastError, Result};
use crate::features::{build_features, FeatureSpec};
use crate::msop::{predict_msop, train_msop};
use crate::panel::CountryPanel;
use crate::regressors::{ModelConfigs, ModelKind};

/// Which actual value divides the absolute error at time t. The printed
/// formula divides by the previous week's actual; `Current` (the standard
/// definition) is the default, `Previous` is kept for fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Denominator {
    Current,
    Previous,
}

/// What to do when a denominator is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroPolicy {
    Skip,
    Epsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub denominator: Denominator,
    pub zero_policy: ZeroPolicy,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { denominator: Denominator::Current, zero_policy: ZeroPolicy::Skip }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if let ZeroPolicy::Epsilon(e) = self.zero_policy {
            if !(e.is_finite() && e > 0.0) {
                return Err(FlucastError::InvalidConfig(
                    "zero-policy epsilon must be finite and positive".to_string(),
                ));
            }
        }
        Ok(())
    }
}

/// Mean absolute percentage error. Returns (value, points evaluated,
/// points skipped).
pub fn mape(forecast: &[f64], actual: &[f64], cfg: &MetricConfig) -> Result<(f64, usize, usize)> {
    cfg.validate()?;
    if forecast.len() != actual.len() || forecast.is_empty() {
        return Err(FlucastError::ShapeMismatch(
            "forecast and actual must be equal-length and non-empty".to_string(),
        ));
    }
    let mut sum = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for t in 0..forecast.len() {
        let denom = match cfg.denominator {
            Denominator::Current => actual[t],
            Denominator::Previous => {
                if t == 0 {
                    skipped += 1;
                    continue;
                }
                actual[t - 1]
            }
        };
        let denom = if denom.abs() == 0.0 {
            match cfg.zero_policy {
                ZeroPolicy::Skip => {
                    skipped += 1;
                    continue;
                }
                ZeroPolicy::Epsilon(e) => e,
            }
        } else {
            denom
        };
        sum += ((forecast[t] - actual[t]) / denom).abs();
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(FlucastError::AllPointsSkipped);
    }
    Ok((sum / evaluated as f64, evaluated, skipped))
}

pub fn rmse(forecast: &[f64], actual: &[f64]) -> f64 {
    let n = forecast.len() as f64;
    (forecast.iter().zip(actual).map(|(f, a)| (f - a) * (f - a)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hemisphere {
    Northern,
    Southern,
}

impl Hemisphere {
    pub fn as_str(&self) -> &'static str {
        match self {
            Hemisphere::Northern => "northern",
            Hemisphere::Southern => "southern",
        }
    }
}

impl std::str::FromStr for Hemisphere {
    type Err = FlucastError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "northern" | "north" | "n" => Ok(Hemisphere::Northern),
            "southern" | "south" | "s" => Ok(Hemisphere::Southern),
            other => Err(FlucastError::InvalidConfig(format!("unknown hemisphere {other:?}"))),
        }
    }
}

/// Country -> hemisphere tags; ships with defaults for the six report
/// countries.
#[derive(Debug, Clone, PartialEq)]
pub struct HemisphereMap(pub HashMap<String, Hemisphere>);

impl Default for HemisphereMap {
    fn default() -> Self {
        let mut m = HashMap::new();
        for c in ["Australia", "Brazil"] {
            m.insert(c.to_string(), Hemisphere::Southern);
        }
        for c in [
            "China",
            "Japan",
            "United Kingdom of Great Britain and Northern Ireland",
            "UK",
            "United States of America",
            "USA",
        ] {
            m.insert(c.to_string(), Hemisphere::Northern);
        }
        HemisphereMap(m)
    }
}

impl HemisphereMap {
    /// Parse a `country = "northern"` TOML table, merged over the defaults.
    pub fn from_toml(text: &str) -> Result<HemisphereMap> {
        let table: HashMap<String, String> =
            toml::from_str(text).map_err(|e| FlucastError::InvalidConfig(e.to_string()))?;
        let mut map = HemisphereMap::default();
        for (country, h) in table {
            map.0.insert(country, h.parse()?);
        }
        Ok(map)
    }

    pub fn get(&self, country: &str) -> Result<Hemisphere> {
        self.0.get(country).copied().ok_or_else(|| {
            FlucastError::InvalidConfig(format!("no hemisphere tag for country {country:?}"))
        })
    }
}

/// One report cell: a (country, model, horizon, spatial-mode) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub country: String,
    pub hemisphere: Hemisphere,
    pub model: ModelKind,
    pub horizon: u32,
    pub spatial: bool,
    pub mape: f64,
    pub rmse: f64,
    pub n_evaluated: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ForecastReport {
    pub rows: Vec<ReportRow>,
}

/// Per-week forecast-vs-actual observation for external plotting. Forecasts
/// are per-seed medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub country: String,
    pub model: ModelKind,
    pub horizon: u32,
    pub spatial: bool,
    pub week: EpiWeek,
    pub actual: f64,
    pub forecast: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonSetup {
    pub targets: Vec<String>,
    pub model_kinds: Vec<ModelKind>,
    pub spec: FeatureSpec,
    pub test_from: EpiWeek,
    pub metric: MetricConfig,
    pub seeds: Vec<u64>,
    pub configs: ModelConfigs,
    pub hemispheres: HemisphereMap,
}

/// For every (target, model, spatial mode): build features, split at
/// `test_from`, train one MSOP bundle per seed, forecast the test rows, and
/// aggregate per-horizon MAPE/RMSE across seeds by median. Cells are
/// independent work items; output order is fixed regardless of scheduling.
pub fn run_comparison(
    panel: &CountryPanel,
    setup: &ComparisonSetup,
) -> Result<(ForecastReport, Vec<PlotRow>)> {
    setup.metric.validate()?;
    if setup.seeds.is_empty() {
        return Err(FlucastError::InvalidConfig("at least one seed required".to_string()));
    }
    for t in &setup.targets {
        setup.hemispheres.get(t)?;
        if panel.country_index(t).is_none() {
            return Err(FlucastError::UnknownCountry(t.clone()));
        }
    }

    struct Cell<'a> {
        target: &'a str,
        kind: ModelKind,
        spatial: bool,
    }
    let mut cells = Vec::new();
    for target in &setup.targets {
        for &kind in &setup.model_kinds {
            for spatial in [true, false] {
                cells.push(Cell { target, kind, spatial });
            }
        }
    }

    let results: Result<Vec<(Vec<ReportRow>, Vec<PlotRow>)>> = cells
        .par_iter()
        .map(|cell| {
            let spec = FeatureSpec { spatial: cell.spatial, ..setup.spec.clone() };
            let fm = build_features(panel, cell.target, &spec)?;
            let (train, test) = fm.split_walk_forward(&setup.test_from)?;
            // forecasts[seed] = rows x horizons
            let mut forecasts = Vec::with_capacity(setup.seeds.len());
            for &seed in &setup.seeds {
                let bundle = train_msop(&train, &spec, cell.kind, &setup.configs, seed)?;
                forecasts.push(predict_msop(&bundle, &test)?);
            }
            let hemisphere = setup.hemispheres.get(cell.target)?;
            let mut rows = Vec::new();
            let mut plots = Vec::new();
            for (h_idx, &horizon) in spec.horizons.iter().enumerate() {
                let actual: Vec<f64> = test.y.iter().map(|r| r[h_idx]).collect();
                let mut mapes = Vec::with_capacity(setup.seeds.len());
                let mut rmses = Vec::with_capacity(setup.seeds.len());
                let mut n_eval = 0;
                let mut n_skip = 0;
                for f in &forecasts {
                    let fc: Vec<f64> = f.iter().map(|r| r[h_idx]).collect();
                    let (m, n, s) = mape(&fc, &actual, &setup.metric)?;
                    mapes.push(m);
                    rmses.push(rmse(&fc, &actual));
                    n_eval = n;
                    n_skip = s;
                }
                rows.push(ReportRow {
                    country: cell.target.to_string(),
                    hemisphere,
                    model: cell.kind,
                    horizon,
                    spatial: cell.spatial,
                    mape: median(&mut mapes),
                    rmse: median(&mut rmses),
                    n_evaluated: n_eval,
                    skipped: n_skip,
                });
                for (r, origin) in test.origins.iter().enumerate() {
                    let mut per_seed: Vec<f64> =
                        forecasts.iter().map(|f| f[r][h_idx]).collect();
                    plots.push(PlotRow {
                        country: cell.target.to_string(),
                        model: cell.kind,
                        horizon,
                        spatial: cell.spatial,
                        week: origin.add_weeks(horizon as i64),
                        actual: actual[r],
                        forecast: median(&mut per_seed),
                    });
                }
            }
            Ok((rows, plots))
        })
        .collect();

    let mut report = ForecastReport::default();
    let mut plot_rows = Vec::new();
    for (rows, plots) in results? {
        report.rows.extend(rows);
        plot_rows.extend(plots);
    }
    Ok((report, plot_rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TableText,
    Delimited,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = FlucastError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" | "table-text" | "text" => Ok(ReportFormat::TableText),
            "csv" | "delimited" => Ok(ReportFormat::Delimited),
            "json" => Ok(ReportFormat::Json),
            other => Err(FlucastError::InvalidConfig(format!("unknown format {other:?}"))),
        }
    }
}

pub const REPORT_COLUMNS: &str = "country,hemisphere,model,horizon,spatial,mape,rmse,n,skipped";

pub fn emit_report(report: &ForecastReport, format: ReportFormat) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match format {
        ReportFormat::Delimited => {
            writeln!(out, "{REPORT_COLUMNS}")?;
            for r in &report.rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{:.16e},{:.16e},{},{}",
                    r.country,
                    r.hemisphere.as_str(),
                    r.model.as_str(),
                    r.horizon,
                    r.spatial,
                    r.mape,
                    r.rmse,
                    r.n_evaluated,
                    r.skipped
                )?;
            }
        }
        ReportFormat::Json => {
            let json = serde_json::to_string_pretty(report)
                .map_err(|e| FlucastError::CorruptPayload(e.to_string()))?;
            writeln!(out, "{json}")?;
        }
        ReportFormat::TableText => {
            writeln!(
                out,
                "{:<30} {:<10} {:<14} {:>7} {:>8} {:>10} {:>12} {:>6} {:>7}",
                "country", "hemisphere", "model", "horizon", "spatial", "mape", "rmse", "n",
                "skipped"
            )?;
            for r in &report.rows {
                writeln!(
                    out,
                    "{:<30} {:<10} {:<14} {:>7} {:>8} {:>10.4} {:>12.4} {:>6} {:>7}",
                    r.country,
                    r.hemisphere.as_str(),
                    r.model.as_str(),
                    r.horizon,
                    r.spatial,
                    r.mape,
                    r.rmse,
                    r.n_evaluated,
                    r.skipped
                )?;
            }
        }
    }
    Ok(out)
}

/// Inverse of the delimited form of `emit_report`.
pub fn parse_report_delimited(text: &str) -> Result<ForecastReport> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| FlucastError::CorruptPayload("empty report".to_string()))?;
    if header != REPORT_COLUMNS {
        return Err(FlucastError::CorruptPayload("unexpected report header".to_string()));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(FlucastError::CorruptPayload(format!("bad report row {line:?}")));
        }
        let bad = |what: &str| FlucastError::CorruptPayload(format!("bad {what} in {line:?}"));
        rows.push(ReportRow {
            country: f[0].to_string(),
            hemisphere: f[1].parse()?,
            model: f[2].parse()?,
            horizon: f[3].parse().map_err(|_| bad("horizon"))?,
            spatial: f[4].parse().map_err(|_| bad("spatial"))?,
            mape: f[5].parse().map_err(|_| bad("mape"))?,
            rmse: f[6].parse().map_err(|_| bad("rmse"))?,
            n_evaluated: f[7].parse().map_err(|_| bad("n"))?,
            skipped: f[8].parse().map_err(|_| bad("skipped"))?,
        });
    }
    Ok(ForecastReport { rows })
}

/// Tidy delimited plot data: one row per country/model/horizon/week.
pub fn emit_plot_data(rows: &[PlotRow]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "country,model,horizon,spatial,week,actual,forecast")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.16e},{:.16e}",
            r.country,
            r.model.as_str(),
            r.horizon,
            r.spatial,
            r.week,
            r.actual,
            r.forecast
        )?;
    }
    Ok(out)
}
