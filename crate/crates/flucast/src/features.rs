//! Supervised design-matrix construction per target country: temporal lags,
//! first differences, rolling-window statistics, cross-country spatial lag
//! blocks, and per-horizon targets.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::epiweek::EpiWeek;
use crate::error::{FlucastError, Result};
use crate::panel::CountryPanel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stat {
    Mean,
    Median,
    Std,
    Max,
    Min,
}

impl Stat {
    pub const ALL: [Stat; 5] = [Stat::Mean, Stat::Median, Stat::Std, Stat::Max, Stat::Min];

    pub fn name(&self) -> &'static str {
        match self {
            Stat::Mean => "mean",
            Stat::Median => "median",
            Stat::Std => "std",
            Stat::Max => "max",
            Stat::Min => "min",
        }
    }

    /// Apply to a window of values. Std uses the population divisor so a
    /// window of 1 is well-defined (zero). Median of an even window is the
    /// mean of the two middle order statistics.
    pub fn apply(&self, window: &[f64]) -> f64 {
        let n = window.len() as f64;
        match self {
            Stat::Mean => window.iter().sum::<f64>() / n,
            Stat::Median => {
                let mut sorted = window.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let m = sorted.len() / 2;
                if sorted.len() % 2 == 1 {
                    sorted[m]
                } else {
                    (sorted[m - 1] + sorted[m]) / 2.0
                }
            }
            Stat::Std => {
                let mean = window.iter().sum::<f64>() / n;
                (window.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
            }
            Stat::Max => window.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Stat::Min => window.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }
}

/// What goes into the design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub lag_depth: usize,
    pub windows: Vec<usize>,
    pub stats: Vec<Stat>,
    pub include_first_diff: bool,
    pub spatial: bool,
    pub horizons: Vec<u32>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            lag_depth: 52,
            windows: vec![1, 2, 3, 4, 9, 13, 26, 52],
            stats: Stat::ALL.to_vec(),
            include_first_diff: true,
            spatial: true,
            horizons: vec![1, 2, 3, 4],
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FlucastError::InvalidConfig(m.to_string()));
        if self.lag_depth == 0 {
            return bad("lag_depth must be >= 1");
        }
        if self.windows.iter().any(|&w| w == 0) {
            return bad("windows must be >= 1");
        }
        if self.windows.iter().any(|&w| w > self.lag_depth) {
            return bad("lag_depth must cover the largest window");
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("horizons must be positive");
        }
        let mut seen = std::collections::HashSet::new();
        if !self.horizons.iter().all(|h| seen.insert(*h)) {
            return bad("horizons must be distinct");
        }
        Ok(())
    }

    pub fn max_horizon(&self) -> u32 {
        self.horizons.iter().copied().max().unwrap_or(0)
    }

    /// Reconstruct the spec that produced a feature schema. Used when a
    /// feature matrix arrives from a file without its originating spec.
    pub fn infer(feature_names: &[String], horizons: &[u32]) -> Result<FeatureSpec> {
        let lag_depth = feature_names
            .iter()
            .filter(|n| n.starts_with("t.lag."))
            .count();
        if lag_depth == 0 {
            return Err(FlucastError::SchemaMismatch("no t.lag.* columns".to_string()));
        }
        let include_first_diff = feature_names.iter().any(|n| n.starts_with("t.diff."));
        let spatial = feature_names.iter().any(|n| n.starts_with("s."));
        let mut windows = Vec::new();
        let mut stats = Vec::new();
        for n in feature_names {
            if let Some(rest) = n.strip_prefix("t.w") {
                if let Some((w, s)) = rest.split_once('.') {
                    let w: usize = w.parse().map_err(|_| {
                        FlucastError::SchemaMismatch(format!("bad window column {n:?}"))
                    })?;
                    if !windows.contains(&w) {
                        windows.push(w);
                    }
                    let stat = Stat::ALL
                        .iter()
                        .find(|st| st.name() == s)
                        .copied()
                        .ok_or_else(|| {
                            FlucastError::SchemaMismatch(format!("unknown stat in {n:?}"))
                        })?;
                    if !stats.contains(&stat) {
                        stats.push(stat);
                    }
                }
            }
        }
        let spec = FeatureSpec {
            lag_depth,
            windows,
            stats,
            include_first_diff,
            spatial,
            horizons: horizons.to_vec(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Deterministic column schema for a given panel and target.
    pub fn feature_names(&self, panel_countries: &[String], target: &str) -> Vec<String> {
        let l = self.lag_depth;
        let mut names = Vec::new();
        for k in 0..l {
            names.push(format!("t.lag.{k}"));
        }
        if self.include_first_diff {
            for k in 0..l.saturating_sub(1) {
                names.push(format!("t.diff.{k}"));
            }
        }
        for &w in &self.windows {
            for s in &self.stats {
                names.push(format!("t.w{w}.{}", s.name()));
            }
        }
        if self.spatial {
            for c in panel_countries.iter().filter(|c| c.as_str() != target) {
                for k in 0..l {
                    names.push(format!("s.{c}.lag.{k}"));
                }
            }
        }
        names
    }
}

/// Per-target-country supervised design matrix: rows are forecast origins,
/// columns are named features, plus per-horizon target columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub target_country: String,
    pub origins: Vec<EpiWeek>,
    pub feature_names: Vec<String>,
    pub horizons: Vec<u32>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn target_column(&self, horizon: u32) -> Result<Vec<f64>> {
        let j = self
            .horizons
            .iter()
            .position(|&h| h == horizon)
            .ok_or_else(|| FlucastError::SchemaMismatch(format!("no horizon {horizon}")))?;
        Ok(self.y.iter().map(|row| row[j]).collect())
    }

    /// Chronological split: train rows strictly before `test_from`, test rows
    /// at or after.
    pub fn split_walk_forward(&self, test_from: &EpiWeek) -> Result<(FeatureMatrix, FeatureMatrix)> {
        let cut = self.origins.partition_point(|o| o < test_from);
        if cut == 0 {
            return Err(FlucastError::EmptySplit("no training rows".to_string()));
        }
        if cut == self.n_rows() {
            return Err(FlucastError::EmptySplit("no test rows".to_string()));
        }
        let sub = |range: std::ops::Range<usize>| FeatureMatrix {
            target_country: self.target_country.clone(),
            origins: self.origins[range.clone()].to_vec(),
            feature_names: self.feature_names.clone(),
            horizons: self.horizons.clone(),
            x: self.x[range.clone()].to_vec(),
            y: self.y[range].to_vec(),
        };
        Ok((sub(0..cut), sub(cut..self.n_rows())))
    }

    /// Delimited export: origin week first, then features, then `y.h{H}`
    /// target columns. Values printed with 17 significant digits so reload
    /// is bit-exact.
    pub fn export<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["origin".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.extend(self.horizons.iter().map(|h| format!("y.h{h}")));
        writeln!(w, "# FLUFEATURES v1 target={}", self.target_country)?;
        writeln!(w, "{}", header.join(","))?;
        for (i, origin) in self.origins.iter().enumerate() {
            let mut row = vec![origin.to_string()];
            row.extend(self.x[i].iter().map(|v| format!("{v:.16e}")));
            row.extend(self.y[i].iter().map(|v| format!("{v:.16e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn import<R: Read>(r: R) -> Result<FeatureMatrix> {
        let mut lines = BufReader::new(r).lines();
        let meta = lines
            .next()
            .transpose()?
            .ok_or_else(|| FlucastError::CorruptPayload("empty feature file".to_string()))?;
        let target = meta
            .strip_prefix("# FLUFEATURES v1 target=")
            .ok_or_else(|| FlucastError::FormatVersionMismatch {
                expected: "FLUFEATURES v1".to_string(),
                found: meta.chars().take(40).collect(),
            })?
            .to_string();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| FlucastError::CorruptPayload("missing header".to_string()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"origin") {
            return Err(FlucastError::CorruptPayload("first column must be origin".to_string()));
        }
        let mut feature_names = Vec::new();
        let mut horizons = Vec::new();
        for c in &cols[1..] {
            if let Some(h) = c.strip_prefix("y.h") {
                horizons.push(h.parse::<u32>().map_err(|_| {
                    FlucastError::CorruptPayload(format!("bad target column {c:?}"))
                })?);
            } else {
                feature_names.push(c.to_string());
            }
        }
        let mut origins = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split(',').collect();
            if toks.len() != 1 + feature_names.len() + horizons.len() {
                return Err(FlucastError::CorruptPayload(format!(
                    "row has {} fields, expected {}",
                    toks.len(),
                    1 + feature_names.len() + horizons.len()
                )));
            }
            origins.push(toks[0].parse::<EpiWeek>().map_err(|e| {
                FlucastError::CorruptPayload(e.to_string())
            })?);
            let parse = |t: &str| -> Result<f64> {
                t.parse::<f64>()
                    .map_err(|_| FlucastError::CorruptPayload(format!("bad value {t:?}")))
            };
            let xs: Result<Vec<f64>> =
                toks[1..=feature_names.len()].iter().map(|t| parse(t)).collect();
            let ys: Result<Vec<f64>> =
                toks[1 + feature_names.len()..].iter().map(|t| parse(t)).collect();
            x.push(xs?);
            y.push(ys?);
        }
        Ok(FeatureMatrix { target_country: target, origins, feature_names, horizons, x, y })
    }
}

/// Build the design matrix for `target` from a complete panel.
pub fn build_features(
    panel: &CountryPanel,
    target: &str,
    spec: &FeatureSpec,
) -> Result<FeatureMatrix> {
    spec.validate()?;
    let target_idx = panel
        .country_index(target)
        .ok_or_else(|| FlucastError::UnknownCountry(target.to_string()))?;

    let used: Vec<usize> = if spec.spatial {
        (0..panel.countries().len()).collect()
    } else {
        vec![target_idx]
    };
    for &i in &used {
        if (0..panel.n_weeks()).any(|j| panel.is_missing(i, j)) {
            return Err(FlucastError::MissingDataInScope(panel.countries()[i].clone()));
        }
    }

    let l = spec.lag_depth;
    let max_h = spec.max_horizon() as usize;
    let needed = l + max_h;
    if panel.n_weeks() < needed {
        return Err(FlucastError::InsufficientHistory {
            needed,
            available: panel.n_weeks(),
        });
    }

    let feature_names = spec.feature_names(panel.countries(), target);
    let series = panel.series(target_idx);
    let mut origins = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();

    // valid origins: t - (l-1) >= start and t + max_h <= end
    for t in (l - 1)..(panel.n_weeks() - max_h) {
        origins.push(panel.week_at(t));
        let mut row = Vec::with_capacity(feature_names.len());
        // temporal lag block: X_t, X_{t-1}, ..., X_{t-L+1}
        for k in 0..l {
            row.push(series[t - k]);
        }
        // first differences: diff_k = X_{t-k} - X_{t-k-1}
        if spec.include_first_diff {
            for k in 0..l - 1 {
                row.push(series[t - k] - series[t - k - 1]);
            }
        }
        // rolling stats over {X_t, ..., X_{t-w+1}}
        for &w in &spec.windows {
            let window: Vec<f64> = (0..w).map(|k| series[t - k]).collect();
            for s in &spec.stats {
                row.push(s.apply(&window));
            }
        }
        // spatial lags of every other country, panel order
        if spec.spatial {
            for (c_idx, _) in panel
                .countries()
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != target_idx)
            {
                let other = panel.series(c_idx);
                for k in 0..l {
                    row.push(other[t - k]);
                }
            }
        }
        debug_assert_eq!(row.len(), feature_names.len());
        x.push(row);
        y.push(spec.horizons.iter().map(|&h| series[t + h as usize]).collect());
    }

    Ok(FeatureMatrix {
        target_country: target.to_string(),
        origins,
        feature_names,
        horizons: spec.horizons.clone(),
        x,
        y,
    })
}

/// Column means and population standard deviations used by `standardize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStats {
    pub feat_mean: Vec<f64>,
    pub feat_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

fn column_stats(rows: &[Vec<f64>], n_cols: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; n_cols];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; n_cols];
    for row in rows {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| (s / n).sqrt()).collect();
    (mean, std)
}

fn scale(v: f64, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        (v - mean) / std
    }
}

fn unscale(z: f64, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        mean
    } else {
        z * std + mean
    }
}

impl ScalingStats {
    pub fn fit(fm: &FeatureMatrix) -> ScalingStats {
        let (feat_mean, feat_std) = column_stats(&fm.x, fm.n_features());
        let (target_mean, target_std) = column_stats(&fm.y, fm.horizons.len());
        ScalingStats { feat_mean, feat_std, target_mean, target_std }
    }

    pub fn unscale_target(&self, horizon_idx: usize, z: f64) -> f64 {
        unscale(z, self.target_mean[horizon_idx], self.target_std[horizon_idx])
    }

    pub fn scale_features(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.feat_mean.len() {
            return Err(FlucastError::DimensionMismatch {
                expected: self.feat_mean.len(),
                found: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.feat_mean.iter().zip(&self.feat_std))
            .map(|(v, (m, s))| scale(*v, *m, *s))
            .collect())
    }
}

/// Z-score every feature and target column. With `stats` supplied (fit on
/// training rows), applies those; otherwise fits on `fm` itself. Zero-spread
/// columns map to 0.
pub fn standardize(
    fm: &FeatureMatrix,
    stats: Option<&ScalingStats>,
) -> Result<(FeatureMatrix, ScalingStats)> {
    let stats = match stats {
        Some(s) => {
            if s.feat_mean.len() != fm.n_features() || s.target_mean.len() != fm.horizons.len() {
                return Err(FlucastError::DimensionMismatch {
                    expected: fm.n_features(),
                    found: s.feat_mean.len(),
                });
            }
            s.clone()
        }
        None => ScalingStats::fit(fm),
    };
    let x = fm
        .x
        .iter()
        .map(|row| {
            row.iter()
                .zip(stats.feat_mean.iter().zip(&stats.feat_std))
                .map(|(v, (m, s))| scale(*v, *m, *s))
                .collect()
        })
        .collect();
    let y = fm
        .y
        .iter()
        .map(|row| {
            row.iter()
                .zip(stats.target_mean.iter().zip(&stats.target_std))
                .map(|(v, (m, s))| scale(*v, *m, *s))
                .collect()
        })
        .collect();
    Ok((
        FeatureMatrix {
            target_country: fm.target_country.clone(),
            origins: fm.origins.clone(),
            feature_names: fm.feature_names.clone(),
            horizons: fm.horizons.clone(),
            x,
            y,
        },
        stats,
    ))
}

/// Inverse of `standardize` under the same stats.
pub fn unstandardize(fm: &FeatureMatrix, stats: &ScalingStats) -> Result<FeatureMatrix> {
    if stats.feat_mean.len() != fm.n_features() {
        return Err(FlucastError::DimensionMismatch {
            expected: fm.n_features(),
            found: stats.feat_mean.len(),
        });
    }
    let x = fm
        .x
        .iter()
        .map(|row| {
            row.iter()
                .zip(stats.feat_mean.iter().zip(&stats.feat_std))
                .map(|(v, (m, s))| unscale(*v, *m, *s))
                .collect()
        })
        .collect();
    let y = fm
        .y
        .iter()
        .map(|row| {
            row.iter()
                .zip(stats.target_mean.iter().zip(&stats.target_std))
                .map(|(v, (m, s))| unscale(*v, *m, *s))
                .collect()
        })
        .collect();
    Ok(FeatureMatrix { x, y, ..fm.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epiweek::EpiWeek;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn panel_from_series(series: Vec<Vec<f64>>) -> CountryPanel {
        let names: Vec<String> = (0..series.len()).map(|i| format!("C{i}")).collect();
        let n = series[0].len();
        let missing = vec![vec![false; n]; series.len()];
        CountryPanel::new(names, EpiWeek::new(2010, 1).unwrap(), series, missing).unwrap()
    }

    fn small_spec() -> FeatureSpec {
        FeatureSpec {
            lag_depth: 4,
            windows: vec![1, 2, 4],
            stats: Stat::ALL.to_vec(),
            include_first_diff: true,
            spatial: false,
            horizons: vec![1, 2],
        }
    }

    #[test]
    fn column_count_formula() {
        let series: Vec<Vec<f64>> = (0..5).map(|i| (0..120).map(|j| (i * j) as f64).collect()).collect();
        let panel = panel_from_series(series);
        let mut spec = FeatureSpec::default();
        spec.spatial = true;
        let fm = build_features(&panel, "C0", &spec).unwrap();
        let l = spec.lag_depth;
        let expected = l + (l - 1) + spec.windows.len() * spec.stats.len() + 4 * l;
        assert_eq!(fm.n_features(), expected);
    }

    #[test]
    fn constant_series_features() {
        let panel = panel_from_series(vec![vec![7.0; 30]]);
        let fm = build_features(&panel, "C0", &small_spec()).unwrap();
        for (j, name) in fm.feature_names.iter().enumerate() {
            for row in &fm.x {
                let v = row[j];
                if name.contains("diff") || name.contains("std") {
                    assert_eq!(v, 0.0, "{name}");
                } else {
                    assert_eq!(v, 7.0, "{name}");
                }
            }
        }
        for row in &fm.y {
            assert!(row.iter().all(|&v| v == 7.0));
        }
    }

    #[test]
    fn lag_and_diff_and_targets_align() {
        let series: Vec<f64> = (0..30).map(|j| j as f64 * j as f64).collect();
        let panel = panel_from_series(vec![series.clone()]);
        let fm = build_features(&panel, "C0", &small_spec()).unwrap();
        // first origin is index 3 (lag_depth 4)
        assert_eq!(fm.origins[0], EpiWeek::new(2010, 4).unwrap());
        let r = 2usize; // origin index 5
        let t = 5usize;
        for k in 0..4 {
            assert_eq!(fm.x[r][fm.column_index(&format!("t.lag.{k}")).unwrap()], series[t - k]);
        }
        for k in 0..3 {
            assert_eq!(
                fm.x[r][fm.column_index(&format!("t.diff.{k}")).unwrap()],
                series[t - k] - series[t - k - 1]
            );
        }
        assert_eq!(fm.y[r], vec![series[t + 1], series[t + 2]]);
    }

    #[test]
    fn rolling_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let series: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..100.0)).collect();
        let panel = panel_from_series(vec![series.clone()]);
        let spec = FeatureSpec { spatial: false, ..FeatureSpec::default() };
        let fm = build_features(&panel, "C0", &spec).unwrap();
        for (r, origin) in fm.origins.iter().enumerate() {
            let t = panel.week_index(origin).unwrap();
            for &w in &spec.windows {
                let mut window: Vec<f64> = series[t + 1 - w..=t].to_vec();
                // brute force: direct sort for median, two-pass mean/std
                let mean = window.iter().sum::<f64>() / w as f64;
                let var = window.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w as f64;
                window.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let median = if w % 2 == 1 {
                    window[w / 2]
                } else {
                    (window[w / 2 - 1] + window[w / 2]) / 2.0
                };
                let get = |s: &str| fm.x[r][fm.column_index(&format!("t.w{w}.{s}")).unwrap()];
                assert!((get("mean") - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
                assert!((get("std") - var.sqrt()).abs() <= 1e-12 * (1.0 + var.sqrt()));
                assert_eq!(get("median"), median);
                assert_eq!(get("max"), *window.last().unwrap());
                assert_eq!(get("min"), window[0]);
            }
        }
    }

    #[test]
    fn window_one_degeneracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let series: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..10.0)).collect();
        let panel = panel_from_series(vec![series]);
        let fm = build_features(&panel, "C0", &small_spec()).unwrap();
        let lag0 = fm.column_index("t.lag.0").unwrap();
        for row in &fm.x {
            for s in ["mean", "median", "max", "min"] {
                assert_eq!(row[fm.column_index(&format!("t.w1.{s}")).unwrap()], row[lag0]);
            }
            assert_eq!(row[fm.column_index("t.w1.std").unwrap()], 0.0);
        }
    }

    #[test]
    fn shift_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let series: Vec<f64> = (0..60).map(|_| rng.gen_range(0.0..10.0)).collect();
        let panel = panel_from_series(vec![series]);
        let fm = build_features(&panel, "C0", &small_spec()).unwrap();
        for r in 0..fm.n_rows() - 1 {
            for k in 1..4 {
                let jk = fm.column_index(&format!("t.lag.{k}")).unwrap();
                let jk1 = fm.column_index(&format!("t.lag.{}", k - 1)).unwrap();
                assert_eq!(fm.x[r + 1][jk], fm.x[r][jk1]);
            }
        }
    }

    #[test]
    fn spatial_off_drops_exactly_spatial_columns() {
        let series: Vec<Vec<f64>> =
            (0..3).map(|i| (0..40).map(|j| (i + j * 2) as f64).collect()).collect();
        let panel = panel_from_series(series);
        let mut spec = small_spec();
        spec.spatial = true;
        let on = build_features(&panel, "C1", &spec).unwrap();
        spec.spatial = false;
        let off = build_features(&panel, "C1", &spec).unwrap();
        assert_eq!(on.origins, off.origins);
        assert_eq!(on.y, off.y);
        for (j, name) in off.feature_names.iter().enumerate() {
            let j_on = on.column_index(name).unwrap();
            for r in 0..off.n_rows() {
                assert_eq!(off.x[r][j], on.x[r][j_on]);
            }
        }
        let n_spatial = on
            .feature_names
            .iter()
            .filter(|n| n.starts_with("s."))
            .count();
        assert_eq!(on.n_features(), off.n_features() + n_spatial);
        assert_eq!(n_spatial, 2 * spec.lag_depth);
    }

    #[test]
    fn determinism() {
        let series: Vec<Vec<f64>> =
            (0..2).map(|i| (0..40).map(|j| ((i + 1) * j) as f64).collect()).collect();
        let panel = panel_from_series(series);
        let spec = small_spec();
        let a = build_features(&panel, "C0", &spec).unwrap();
        let b = build_features(&panel, "C0", &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn error_paths() {
        let panel = panel_from_series(vec![vec![1.0; 30]]);
        assert!(matches!(
            build_features(&panel, "Nope", &small_spec()),
            Err(FlucastError::UnknownCountry(_))
        ));
        let short = panel_from_series(vec![vec![1.0; 5]]);
        assert!(matches!(
            build_features(&short, "C0", &small_spec()),
            Err(FlucastError::InsufficientHistory { .. })
        ));
        let mut missing = vec![vec![false; 30]];
        missing[0][10] = true;
        let p = CountryPanel::new(
            vec!["C0".into()],
            EpiWeek::new(2010, 1).unwrap(),
            vec![vec![1.0; 30]],
            missing,
        )
        .unwrap();
        assert!(matches!(
            build_features(&p, "C0", &small_spec()),
            Err(FlucastError::MissingDataInScope(_))
        ));
    }

    #[test]
    fn standardize_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let series: Vec<f64> = (0..60).map(|_| rng.gen_range(0.0..50.0)).collect();
        let panel = panel_from_series(vec![series]);
        let fm = build_features(&panel, "C0", &small_spec()).unwrap();
        let (z, stats) = standardize(&fm, None).unwrap();
        let back = unstandardize(&z, &stats).unwrap();
        for (a, b) in fm.x.iter().flatten().zip(back.x.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        for (a, b) in fm.y.iter().flatten().zip(back.y.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn standardize_constant_column_and_restandardized() {
        let panel = panel_from_series(vec![vec![4.0; 30]]);
        let fm = build_features(&panel, "C0", &small_spec()).unwrap();
        let (z, stats) = standardize(&fm, None).unwrap();
        assert!(z.x.iter().flatten().all(|&v| v == 0.0));
        assert!(stats.feat_std.iter().all(|&s| s == 0.0));
        // standardizing an already standardized matrix leaves it ~unchanged
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let series: Vec<f64> = (0..80).map(|_| rng.gen_range(0.0..50.0)).collect();
        let fm2 = build_features(&panel_from_series(vec![series]), "C0", &small_spec()).unwrap();
        let (z2, _) = standardize(&fm2, None).unwrap();
        let (z3, s3) = standardize(&z2, None).unwrap();
        assert!(s3.feat_mean.iter().all(|m| m.abs() < 1e-10));
        for (a, b) in z2.x.iter().flatten().zip(z3.x.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn standardize_dimension_mismatch() {
        let panel = panel_from_series(vec![vec![4.0; 30]]);
        let fm = build_features(&panel, "C0", &small_spec()).unwrap();
        let bad = ScalingStats {
            feat_mean: vec![0.0; 2],
            feat_std: vec![1.0; 2],
            target_mean: vec![0.0; 2],
            target_std: vec![1.0; 2],
        };
        assert!(matches!(
            standardize(&fm, Some(&bad)),
            Err(FlucastError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn walk_forward_split() {
        let series: Vec<f64> = (0..40).map(|j| j as f64).collect();
        let panel = panel_from_series(vec![series]);
        let fm = build_features(&panel, "C0", &small_spec()).unwrap();
        let mid = fm.origins[fm.n_rows() / 2];
        let (train, test) = fm.split_walk_forward(&mid).unwrap();
        assert_eq!(train.n_rows() + test.n_rows(), fm.n_rows());
        assert!(train.origins.iter().all(|o| o < &mid));
        assert!(test.origins.iter().all(|o| o >= &mid));
        assert!(matches!(
            fm.split_walk_forward(&fm.origins[0]),
            Err(FlucastError::EmptySplit(_))
        ));
        let past = fm.origins.last().unwrap().succ();
        assert!(matches!(fm.split_walk_forward(&past), Err(FlucastError::EmptySplit(_))));
    }

    #[test]
    fn export_import_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let series: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..100.0)).collect();
        let panel = panel_from_series(vec![series]);
        let fm = build_features(&panel, "C0", &small_spec()).unwrap();
        let mut buf = Vec::new();
        fm.export(&mut buf).unwrap();
        let back = FeatureMatrix::import(&buf[..]).unwrap();
        assert_eq!(fm, back);
    }
}
