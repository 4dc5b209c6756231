//! Multiple single-output prediction: one independently trained model per
//! forecast horizon, all consuming the same observed-feature rows. No
//! predicted value is ever fed back as an input.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::epiweek::EpiWeek;
use crate::error::{FlucastError, Result};
use crate::features::{standardize, FeatureMatrix, FeatureSpec, ScalingStats};
use crate::regressors::{fit_model, Model, ModelConfigs, ModelKind};

/// One horizon's trained model plus the scaling it was trained under
/// (`None` for models that read raw values).
#[derive(Debug, Clone)]
pub struct HorizonEntry {
    pub horizon: u32,
    pub model: Model,
    pub scaling: Option<ScalingStats>,
}

/// A per-horizon model family for one target country.
#[derive(Debug, Clone)]
pub struct MsopBundle {
    pub target_country: String,
    pub spec: FeatureSpec,
    pub model_kind: ModelKind,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub train_window: (EpiWeek, EpiWeek),
    pub entries: Vec<HorizonEntry>,
}

/// Derived deterministically so horizon models differ only through their
/// targets and this seed.
pub fn horizon_seed(base: u64, horizon: u32) -> u64 {
    base ^ horizon as u64
}

/// Train one fresh model per horizon on the shared training rows.
/// Gradient-based models see standardized features and targets (stats fit
/// on these rows); trees and baselines see raw values. Any horizon's fit
/// error aborts the whole bundle.
pub fn train_msop(
    fm_train: &FeatureMatrix,
    spec: &FeatureSpec,
    model_kind: ModelKind,
    configs: &ModelConfigs,
    seed: u64,
) -> Result<MsopBundle> {
    if spec.horizons != fm_train.horizons {
        return Err(FlucastError::SchemaMismatch(
            "spec horizons differ from the feature matrix targets".to_string(),
        ));
    }
    if fm_train.n_rows() == 0 {
        return Err(FlucastError::InsufficientData("empty training matrix".to_string()));
    }
    let scaling = if model_kind.wants_scaling() {
        Some(ScalingStats::fit(fm_train))
    } else {
        None
    };
    let scaled;
    let train_view: &FeatureMatrix = match &scaling {
        Some(stats) => {
            scaled = standardize(fm_train, Some(stats))?.0;
            &scaled
        }
        None => fm_train,
    };

    let mut entries = Vec::with_capacity(fm_train.horizons.len());
    for (h_idx, &horizon) in fm_train.horizons.iter().enumerate() {
        let y: Vec<f64> = train_view.y.iter().map(|row| row[h_idx]).collect();
        let cfg = configs.with_seed(horizon_seed(seed, horizon));
        let model = fit_model(model_kind, &cfg, &train_view.x, &y, &train_view.feature_names)
            .map_err(|e| FlucastError::HorizonFit { horizon, source: Box::new(e) })?;
        entries.push(HorizonEntry { horizon, model, scaling: scaling.clone() });
    }

    Ok(MsopBundle {
        target_country: fm_train.target_country.clone(),
        spec: spec.clone(),
        model_kind,
        seed,
        feature_names: fm_train.feature_names.clone(),
        train_window: (
            *fm_train.origins.first().unwrap(),
            *fm_train.origins.last().unwrap(),
        ),
        entries,
    })
}

/// Forecast matrix, rows x horizons, in original units. Pure function of
/// the observed feature rows; target columns of `fm_rows` are never read.
pub fn predict_msop(bundle: &MsopBundle, fm_rows: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
    if fm_rows.feature_names != bundle.feature_names {
        return Err(FlucastError::SchemaMismatch(
            "feature columns differ from the bundle's training schema".to_string(),
        ));
    }
    let mut columns = Vec::with_capacity(bundle.entries.len());
    for (h_idx, entry) in bundle.entries.iter().enumerate() {
        let preds = match &entry.scaling {
            Some(stats) => {
                let x: Result<Vec<Vec<f64>>> =
                    fm_rows.x.iter().map(|row| stats.scale_features(row)).collect();
                let z = entry.model.predict(&x?, &fm_rows.feature_names)?;
                z.into_iter().map(|v| stats.unscale_target(h_idx, v)).collect()
            }
            None => entry.model.predict(&fm_rows.x, &fm_rows.feature_names)?,
        };
        columns.push(preds);
    }
    Ok((0..fm_rows.n_rows())
        .map(|r| columns.iter().map(|c| c[r]).collect())
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleManifest {
    target_country: String,
    spec: FeatureSpec,
    model_kind: ModelKind,
    seed: u64,
    feature_names: Vec<String>,
    train_window: (EpiWeek, EpiWeek),
    horizons: Vec<u32>,
    horizon_seeds: Vec<u64>,
    scalings: Vec<Option<ScalingStats>>,
}

impl MsopBundle {
    /// Directory layout: `manifest.json` plus one `h{H}.model` per horizon.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = BundleManifest {
            target_country: self.target_country.clone(),
            spec: self.spec.clone(),
            model_kind: self.model_kind,
            seed: self.seed,
            feature_names: self.feature_names.clone(),
            train_window: self.train_window,
            horizons: self.entries.iter().map(|e| e.horizon).collect(),
            horizon_seeds: self
                .entries
                .iter()
                .map(|e| horizon_seed(self.seed, e.horizon))
                .collect(),
            scalings: self.entries.iter().map(|e| e.scaling.clone()).collect(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| FlucastError::CorruptPayload(e.to_string()))?;
        fs::write(dir.join("manifest.json"), json)?;
        for entry in &self.entries {
            let mut buf = Vec::new();
            entry.model.save(&mut buf)?;
            fs::write(dir.join(format!("h{}.model", entry.horizon)), buf)?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<MsopBundle> {
        let json = fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: BundleManifest =
            serde_json::from_str(&json).map_err(|e| FlucastError::CorruptPayload(e.to_string()))?;
        let mut entries = Vec::new();
        for (h, scaling) in manifest.horizons.iter().zip(manifest.scalings) {
            let bytes = fs::read(dir.join(format!("h{h}.model")))?;
            entries.push(HorizonEntry {
                horizon: *h,
                model: Model::load(&bytes[..])?,
                scaling,
            });
        }
        Ok(MsopBundle {
            target_country: manifest.target_country,
            spec: manifest.spec,
            model_kind: manifest.model_kind,
            seed: manifest.seed,
            feature_names: manifest.feature_names,
            train_window: manifest.train_window,
            entries,
        })
    }
}
