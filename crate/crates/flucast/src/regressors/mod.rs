//! From-scratch model zoo behind a uniform fit/predict contract: stacked
//! LSTM with a dense head, random forest, linear epsilon-insensitive SVR,
//! and naive baselines. All fits are seed-deterministic.

mod forest;
mod lstm;
mod svr;

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{FlucastError, Result};

pub use forest::{fit_forest, ForestConfig, ForestModel};
pub use lstm::{fit_lstm, LstmConfig, LstmModel, SequenceMode};
pub use svr::{fit_svr, svr_objective, SvrConfig, SvrModel};

/// Model families reported in the comparison protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lstm,
    Rf,
    Svr,
    NaiveLast,
    NaiveSeasonal,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Rf => "rf",
            ModelKind::Svr => "svr",
            ModelKind::NaiveLast => "naive_last",
            ModelKind::NaiveSeasonal => "naive_seasonal",
        }
    }

    /// Gradient-trained models see standardized features and targets;
    /// trees and baselines read raw values.
    pub fn wants_scaling(&self) -> bool {
        matches!(self, ModelKind::Lstm | ModelKind::Svr)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = FlucastError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(ModelKind::Lstm),
            "rf" => Ok(ModelKind::Rf),
            "svr" | "svm" => Ok(ModelKind::Svr),
            "naive_last" | "naive" => Ok(ModelKind::NaiveLast),
            "naive_seasonal" | "seasonal" => Ok(ModelKind::NaiveSeasonal),
            other => Err(FlucastError::InvalidConfig(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Baselines reading a single lag column: `last_value` repeats `t.lag.0`,
/// `seasonal_52` repeats `t.lag.51`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveModel {
    pub column: String,
}

impl NaiveModel {
    pub fn last_value() -> Self {
        Self { column: "t.lag.0".to_string() }
    }

    pub fn seasonal_52() -> Self {
        Self { column: "t.lag.51".to_string() }
    }

    pub fn predict(&self, x: &[Vec<f64>], feature_names: &[String]) -> Result<Vec<f64>> {
        let j = feature_names
            .iter()
            .position(|n| n == &self.column)
            .ok_or_else(|| FlucastError::MissingFeatureColumn(self.column.clone()))?;
        Ok(x.iter().map(|row| row[j]).collect())
    }
}

/// A trained model of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Lstm(LstmModel),
    Forest(ForestModel),
    Svr(SvrModel),
    Naive(NaiveModel),
}

/// Hyperparameters for every family, so callers can carry one bag of
/// settings through the pipeline.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelConfigs {
    pub lstm: LstmConfig,
    pub forest: ForestConfig,
    pub svr: SvrConfig,
}

impl ModelConfigs {
    /// Copy with every family's seed replaced.
    pub fn with_seed(&self, seed: u64) -> ModelConfigs {
        let mut c = self.clone();
        c.lstm.seed = seed;
        c.forest.seed = seed;
        c.svr.seed = seed;
        c
    }
}

/// Train a model of the requested kind on (x, y).
pub fn fit_model(
    kind: ModelKind,
    configs: &ModelConfigs,
    x: &[Vec<f64>],
    y: &[f64],
    feature_names: &[String],
) -> Result<Model> {
    match kind {
        ModelKind::Lstm => Ok(Model::Lstm(fit_lstm(&configs.lstm, x, y, feature_names)?)),
        ModelKind::Rf => Ok(Model::Forest(fit_forest(&configs.forest, x, y)?)),
        ModelKind::Svr => Ok(Model::Svr(fit_svr(&configs.svr, x, y)?)),
        ModelKind::NaiveLast => Ok(Model::Naive(NaiveModel::last_value())),
        ModelKind::NaiveSeasonal => Ok(Model::Naive(NaiveModel::seasonal_52())),
    }
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Lstm(_) => ModelKind::Lstm,
            Model::Forest(_) => ModelKind::Rf,
            Model::Svr(_) => ModelKind::Svr,
            Model::Naive(m) if m.column == "t.lag.0" => ModelKind::NaiveLast,
            Model::Naive(_) => ModelKind::NaiveSeasonal,
        }
    }

    pub fn predict(&self, x: &[Vec<f64>], feature_names: &[String]) -> Result<Vec<f64>> {
        match self {
            Model::Lstm(m) => m.predict(x, feature_names),
            Model::Forest(m) => m.predict(x),
            Model::Svr(m) => m.predict(x),
            Model::Naive(m) => m.predict(x, feature_names),
        }
    }

    /// Versioned text serialization: a kind header, then a JSON body.
    /// Parameters are carried as exact bit patterns so reloaded models
    /// reproduce identical predictions.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let (kind, body) = match self {
            Model::Lstm(m) => ("lstm", serde_json::to_string(m)),
            Model::Forest(m) => ("rf", serde_json::to_string(m)),
            Model::Svr(m) => ("svr", serde_json::to_string(m)),
            Model::Naive(m) => ("naive", serde_json::to_string(m)),
        };
        let body = body.map_err(|e| FlucastError::CorruptPayload(e.to_string()))?;
        writeln!(w, "FLUMODEL v1 kind={kind}")?;
        writeln!(w, "{body}")?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Model> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| FlucastError::CorruptPayload("empty model file".to_string()))?;
        let kind = header.strip_prefix("FLUMODEL v1 kind=").ok_or_else(|| {
            FlucastError::FormatVersionMismatch {
                expected: "FLUMODEL v1".to_string(),
                found: header.chars().take(40).collect(),
            }
        })?;
        let body = lines
            .next()
            .transpose()?
            .ok_or_else(|| FlucastError::CorruptPayload("missing model body".to_string()))?;
        let de = |e: serde_json::Error| FlucastError::CorruptPayload(e.to_string());
        match kind {
            "lstm" => Ok(Model::Lstm(serde_json::from_str(&body).map_err(de)?)),
            "rf" => Ok(Model::Forest(serde_json::from_str(&body).map_err(de)?)),
            "svr" => Ok(Model::Svr(serde_json::from_str(&body).map_err(de)?)),
            "naive" => Ok(Model::Naive(serde_json::from_str(&body).map_err(de)?)),
            other => Err(FlucastError::CorruptPayload(format!("unknown model kind {other:?}"))),
        }
    }
}
