//! Spatio-temporal multi-step influenza forecasting.
//!
//! The pipeline: ingest multi-country weekly case-count panels, filter to
//! complete countries, build temporal + cross-country spatial feature
//! matrices, train one model per forecast horizon (LSTM, random forest,
//! linear SVR, or naive baselines, all implemented from first principles),
//! and evaluate with walk-forward MAPE comparisons of the with-spatial and
//! without-spatial feature sets.

pub mod epiweek;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod msop;
pub mod panel;
pub mod regressors;
pub mod synth;

pub use epiweek::EpiWeek;
pub use error::{FlucastError, Result};
pub use features::{build_features, standardize, FeatureMatrix, FeatureSpec, ScalingStats};
pub use msop::{predict_msop, train_msop, MsopBundle};
pub use panel::{ingest_panel, ColumnMapping, CountryPanel, PanelSelection};
pub use regressors::{Model, ModelConfigs, ModelKind};
