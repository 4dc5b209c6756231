//! Batch CLI for the forecasting pipeline. Exit codes: 0 success, 1 usage
//! error, 2 data error, 3 training error.

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use flucast::epiweek::EpiWeek;
use flucast::error::FlucastError;
use flucast::evaluation::{
    emit_plot_data, emit_report, run_comparison, ComparisonSetup, Denominator, ForecastReport,
    HemisphereMap, MetricConfig, ReportFormat, ZeroPolicy,
};
use flucast::features::{build_features, FeatureMatrix, FeatureSpec, Stat};
use flucast::msop::{predict_msop, train_msop, MsopBundle};
use flucast::panel::{ingest_panel, ColumnMapping, CountryPanel};
use flucast::regressors::{
    ForestConfig, LstmConfig, ModelConfigs, ModelKind, SequenceMode, SvrConfig,
};
use flucast::synth::{generate, SynthScenario};

/// Environment variable naming a default config file for `evaluate`.
const CONFIG_ENV: &str = "FLUCAST_CONFIG";

#[derive(Parser)]
#[command(name = "flucast", version, about = "spatio-temporal multi-step flu forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct SpecArgs {
    /// Weeks of target-country history per row.
    #[arg(long, default_value_t = 52)]
    lag_depth: usize,
    /// Rolling-statistic window lengths, comma separated.
    #[arg(long, default_value = "1,2,3,4,9,13,26,52", value_delimiter = ',')]
    windows: Vec<usize>,
    /// Rolling statistics: any of mean,median,std,max,min.
    #[arg(long, default_value = "mean,median,std,max,min", value_delimiter = ',')]
    stats: Vec<String>,
    /// Drop the first-difference block.
    #[arg(long)]
    no_first_diff: bool,
    /// Forecast horizons in weeks, comma separated.
    #[arg(long, default_value = "1,2,3,4", value_delimiter = ',')]
    horizons: Vec<u32>,
}

impl SpecArgs {
    fn to_spec(&self, spatial: bool) -> Result<FeatureSpec, FlucastError> {
        let mut stats = Vec::new();
        for s in &self.stats {
            let stat = Stat::ALL
                .iter()
                .find(|st| st.name() == s.as_str())
                .copied()
                .ok_or_else(|| FlucastError::InvalidConfig(format!("unknown stat {s:?}")))?;
            stats.push(stat);
        }
        let spec = FeatureSpec {
            lag_depth: self.lag_depth,
            windows: self.windows.clone(),
            stats,
            include_first_diff: !self.no_first_diff,
            spatial,
            horizons: self.horizons.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 3)]
    lstm_layers: usize,
    #[arg(long, default_value_t = 32)]
    lstm_hidden: usize,
    #[arg(long, default_value_t = 200)]
    lstm_epochs: usize,
    #[arg(long, default_value_t = 0.005)]
    lstm_lr: f64,
    #[arg(long, default_value_t = 16)]
    lstm_batch: usize,
    #[arg(long, default_value_t = 5.0)]
    lstm_clip: f64,
    /// Feed the whole row as one step instead of unrolling the lag window.
    #[arg(long)]
    lstm_flat: bool,
    #[arg(long, default_value_t = 64)]
    rf_trees: usize,
    #[arg(long, default_value_t = 12)]
    rf_depth: usize,
    #[arg(long, default_value_t = 2)]
    rf_min_leaf: usize,
    #[arg(long)]
    rf_no_bootstrap: bool,
    #[arg(long, default_value_t = 0.1)]
    svr_epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    svr_c: f64,
    #[arg(long, default_value_t = 200)]
    svr_epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    svr_lr: f64,
}

impl ModelArgs {
    fn to_configs(&self) -> ModelConfigs {
        ModelConfigs {
            lstm: LstmConfig {
                layers: self.lstm_layers,
                hidden_size: self.lstm_hidden,
                epochs: self.lstm_epochs,
                learning_rate: self.lstm_lr,
                batch_size: self.lstm_batch,
                gradient_clip: self.lstm_clip,
                seed: 0,
                sequence_mode: if self.lstm_flat {
                    SequenceMode::Flat
                } else {
                    SequenceMode::Windowed
                },
            },
            forest: ForestConfig {
                n_trees: self.rf_trees,
                max_depth: self.rf_depth,
                min_leaf: self.rf_min_leaf,
                bootstrap: !self.rf_no_bootstrap,
                ..ForestConfig::default()
            },
            svr: SvrConfig {
                epsilon: self.svr_epsilon,
                c: self.svr_c,
                epochs: self.svr_epochs,
                learning_rate: self.svr_lr,
                seed: 0,
            },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a delimited weekly export into a panel file.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "Country")]
        country_col: String,
        #[arg(long, default_value = "Year")]
        year_col: String,
        #[arg(long, default_value = "Week")]
        week_col: String,
        #[arg(long, default_value = "ALL_INF")]
        count_col: String,
        #[arg(long, default_value = ",")]
        delimiter: char,
    },
    /// List complete (kept) and incomplete (dropped) countries.
    Select {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Generate a synthetic panel from a scenario file.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build a feature matrix for one target country.
    Featurize {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        output: PathBuf,
        /// Include other countries' lag blocks.
        #[arg(long)]
        spatial: bool,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Train a per-horizon model bundle from a feature matrix file.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        models: ModelArgs,
    },
    /// Forecast feature rows with a trained bundle.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Run the with-vs-without-spatial comparison and emit the report.
    Evaluate(Box<EvaluateArgs>),
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Target countries, comma separated.
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    /// Model kinds: lstm,rf,svr,naive_last,naive_seasonal.
    #[arg(long, default_value = "lstm,rf,svr", value_delimiter = ',')]
    models: Vec<String>,
    /// First test-origin week, e.g. 2017-W27.
    #[arg(long)]
    test_from: Option<String>,
    /// Training seeds, comma separated.
    #[arg(long, default_value = "0", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Report destination ("-" for stdout).
    #[arg(long, default_value = "-")]
    report: String,
    /// Tidy per-week forecast-vs-actual data file.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    #[arg(long, default_value = "table")]
    format: String,
    /// MAPE denominator: current or previous.
    #[arg(long, default_value = "current")]
    denominator: String,
    /// Zero-denominator policy: "skip" or a positive epsilon value.
    #[arg(long, default_value = "skip")]
    zero_policy: String,
    /// Country -> hemisphere TOML file (merged over built-in defaults).
    #[arg(long)]
    hemisphere_map: Option<PathBuf>,
    /// Worker threads for report cells; the output is identical for any N.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Config file whose values override flags (default taken from
    /// $FLUCAST_CONFIG when set).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    models_args: ModelArgs,
}

/// File-based overrides for `evaluate`; any value present replaces the
/// corresponding flag.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    targets: Option<Vec<String>>,
    models: Option<Vec<String>>,
    test_from: Option<String>,
    seeds: Option<Vec<u64>>,
    denominator: Option<String>,
    zero_policy: Option<String>,
    hemisphere_map: Option<PathBuf>,
    lag_depth: Option<usize>,
    windows: Option<Vec<usize>>,
    stats: Option<Vec<String>>,
    horizons: Option<Vec<u32>>,
    jobs: Option<usize>,
}

fn exit_code_for(err: &FlucastError) -> u8 {
    match err {
        FlucastError::InvalidConfig(_)
        | FlucastError::InvalidWeekString(_)
        | FlucastError::InvalidWeek { .. }
        | FlucastError::InvalidScenario(_) => 1,
        FlucastError::DivergedTraining { .. }
        | FlucastError::InsufficientData(_)
        | FlucastError::HorizonFit { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("flucast: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn load_panel(path: &Path) -> Result<CountryPanel, FlucastError> {
    CountryPanel::load(BufReader::new(File::open(path)?))
}

fn parse_week(s: &str, flag: &str) -> Result<EpiWeek, FlucastError> {
    s.parse::<EpiWeek>()
        .map_err(|_| FlucastError::InvalidConfig(format!("{flag}: bad week string {s:?}")))
}

fn write_output(path: &str, bytes: &[u8]) -> Result<(), FlucastError> {
    if path == "-" {
        std::io::stdout().write_all(bytes)?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

fn run(command: Command) -> Result<(), FlucastError> {
    match command {
        Command::Ingest { input, output, country_col, year_col, week_col, count_col, delimiter } => {
            let mapping = ColumnMapping {
                country: country_col,
                year: year_col,
                week: week_col,
                count: count_col,
                delimiter: delimiter as u8,
            };
            let panel = ingest_panel(BufReader::new(File::open(&input)?), &mapping)?;
            let mut out = Vec::new();
            panel.save(&mut out)?;
            fs::write(&output, out)?;
            eprintln!(
                "ingested {} countries x {} weeks ({} .. {})",
                panel.countries().len(),
                panel.n_weeks(),
                panel.start(),
                panel.end()
            );
            Ok(())
        }
        Command::Select { panel, format } => {
            let panel = load_panel(&panel)?;
            let selection = panel.select_complete_countries();
            let bytes = match format.as_str() {
                "json" => serde_json::to_vec_pretty(&selection)
                    .map_err(|e| FlucastError::CorruptPayload(e.to_string()))?,
                "table" => {
                    let mut out = Vec::new();
                    writeln!(out, "kept ({}):", selection.kept.len())?;
                    for c in &selection.kept {
                        writeln!(out, "  {c}")?;
                    }
                    writeln!(out, "dropped ({}):", selection.dropped.len())?;
                    for (c, n) in &selection.dropped {
                        writeln!(out, "  {c} ({n} missing weeks)")?;
                    }
                    out
                }
                other => {
                    return Err(FlucastError::InvalidConfig(format!(
                        "--format: unknown format {other:?}"
                    )))
                }
            };
            std::io::stdout().write_all(&bytes)?;
            Ok(())
        }
        Command::Synth { scenario, output } => {
            let text = fs::read_to_string(&scenario)?;
            let scenario = SynthScenario::from_toml(&text)?;
            let panel = generate(&scenario)?;
            let mut out = Vec::new();
            panel.save(&mut out)?;
            fs::write(&output, out)?;
            Ok(())
        }
        Command::Featurize { panel, target, output, spatial, spec } => {
            let panel = load_panel(&panel)?;
            let spec = spec.to_spec(spatial)?;
            let fm = build_features(&panel, &target, &spec)?;
            let mut out = Vec::new();
            fm.export(&mut out)?;
            fs::write(&output, out)?;
            eprintln!("{} rows x {} features", fm.n_rows(), fm.n_features());
            Ok(())
        }
        Command::Train { features, model, output, seed, models } => {
            let fm = FeatureMatrix::import(BufReader::new(File::open(&features)?))?;
            let kind: ModelKind = model.parse()?;
            let spec = FeatureSpec::infer(&fm.feature_names, &fm.horizons)?;
            let bundle = train_msop(&fm, &spec, kind, &models.to_configs(), seed)?;
            bundle.save_dir(&output)?;
            Ok(())
        }
        Command::Predict { bundle, features, output, format } => {
            let bundle = MsopBundle::load_dir(&bundle)?;
            let fm = FeatureMatrix::import(BufReader::new(File::open(&features)?))?;
            let forecasts = predict_msop(&bundle, &fm)?;
            let bytes = match format.as_str() {
                "json" => {
                    let rows: Vec<serde_json::Value> = fm
                        .origins
                        .iter()
                        .zip(&forecasts)
                        .map(|(origin, row)| {
                            let mut obj = serde_json::Map::new();
                            obj.insert("origin".into(), origin.to_string().into());
                            for (h, v) in bundle.entries.iter().map(|e| e.horizon).zip(row) {
                                obj.insert(format!("h{h}"), (*v).into());
                            }
                            serde_json::Value::Object(obj)
                        })
                        .collect();
                    serde_json::to_vec_pretty(&rows)
                        .map_err(|e| FlucastError::CorruptPayload(e.to_string()))?
                }
                "csv" => {
                    let mut out = Vec::new();
                    let header: Vec<String> = std::iter::once("origin".to_string())
                        .chain(bundle.entries.iter().map(|e| format!("h{}", e.horizon)))
                        .collect();
                    writeln!(out, "{}", header.join(","))?;
                    for (origin, row) in fm.origins.iter().zip(&forecasts) {
                        let vals: Vec<String> =
                            row.iter().map(|v| format!("{v:.16e}")).collect();
                        writeln!(out, "{origin},{}", vals.join(","))?;
                    }
                    out
                }
                other => {
                    return Err(FlucastError::InvalidConfig(format!(
                        "--format: unknown format {other:?}"
                    )))
                }
            };
            fs::write(&output, bytes)?;
            Ok(())
        }
        Command::Evaluate(args) => evaluate(*args),
    }
}

fn evaluate(mut args: EvaluateArgs) -> Result<(), FlucastError> {
    // config file values override flags
    let config_path = args.config.clone().or_else(|| std::env::var(CONFIG_ENV).ok().map(Into::into));
    if let Some(path) = config_path {
        let text = fs::read_to_string(&path)?;
        let file: RunConfigFile =
            toml::from_str(&text).map_err(|e| FlucastError::InvalidConfig(e.to_string()))?;
        if let Some(v) = file.targets {
            args.targets = v;
        }
        if let Some(v) = file.models {
            args.models = v;
        }
        if let Some(v) = file.test_from {
            args.test_from = Some(v);
        }
        if let Some(v) = file.seeds {
            args.seeds = v;
        }
        if let Some(v) = file.denominator {
            args.denominator = v;
        }
        if let Some(v) = file.zero_policy {
            args.zero_policy = v;
        }
        if let Some(v) = file.hemisphere_map {
            args.hemisphere_map = Some(v);
        }
        if let Some(v) = file.lag_depth {
            args.spec.lag_depth = v;
        }
        if let Some(v) = file.windows {
            args.spec.windows = v;
        }
        if let Some(v) = file.stats {
            args.spec.stats = v;
        }
        if let Some(v) = file.horizons {
            args.spec.horizons = v;
        }
        if let Some(v) = file.jobs {
            args.jobs = v;
        }
    }

    if args.targets.is_empty() {
        return Err(FlucastError::InvalidConfig("--targets: none given".to_string()));
    }
    let test_from = match &args.test_from {
        Some(s) => parse_week(s, "--test-from")?,
        None => return Err(FlucastError::InvalidConfig("--test-from: required".to_string())),
    };
    let format: ReportFormat = args
        .format
        .parse()
        .map_err(|_| FlucastError::InvalidConfig(format!("--format: unknown {:?}", args.format)))?;
    let denominator = match args.denominator.as_str() {
        "current" => Denominator::Current,
        "previous" => Denominator::Previous,
        other => {
            return Err(FlucastError::InvalidConfig(format!(
                "--denominator: expected current|previous, got {other:?}"
            )))
        }
    };
    let zero_policy = match args.zero_policy.as_str() {
        "skip" => ZeroPolicy::Skip,
        eps => ZeroPolicy::Epsilon(eps.parse().map_err(|_| {
            FlucastError::InvalidConfig(format!("--zero-policy: expected skip or epsilon, got {eps:?}"))
        })?),
    };
    let mut model_kinds = Vec::new();
    for m in &args.models {
        model_kinds.push(m.parse::<ModelKind>().map_err(|_| {
            FlucastError::InvalidConfig(format!("--models: unknown model {m:?}"))
        })?);
    }
    let hemispheres = match &args.hemisphere_map {
        Some(path) => HemisphereMap::from_toml(&fs::read_to_string(path)?)?,
        None => HemisphereMap::default(),
    };

    let panel = load_panel(&args.panel)?;
    let setup = ComparisonSetup {
        targets: args.targets.clone(),
        model_kinds,
        spec: args.spec.to_spec(true)?,
        test_from,
        metric: MetricConfig { denominator, zero_policy },
        seeds: args.seeds.clone(),
        configs: args.models_args.to_configs(),
        hemispheres,
    };

    let run_it = || run_comparison(&panel, &setup);
    let (report, plots): (ForecastReport, _) = if args.jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| FlucastError::InvalidConfig(e.to_string()))?;
        pool.install(run_it)?
    } else {
        run_it()?
    };

    write_output(&args.report, &emit_report(&report, format)?)?;
    if let Some(path) = &args.plot_data {
        fs::write(path, emit_plot_data(&plots)?)?;
    }
    Ok(())
}
