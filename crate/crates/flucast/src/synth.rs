//! Synthetic multi-country weekly panels with controllable seasonality,
//! hemisphere phase offsets, season-to-season jitter, and lead-lag
//! cross-country coupling. The substrate for desk-scale end-to-end tests.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::epiweek::EpiWeek;
use crate::error::{FlucastError, Result};
use crate::evaluation::Hemisphere;
use crate::panel::CountryPanel;

pub const SEASON_WEEKS: usize = 52;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountrySpec {
    pub name: String,
    pub hemisphere: Hemisphere,
    pub base: f64,
    /// Per-country seasonal amplitude; falls back to the scenario amplitude.
    pub amplitude: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Coupling {
    pub source: String,
    pub sink: String,
    /// Lead in weeks (>= 1): the sink follows the source this many weeks
    /// later.
    pub lag: usize,
    /// In [0, 1]: fraction of the source's signal added to the sink.
    pub strength: f64,
}

fn default_phase_offset() -> usize {
    26
}

fn default_kernel_width() -> f64 {
    13.0
}

fn default_start() -> String {
    "2010-W01".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthScenario {
    pub n_weeks: usize,
    pub seed: u64,
    /// Default seasonal amplitude (counts at the season peak).
    pub amplitude: f64,
    /// Weeks between northern and southern season peaks.
    #[serde(default = "default_phase_offset")]
    pub phase_offset: usize,
    /// Width of the raised-cosine season bump, in weeks.
    #[serde(default = "default_kernel_width")]
    pub kernel_width: f64,
    /// Scale of per-season timing (weeks) and relative severity noise.
    #[serde(default)]
    pub season_jitter: f64,
    /// Scale of per-week observation noise.
    #[serde(default)]
    pub noise: f64,
    /// Probability that any cell is marked missing.
    #[serde(default)]
    pub missing_rate: f64,
    #[serde(default = "default_start")]
    pub start: String,
    pub countries: Vec<CountrySpec>,
    #[serde(default)]
    pub coupling: Vec<Coupling>,
}

impl SynthScenario {
    pub fn from_toml(text: &str) -> Result<SynthScenario> {
        let s: SynthScenario =
            toml::from_str(text).map_err(|e| FlucastError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FlucastError::InvalidScenario(m));
        if self.countries.is_empty() {
            return bad("at least one country required".to_string());
        }
        let mut names = std::collections::HashSet::new();
        for c in &self.countries {
            if !names.insert(c.name.as_str()) {
                return bad(format!("duplicate country {:?}", c.name));
            }
        }
        for c in &self.coupling {
            if c.lag < 1 {
                return bad(format!("coupling {} -> {}: lag must be >= 1", c.source, c.sink));
            }
            if !(0.0..=1.0).contains(&c.strength) {
                return bad(format!("coupling {} -> {}: strength outside [0, 1]", c.source, c.sink));
            }
            for name in [&c.source, &c.sink] {
                if !names.contains(name.as_str()) {
                    return bad(format!("coupling references unknown country {name:?}"));
                }
            }
        }
        if !self.coupling.is_empty() && self.n_weeks < 2 * SEASON_WEEKS {
            return bad("coupled scenarios need at least two seasons of data".to_string());
        }
        if self.season_jitter < 0.0 || self.noise < 0.0 || self.amplitude < 0.0 {
            return bad("noise scales must be non-negative".to_string());
        }
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return bad("missing_rate outside [0, 1]".to_string());
        }
        Ok(())
    }
}

/// Raised-cosine bump: 1 at the peak, 0 beyond `width / 2` weeks away.
fn season_bump(distance: f64, width: f64) -> f64 {
    let half = width / 2.0;
    if distance.abs() >= half {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * distance / half).cos())
    }
}

/// Circular distance on the 52-week cycle, in [-26, 26).
fn cyclic_distance(week_in_cycle: f64, peak: f64) -> f64 {
    let mut d = week_in_cycle - peak;
    let period = SEASON_WEEKS as f64;
    while d >= period / 2.0 {
        d -= period;
    }
    while d < -period / 2.0 {
        d += period;
    }
    d
}

/// Deterministic per-seed generation. Each country's pre-coupling signal is
/// base + amplitude * seasonal bump with per-season jittered timing and
/// severity; coupling terms add the source's lagged pre-coupling signal, so
/// coupled sinks inherit the source's season-to-season variation. Counts are
/// noise-perturbed, clipped at zero, and rounded.
pub fn generate(scenario: &SynthScenario) -> Result<CountryPanel> {
    scenario.validate()?;
    let start: EpiWeek = scenario.start.parse()?;
    let n = scenario.n_weeks;
    let n_seasons = n / SEASON_WEEKS + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");

    // base (pre-coupling) series per country
    let mut base_series: Vec<Vec<f64>> = Vec::with_capacity(scenario.countries.len());
    for c in &scenario.countries {
        let amp = c.amplitude.unwrap_or(scenario.amplitude);
        let base_peak = match c.hemisphere {
            Hemisphere::Northern => 4.0,
            Hemisphere::Southern => 4.0 + scenario.phase_offset as f64,
        };
        // per-season timing shift (weeks) and severity multiplier
        let timing: Vec<f64> = (0..n_seasons)
            .map(|_| scenario.season_jitter * std_normal.sample(&mut rng))
            .collect();
        let severity: Vec<f64> = (0..n_seasons)
            .map(|_| {
                (1.0 + 0.1 * scenario.season_jitter * std_normal.sample(&mut rng)).max(0.0)
            })
            .collect();
        let series: Vec<f64> = (0..n)
            .map(|t| {
                let season = t / SEASON_WEEKS;
                let cycle_pos = (t % SEASON_WEEKS) as f64;
                let d = cyclic_distance(cycle_pos, base_peak + timing[season]);
                c.base + amp * severity[season] * season_bump(d, scenario.kernel_width)
            })
            .collect();
        base_series.push(series);
    }

    let index_of = |name: &str| {
        scenario
            .countries
            .iter()
            .position(|c| c.name == *name)
            .expect("validated country name")
    };

    let mut values: Vec<Vec<f64>> = base_series.clone();
    for cp in &scenario.coupling {
        let src = index_of(&cp.source);
        let sink = index_of(&cp.sink);
        for t in cp.lag..n {
            // couple to the source's seasonal signal above its floor
            let src_level = base_series[src][t - cp.lag] - scenario.countries[src].base;
            values[sink][t] += cp.strength * src_level;
        }
    }

    for series in &mut values {
        for v in series.iter_mut() {
            *v += scenario.noise * std_normal.sample(&mut rng);
            *v = v.max(0.0).round();
        }
    }

    let missing: Vec<Vec<bool>> = (0..scenario.countries.len())
        .map(|_| (0..n).map(|_| rng.gen::<f64>() < scenario.missing_rate).collect())
        .collect();

    CountryPanel::new(
        scenario.countries.iter().map(|c| c.name.clone()).collect(),
        start,
        values,
        missing,
    )
}
