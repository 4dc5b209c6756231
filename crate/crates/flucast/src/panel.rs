//! Multi-country weekly case-count panels: ingestion from delimited exports,
//! completeness-based country selection, slicing, and a versioned text
//! persistence format.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::epiweek::EpiWeek;
use crate::error::{FlucastError, Result};

/// Which columns of a delimited export hold the country, year, week, and
/// count fields. Defaults match FluNet CSV export headers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub country: String,
    pub year: String,
    pub week: String,
    pub count: String,
    /// Field delimiter, comma by default.
    pub delimiter: u8,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            country: "Country".to_string(),
            year: "Year".to_string(),
            week: "Week".to_string(),
            // Total influenza-positive specimens; FluNet exports also carry
            // per-strain columns, selectable by overriding this.
            count: "ALL_INF".to_string(),
            delimiter: b',',
        }
    }
}

/// Aligned weekly case-count matrix over countries x weeks, with a
/// missingness mask. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryPanel {
    countries: Vec<String>,
    start: EpiWeek,
    values: Vec<Vec<f64>>,
    missing: Vec<Vec<bool>>,
}

/// Result of the completeness filter: countries kept (no missing cells) and
/// dropped (with their missing-week counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSelection {
    pub kept: Vec<String>,
    pub dropped: Vec<(String, usize)>,
}

impl CountryPanel {
    pub fn new(
        countries: Vec<String>,
        start: EpiWeek,
        values: Vec<Vec<f64>>,
        missing: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if countries.is_empty() || values.is_empty() {
            return Err(FlucastError::EmptyPanel);
        }
        let n_weeks = values[0].len();
        if n_weeks == 0 {
            return Err(FlucastError::EmptyPanel);
        }
        if values.len() != countries.len() || missing.len() != countries.len() {
            return Err(FlucastError::ShapeMismatch(
                "country count differs between fields".to_string(),
            ));
        }
        for (i, (v, m)) in values.iter().zip(&missing).enumerate() {
            if v.len() != n_weeks || m.len() != n_weeks {
                return Err(FlucastError::ShapeMismatch(format!(
                    "row {i} length differs from week axis"
                )));
            }
            for (x, &miss) in v.iter().zip(m.iter()) {
                if !miss && (!x.is_finite() || *x < 0.0) {
                    return Err(FlucastError::ShapeMismatch(format!(
                        "negative or non-finite value in row {i}"
                    )));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for c in &countries {
            if !seen.insert(c.clone()) {
                return Err(FlucastError::ShapeMismatch(format!("duplicate country {c:?}")));
            }
        }
        Ok(Self { countries, start, values, missing })
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn start(&self) -> EpiWeek {
        self.start
    }

    pub fn end(&self) -> EpiWeek {
        self.start.add_weeks(self.n_weeks() as i64 - 1)
    }

    pub fn n_weeks(&self) -> usize {
        self.values[0].len()
    }

    pub fn country_index(&self, name: &str) -> Option<usize> {
        self.countries.iter().position(|c| c == name)
    }

    pub fn series(&self, country_idx: usize) -> &[f64] {
        &self.values[country_idx]
    }

    pub fn is_missing(&self, country_idx: usize, week_idx: usize) -> bool {
        self.missing[country_idx][week_idx]
    }

    pub fn week_at(&self, week_idx: usize) -> EpiWeek {
        self.start.add_weeks(week_idx as i64)
    }

    /// Column index of a week within the panel, if in range.
    pub fn week_index(&self, week: &EpiWeek) -> Option<usize> {
        let d = self.start.weeks_until(week);
        if d >= 0 && (d as usize) < self.n_weeks() {
            Some(d as usize)
        } else {
            None
        }
    }

    /// Countries with zero missing cells over the full span, in panel order;
    /// everything else listed with its missing count.
    pub fn select_complete_countries(&self) -> PanelSelection {
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for (i, c) in self.countries.iter().enumerate() {
            let n_missing = self.missing[i].iter().filter(|&&m| m).count();
            if n_missing == 0 {
                kept.push(c.clone());
            } else {
                dropped.push((c.clone(), n_missing));
            }
        }
        PanelSelection { kept, dropped }
    }

    /// Sub-panel over [from, to] inclusive, masks preserved.
    pub fn slice(&self, from: &EpiWeek, to: &EpiWeek) -> Result<CountryPanel> {
        let oob = || FlucastError::RangeOutOfBounds {
            from: from.to_string(),
            to: to.to_string(),
            start: self.start.to_string(),
            end: self.end().to_string(),
        };
        if from > to {
            return Err(oob());
        }
        let a = self.week_index(from).ok_or_else(oob)?;
        let b = self.week_index(to).ok_or_else(oob)?;
        CountryPanel::new(
            self.countries.clone(),
            *from,
            self.values.iter().map(|v| v[a..=b].to_vec()).collect(),
            self.missing.iter().map(|m| m[a..=b].to_vec()).collect(),
        )
    }

    /// Sub-panel restricted to the named countries, in the given order.
    pub fn restrict_countries(&self, keep: &[String]) -> Result<CountryPanel> {
        let mut values = Vec::new();
        let mut missing = Vec::new();
        for c in keep {
            let i = self
                .country_index(c)
                .ok_or_else(|| FlucastError::UnknownCountry(c.clone()))?;
            values.push(self.values[i].clone());
            missing.push(self.missing[i].clone());
        }
        CountryPanel::new(keep.to_vec(), self.start, values, missing)
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "FLUPANEL v1")?;
        writeln!(w, "countries={}", self.countries.join(","))?;
        writeln!(w, "start={}", self.start)?;
        writeln!(w, "end={}", self.end())?;
        for (v, m) in self.values.iter().zip(&self.missing) {
            let row: Vec<String> = v
                .iter()
                .zip(m.iter())
                .map(|(x, &miss)| if miss { "NA".to_string() } else { format!("{x}") })
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<CountryPanel> {
        let mut lines = BufReader::new(r).lines();
        let mut next_line = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| FlucastError::CorruptPayload(format!("missing {what}")))
        };
        let version = next_line("version header")?;
        if version.trim() != "FLUPANEL v1" {
            return Err(FlucastError::FormatVersionMismatch {
                expected: "FLUPANEL v1".to_string(),
                found: version.trim().to_string(),
            });
        }
        let parse_kv = |line: String, key: &str| -> Result<String> {
            line.strip_prefix(&format!("{key}="))
                .map(str::to_string)
                .ok_or_else(|| FlucastError::CorruptPayload(format!("expected {key}= line")))
        };
        let countries: Vec<String> = parse_kv(next_line("countries")?, "countries")?
            .split(',')
            .map(str::to_string)
            .collect();
        let start: EpiWeek = parse_kv(next_line("start")?, "start")?
            .parse()
            .map_err(|_| FlucastError::CorruptPayload("bad start week".to_string()))?;
        let end: EpiWeek = parse_kv(next_line("end")?, "end")?
            .parse()
            .map_err(|_| FlucastError::CorruptPayload("bad end week".to_string()))?;
        let n_weeks = start.weeks_until(&end) + 1;
        if n_weeks < 1 {
            return Err(FlucastError::CorruptPayload("end before start".to_string()));
        }
        let mut values = Vec::with_capacity(countries.len());
        let mut missing = Vec::with_capacity(countries.len());
        for c in &countries {
            let row = next_line(&format!("data row for {c:?}"))?;
            let mut vals = Vec::with_capacity(n_weeks as usize);
            let mut miss = Vec::with_capacity(n_weeks as usize);
            for tok in row.split(',') {
                if tok == "NA" {
                    vals.push(0.0);
                    miss.push(true);
                } else {
                    let x: f64 = tok.parse().map_err(|_| {
                        FlucastError::CorruptPayload(format!("bad value {tok:?} for {c:?}"))
                    })?;
                    vals.push(x);
                    miss.push(false);
                }
            }
            if vals.len() != n_weeks as usize {
                return Err(FlucastError::CorruptPayload(format!(
                    "row for {c:?} has {} cells, expected {n_weeks}",
                    vals.len()
                )));
            }
            values.push(vals);
            missing.push(miss);
        }
        CountryPanel::new(countries, start, values, missing)
    }
}

/// Build a panel from a delimited export. The week axis spans the min..max
/// weeks seen anywhere in the input; countries are sorted so that ingestion
/// is insensitive to input row order. Empty or non-numeric count fields are
/// marked missing; duplicate (country, week) rows are an error.
pub fn ingest_panel<R: Read>(source: R, mapping: &ColumnMapping) -> Result<CountryPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(mapping.delimiter)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| FlucastError::MalformedRow {
                line: 1,
                reason: format!("header column {name:?} not found"),
            })
    };
    let c_country = col(&mapping.country)?;
    let c_year = col(&mapping.year)?;
    let c_week = col(&mapping.week)?;
    let c_count = col(&mapping.count)?;

    // (country, week) -> Some(count) observed, None = explicit missing
    let mut cells: BTreeMap<(String, EpiWeek), Option<f64>> = BTreeMap::new();
    let mut span: Option<(EpiWeek, EpiWeek)> = None;

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| -> Result<&str> {
            record.get(i).ok_or_else(|| FlucastError::MalformedRow {
                line,
                reason: format!("fewer than {} fields", i + 1),
            })
        };
        let country = field(c_country)?.trim().to_string();
        if country.is_empty() {
            return Err(FlucastError::MalformedRow { line, reason: "empty country".to_string() });
        }
        let year: i32 = field(c_year)?.trim().parse().map_err(|_| FlucastError::MalformedRow {
            line,
            reason: format!("bad year {:?}", field(c_year).unwrap_or("")),
        })?;
        let week_no: u32 =
            field(c_week)?.trim().parse().map_err(|_| FlucastError::MalformedRow {
                line,
                reason: format!("bad week {:?}", field(c_week).unwrap_or("")),
            })?;
        let week = EpiWeek::new(year, week_no).map_err(|e| FlucastError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let count_str = field(c_count)?.trim();
        let count: Option<f64> = match count_str.parse::<f64>() {
            Ok(x) if x >= 0.0 && x.is_finite() => Some(x),
            Ok(_) => {
                return Err(FlucastError::MalformedRow {
                    line,
                    reason: format!("negative or non-finite count {count_str:?}"),
                })
            }
            // empty or non-numeric counts mark the cell missing
            Err(_) => None,
        };
        if cells.insert((country.clone(), week), count).is_some() {
            return Err(FlucastError::DuplicateCell { country, week: week.to_string() });
        }
        span = Some(match span {
            None => (week, week),
            Some((lo, hi)) => (lo.min(week), hi.max(week)),
        });
    }

    let (start, end) = span.ok_or(FlucastError::EmptyPanel)?;
    let n_weeks = (start.weeks_until(&end) + 1) as usize;
    let mut countries: Vec<String> = cells.keys().map(|(c, _)| c.clone()).collect();
    countries.dedup();
    countries.sort();

    let mut values = vec![vec![0.0; n_weeks]; countries.len()];
    let mut missing = vec![vec![true; n_weeks]; countries.len()];
    for ((country, week), count) in &cells {
        let i = countries.binary_search(country).expect("country present");
        let j = start.weeks_until(week) as usize;
        if let Some(x) = count {
            values[i][j] = *x;
            missing[i][j] = false;
        }
    }
    CountryPanel::new(countries, start, values, missing)
}
