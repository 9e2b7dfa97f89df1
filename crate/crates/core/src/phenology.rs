//! Phenology-window features: chill hours, growing degree days, and
//! windowed sums and means of county daily climate series.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::CountyDailySeries;
use crate::io::{self, csv_err, fmt_f64, Metadata};

/// Number of windows in a feature roster.
pub const N_FEATURES: usize = 13;

/// Fraction of a window's days that may be missing before extraction fails.
pub const MISSING_TOLERANCE: f64 = 0.05;

pub const DEFAULT_CONFIG: &str = include_str!("../config/phenology.toml");

/// Daily chill hours below `threshold` from the day's extremes, assuming
/// temperature sweeps linearly between `tmin` and `tmax`.
pub fn chill_hours_daily(tmin: f64, tmax: f64, threshold: f64) -> Result<f64> {
    if tmax < tmin {
        return Err(Error::validation(
            "chill hours",
            format!("tmax {tmax} below tmin {tmin}"),
        ));
    }
    if tmax == tmin {
        return Ok(if tmin < threshold { 24.0 } else { 0.0 });
    }
    Ok(24.0 * ((threshold - tmin) / (tmax - tmin)).clamp(0.0, 1.0))
}

/// Daily growing degree days above `base`.
pub fn gdd_daily(tmin: f64, tmax: f64, base: f64) -> Result<f64> {
    if tmax < tmin {
        return Err(Error::validation(
            "growing degree days",
            format!("tmax {tmax} below tmin {tmin}"),
        ));
    }
    Ok(((tmin + tmax) / 2.0 - base).max(0.0))
}

/// A `(month, day)` pair written as `MM-DD`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MonthDay {
    pub month: u32,
    pub day: u32,
}

impl MonthDay {
    pub fn new(month: u32, day: u32) -> Result<Self> {
        // 2000 is a leap year, so Feb 29 is accepted here.
        if NaiveDate::from_ymd_opt(2000, month, day).is_none() {
            return Err(Error::config(format!("invalid month-day {month:02}-{day:02}")));
        }
        Ok(MonthDay { month, day })
    }

    /// The date in `year`; Feb 29 maps to Feb 28 outside leap years.
    pub fn in_year(self, year: i32) -> NaiveDate {
        NaiveDate::from_ymd_opt(year, self.month, self.day)
            .or_else(|| NaiveDate::from_ymd_opt(year, self.month, self.day - 1))
            .expect("validated month-day")
    }
}

impl FromStr for MonthDay {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (m, d) = s
            .split_once('-')
            .ok_or_else(|| Error::config(format!("month-day `{s}` should look like MM-DD")))?;
        let m = m.parse().map_err(|_| Error::config(format!("bad month in `{s}`")))?;
        let d = d.parse().map_err(|_| Error::config(format!("bad day in `{s}`")))?;
        MonthDay::new(m, d)
    }
}

impl fmt::Display for MonthDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}-{:02}", self.month, self.day)
    }
}

impl Serialize for MonthDay {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MonthDay {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Sum,
    Mean,
    ChillHours,
    Gdd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenologyWindowSpec {
    #[serde(rename = "feature")]
    pub feature_name: String,
    /// Variable for `sum`/`mean`; temperature aggregators read the
    /// configured tmin/tmax variables instead.
    #[serde(rename = "variable", default, skip_serializing_if = "Option::is_none")]
    pub variable_name: Option<String>,
    pub aggregator: Aggregator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
    pub start: MonthDay,
    pub end: MonthDay,
    #[serde(default)]
    pub crosses_year_boundary: bool,
}

impl PhenologyWindowSpec {
    pub fn validate(&self) -> Result<()> {
        let name = &self.feature_name;
        if name.trim().is_empty() {
            return Err(Error::config("window with empty feature name"));
        }
        if !self.crosses_year_boundary && self.start > self.end {
            return Err(Error::config(format!(
                "window `{name}` is empty: {} after {} without crossing the year boundary",
                self.start, self.end
            )));
        }
        match self.aggregator {
            Aggregator::ChillHours if self.threshold.is_none() => {
                Err(Error::config(format!("chill-hours window `{name}` needs a threshold")))
            }
            Aggregator::Gdd if self.base.is_none() => {
                Err(Error::config(format!("gdd window `{name}` needs a base temperature")))
            }
            Aggregator::Sum | Aggregator::Mean if self.variable_name.is_none() => {
                Err(Error::config(format!("window `{name}` needs a variable")))
            }
            _ => Ok(()),
        }
    }

    /// Inclusive date span of the window for `harvest_year`.
    pub fn span(&self, harvest_year: i32) -> (NaiveDate, NaiveDate) {
        let start_year = if self.crosses_year_boundary {
            harvest_year - 1
        } else {
            harvest_year
        };
        (self.start.in_year(start_year), self.end.in_year(harvest_year))
    }
}

fn default_tmin() -> String {
    "tmin".into()
}

fn default_tmax() -> String {
    "tmax".into()
}

/// The feature roster: an ordered list of windows plus the names of the
/// temperature variables used by chill-hours and GDD windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenologyConfig {
    #[serde(default = "default_tmin")]
    pub tmin_variable: String,
    #[serde(default = "default_tmax")]
    pub tmax_variable: String,
    #[serde(rename = "window")]
    pub windows: Vec<PhenologyWindowSpec>,
}

impl Default for PhenologyConfig {
    fn default() -> Self {
        PhenologyConfig::from_toml(DEFAULT_CONFIG).expect("bundled phenology config is valid")
    }
}

impl PhenologyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PhenologyConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("phenology config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        PhenologyConfig::from_toml(&io::read_text(path)?)
            .map_err(|e| e.context(format!("reading {}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("phenology config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.windows.len() != N_FEATURES {
            return Err(Error::config(format!(
                "expected {N_FEATURES} phenology windows, found {}",
                self.windows.len()
            )));
        }
        let mut names: Vec<&str> = self.windows.iter().map(|w| w.feature_name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(format!("duplicate feature name `{}`", w[0])));
        }
        self.windows.iter().try_for_each(PhenologyWindowSpec::validate)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.windows.iter().map(|w| w.feature_name.clone()).collect()
    }

    /// Variables any window reads, sorted.
    pub fn required_variables(&self) -> Vec<String> {
        let mut vars: Vec<String> = self
            .windows
            .iter()
            .flat_map(|w| self.window_variables(w))
            .collect();
        vars.sort();
        vars.dedup();
        vars
    }

    fn window_variables(&self, w: &PhenologyWindowSpec) -> Vec<String> {
        match w.aggregator {
            Aggregator::Sum | Aggregator::Mean => w.variable_name.iter().cloned().collect(),
            Aggregator::ChillHours | Aggregator::Gdd => {
                vec![self.tmin_variable.clone(), self.tmax_variable.clone()]
            }
        }
    }
}

/// All daily series available for one county, keyed by variable.
#[derive(Debug, Clone, Default)]
pub struct CountyClimate {
    pub county: String,
    pub series: HashMap<String, CountyDailySeries>,
}

impl CountyClimate {
    pub fn new(county: impl Into<String>) -> Self {
        CountyClimate {
            county: county.into(),
            series: HashMap::new(),
        }
    }

    pub fn insert(&mut self, s: CountyDailySeries) {
        self.series.insert(s.variable_name.clone(), s);
    }

    fn get(&self, var: &str) -> Result<&CountyDailySeries> {
        self.series.get(var).ok_or_else(|| {
            Error::validation(
                format!("county {}", self.county),
                format!("no series for variable `{var}`"),
            )
        })
    }

    /// Groups a flat list of series by county.
    pub fn group(series: Vec<CountyDailySeries>) -> Vec<CountyClimate> {
        let mut by_county: BTreeMap<String, CountyClimate> = BTreeMap::new();
        for s in series {
            by_county
                .entry(s.county.clone())
                .or_insert_with(|| CountyClimate::new(s.county.clone()))
                .insert(s);
        }
        by_county.into_values().collect()
    }
}

/// Aggregates one window for one county and harvest year.
pub fn extract_window(
    climate: &CountyClimate,
    config: &PhenologyConfig,
    spec: &PhenologyWindowSpec,
    harvest_year: i32,
) -> Result<f64> {
    spec.validate()?;
    let (start, end) = spec.span(harvest_year);
    let daily: Box<dyn Fn(NaiveDate) -> Result<Option<f64>> + '_> = match spec.aggregator {
        Aggregator::Sum | Aggregator::Mean => {
            let s = climate.get(spec.variable_name.as_deref().unwrap_or_default())?;
            Box::new(move |d| Ok(s.get(d)))
        }
        Aggregator::ChillHours | Aggregator::Gdd => {
            let lo = climate.get(&config.tmin_variable)?;
            let hi = climate.get(&config.tmax_variable)?;
            let agg = spec.aggregator;
            let param = spec.threshold.or(spec.base).unwrap_or_default();
            Box::new(move |d| match (lo.get(d), hi.get(d)) {
                (Some(tmin), Some(tmax)) => {
                    let v = if agg == Aggregator::ChillHours {
                        chill_hours_daily(tmin, tmax, param)
                    } else {
                        gdd_daily(tmin, tmax, param)
                    };
                    v.map(Some).map_err(|e| e.context(format!("on {d}")))
                }
                _ => Ok(None),
            })
        }
    };

    let mut total = 0.0;
    let mut available = 0usize;
    let mut length = 0usize;
    for d in start.iter_days().take_while(|d| *d <= end) {
        length += 1;
        if let Some(v) = daily(d)? {
            total += v;
            available += 1;
        }
    }
    let missing = length - available;
    if available == 0 || missing as f64 > MISSING_TOLERANCE * length as f64 {
        return Err(Error::validation(
            format!(
                "county {}, window `{}` {start}..{end}",
                climate.county, spec.feature_name
            ),
            format!("{missing} of {length} days missing (tolerance {MISSING_TOLERANCE})"),
        ));
    }
    Ok(match spec.aggregator {
        Aggregator::Mean => total / available as f64,
        _ if missing == 0 => total,
        _ => total * length as f64 / available as f64,
    })
}

/// The raw (physical-unit) feature values of one county and harvest year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVectorRaw {
    pub county: String,
    pub year: i32,
    pub values: Vec<f64>,
}

/// Computes every configured window for `climate` and `year`.
pub fn featurize_year(climate: &CountyClimate, config: &PhenologyConfig, year: i32) -> Result<FeatureVectorRaw> {
    config.validate()?;
    let values = config
        .windows
        .iter()
        .map(|w| {
            extract_window(climate, config, w, year)
                .map_err(|e| e.context(format!("feature `{}`", w.feature_name)))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(FeatureVectorRaw {
        county: climate.county.clone(),
        year,
        values,
    })
}

/// Harvest years whose every window lies inside the date range of the
/// series each window reads.
pub fn covered_years(climate: &CountyClimate, config: &PhenologyConfig) -> Vec<i32> {
    let mut first: Option<NaiveDate> = None;
    let mut last: Option<NaiveDate> = None;
    for var in config.required_variables() {
        let Some(s) = climate.series.get(&var) else {
            return Vec::new();
        };
        let (Some(a), Some(b)) = (s.first_date(), s.last_date()) else {
            return Vec::new();
        };
        first = Some(first.map_or(a, |f| f.max(a)));
        last = Some(last.map_or(b, |l| l.min(b)));
    }
    let (Some(first), Some(last)) = (first, last) else {
        return Vec::new();
    };
    (first.year()..=last.year() + 1)
        .filter(|&y| {
            config.windows.iter().all(|w| {
                let (s, e) = w.span(y);
                s >= first && e <= last
            })
        })
        .collect()
}

/// Featurizes every covered (county, harvest year), sorted by county then year.
pub fn featurize_all(climates: &[CountyClimate], config: &PhenologyConfig) -> Result<Vec<FeatureVectorRaw>> {
    config.validate()?;
    let jobs: Vec<(&CountyClimate, i32)> = climates
        .iter()
        .flat_map(|c| covered_years(c, config).into_iter().map(move |y| (c, y)))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|(c, y)| featurize_year(c, config, *y))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| (a.county.as_str(), a.year).cmp(&(b.county.as_str(), b.year)));
    Ok(rows)
}

/// Renders raw features as `county,year,<feature columns>`.
pub fn features_csv(meta: &Metadata, names: &[String], rows: &[FeatureVectorRaw]) -> Result<String> {
    let mut header = vec!["county", "year"];
    header.extend(names.iter().map(String::as_str));
    io::render_csv(
        meta,
        &header,
        rows.iter().map(|r| {
            let mut rec = vec![r.county.clone(), r.year.to_string()];
            rec.extend(r.values.iter().map(|v| fmt_f64(*v)));
            rec
        }),
    )
}

/// Parses a raw feature CSV, returning feature names and rows.
pub fn parse_features(text: &str, location: &str) -> Result<(Vec<String>, Vec<FeatureVectorRaw>)> {
    let mut rdr = io::csv_reader(text);
    let headers = rdr.headers().map_err(|e| csv_err(location, e))?.clone();
    io::expect_header(location, &headers, &["county", "year"])?;
    let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    if names.len() != N_FEATURES {
        return Err(Error::schema(
            location,
            format!("expected {N_FEATURES} feature columns, found {}", names.len()),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(location, e))?;
        let loc = format!("{location} row {}", i + 1);
        let values = names
            .iter()
            .enumerate()
            .map(|(j, n)| io::parse_f64(&loc, n, &rec[j + 2]))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureVectorRaw {
            county: rec[0].to_string(),
            year: io::parse_i32(&loc, "year", &rec[1])?,
            values,
        });
    }
    Ok((names, rows))
}

pub fn load_features(path: &Path) -> Result<(Vec<String>, Vec<FeatureVectorRaw>)> {
    parse_features(&io::read_text(path)?, &path.display().to_string())
}
