//! Model-ready feature tables.
//!
//! Column layout (58 columns for a 13-feature roster):
//!
//! | range   | content                                        |
//! |---------|------------------------------------------------|
//! | 0..13   | raw phenology features                         |
//! | 13..26  | squares of the raw features                    |
//! | 26..42  | county indicators, in [`roster::COUNTIES`] order |
//! | 42..58  | per-county trend, `year - 1980` in own slot    |
//!
//! The table keeps raw values. Z-scoring is a separate [`Normalizer`] fit
//! on training rows and applied to the first 26 columns only.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, csv_err, fmt_f64, Metadata};
use crate::learners::Matrix;
use crate::phenology::{FeatureVectorRaw, N_FEATURES};
use crate::rng;
use crate::roster::{self, COUNTIES, N_COUNTIES};

/// First year of the trend variable.
pub const TREND_ORIGIN: i32 = 1980;
/// Last year of observed technology; frozen-technology runs cap the trend here.
pub const TECH_FREEZE_YEAR: i32 = 2020;

pub const N_CLIMATE_COLUMNS: usize = 2 * N_FEATURES;
pub const N_COLUMNS: usize = N_CLIMATE_COLUMNS + 2 * N_COUNTIES;

/// Technology counterfactual applied to the trend columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tech {
    /// Trend keeps growing with the calendar year.
    #[serde(rename = "wtech")]
    WTech,
    /// Trend frozen at its [`TECH_FREEZE_YEAR`] value.
    #[serde(rename = "wotech")]
    WOTech,
}

impl Tech {
    pub fn trend(self, year: i32) -> f64 {
        let t = year - TREND_ORIGIN;
        match self {
            Tech::WTech => f64::from(t),
            Tech::WOTech => f64::from(t.min(TECH_FREEZE_YEAR - TREND_ORIGIN)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tech::WTech => "wtech",
            Tech::WOTech => "wotech",
        }
    }
}

impl std::str::FromStr for Tech {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wtech" => Ok(Tech::WTech),
            "wotech" => Ok(Tech::WOTech),
            _ => Err(Error::config(format!("unknown technology scenario `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldRecord {
    pub county: String,
    pub year: i32,
    /// ton/acre
    pub yield_tpa: f64,
    /// acres
    pub planted_area: f64,
}

impl YieldRecord {
    pub fn validate(&self) -> Result<()> {
        let loc = format!("yield record {} {}", self.county, self.year);
        if !(self.yield_tpa >= 0.0 && self.yield_tpa.is_finite()) {
            return Err(Error::validation(loc, format!("yield {} must be non-negative", self.yield_tpa)));
        }
        if !(self.planted_area >= 0.0 && self.planted_area.is_finite()) {
            return Err(Error::validation(loc, format!("planted area {} must be non-negative", self.planted_area)));
        }
        if !(1980..=2100).contains(&self.year) {
            return Err(Error::validation(loc, "year outside 1980..=2100"));
        }
        roster::county_index(&self.county)?;
        Ok(())
    }
}

pub const YIELDS_HEADER: [&str; 4] = ["county", "year", "yield_ton_per_acre", "planted_area_acres"];

pub fn yields_csv(meta: &Metadata, records: &[YieldRecord]) -> Result<String> {
    io::render_csv(
        meta,
        &YIELDS_HEADER,
        records.iter().map(|r| {
            [
                r.county.clone(),
                r.year.to_string(),
                fmt_f64(r.yield_tpa),
                fmt_f64(r.planted_area),
            ]
        }),
    )
}

pub fn parse_yields(text: &str, location: &str) -> Result<Vec<YieldRecord>> {
    let mut rdr = io::csv_reader(text);
    let headers = rdr.headers().map_err(|e| csv_err(location, e))?.clone();
    io::expect_header(location, &headers, &YIELDS_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(location, e))?;
        let loc = format!("{location} row {}", i + 1);
        let r = YieldRecord {
            county: rec[0].to_string(),
            year: io::parse_i32(&loc, "year", &rec[1])?,
            yield_tpa: io::parse_f64(&loc, "yield_ton_per_acre", &rec[2])?,
            planted_area: io::parse_f64(&loc, "planted_area_acres", &rec[3])?,
        };
        r.validate().map_err(|e| e.context(loc))?;
        out.push(r);
    }
    Ok(out)
}

pub fn load_yields(path: &Path) -> Result<Vec<YieldRecord>> {
    parse_yields(&io::read_text(path)?, &path.display().to_string())
}

/// Column names for a feature roster.
pub fn column_names(feature_names: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = feature_names.to_vec();
    cols.extend(feature_names.iter().map(|n| format!("{n}_sq")));
    let slug = |c: &str| c.replace(' ', "_");
    cols.extend(COUNTIES.iter().map(|c| format!("county_{}", slug(c))));
    cols.extend(COUNTIES.iter().map(|c| format!("trend_{}", slug(c))));
    cols
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub county: String,
    pub year: i32,
    pub x: Vec<f64>,
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub column_names: Vec<String>,
    pub rows: Vec<TableRow>,
}

/// Builds one raw design row.
pub fn design_row(raw: &[f64], county: &str, year: i32, tech: Tech) -> Result<Vec<f64>> {
    if raw.len() != N_FEATURES {
        return Err(Error::Dimension {
            expected: N_FEATURES,
            found: raw.len(),
        });
    }
    let ci = roster::county_index(county)?;
    let mut x = Vec::with_capacity(N_COLUMNS);
    x.extend_from_slice(raw);
    x.extend(raw.iter().map(|v| v * v));
    x.extend((0..N_COUNTIES).map(|i| if i == ci { 1.0 } else { 0.0 }));
    let t = tech.trend(year);
    x.extend((0..N_COUNTIES).map(|i| if i == ci { t } else { 0.0 }));
    Ok(x)
}

/// Joins raw feature rows with yields into a table with growing trends.
pub fn build_table(feature_names: &[String], raw: &[FeatureVectorRaw], yields: &[YieldRecord]) -> Result<FeatureTable> {
    build_table_with(feature_names, raw, yields, Tech::WTech)
}

/// As [`build_table`], with the trend columns following `tech`.
pub fn build_table_with(
    feature_names: &[String],
    raw: &[FeatureVectorRaw],
    yields: &[YieldRecord],
    tech: Tech,
) -> Result<FeatureTable> {
    if feature_names.len() != N_FEATURES {
        return Err(Error::config(format!(
            "expected {N_FEATURES} feature names, found {}",
            feature_names.len()
        )));
    }
    let mut keys = BTreeSet::new();
    let mut targets = std::collections::HashMap::new();
    for y in yields {
        if targets.insert((y.county.as_str(), y.year), y.yield_tpa).is_some() {
            return Err(Error::validation(
                format!("yields {} {}", y.county, y.year),
                "duplicate (county, year)",
            ));
        }
    }
    let mut rows = Vec::with_capacity(raw.len());
    for r in raw {
        if !keys.insert((r.county.clone(), r.year)) {
            return Err(Error::validation(
                format!("features {} {}", r.county, r.year),
                "duplicate (county, year)",
            ));
        }
        let x = design_row(&r.values, &r.county, r.year, tech)
            .map_err(|e| e.context(format!("features {} {}", r.county, r.year)))?;
        rows.push(TableRow {
            county: r.county.clone(),
            year: r.year,
            x,
            y: targets.get(&(r.county.as_str(), r.year)).copied(),
        });
    }
    rows.sort_by(|a, b| (a.county.as_str(), a.year).cmp(&(b.county.as_str(), b.year)));
    Ok(FeatureTable {
        column_names: column_names(feature_names),
        rows,
    })
}

impl FeatureTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    /// Indices of rows that carry a target.
    pub fn labelled_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.rows[i].y.is_some()).collect()
    }

    /// Raw design matrix for the selected rows.
    pub fn matrix(&self, rows: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(0, self.n_cols());
        for &r in rows {
            m.push_row(&self.rows[r].x);
        }
        m
    }

    /// Targets of the selected rows.
    pub fn targets(&self, rows: &[usize]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|&r| {
                self.rows[r].y.ok_or_else(|| {
                    Error::validation(
                        format!("row {} {}", self.rows[r].county, self.rows[r].year),
                        "no yield target",
                    )
                })
            })
            .collect()
    }

    pub fn to_csv(&self, meta: &Metadata) -> Result<String> {
        let mut header: Vec<&str> = vec!["county", "year"];
        header.extend(self.column_names.iter().map(String::as_str));
        header.push("yield");
        io::render_csv(
            meta,
            &header,
            self.rows.iter().map(|r| {
                let mut rec = vec![r.county.clone(), r.year.to_string()];
                rec.extend(r.x.iter().map(|v| fmt_f64(*v)));
                rec.push(r.y.map(fmt_f64).unwrap_or_default());
                rec
            }),
        )
    }

    pub fn parse_csv(text: &str, location: &str) -> Result<Self> {
        let mut rdr = io::csv_reader(text);
        let headers = rdr.headers().map_err(|e| csv_err(location, e))?.clone();
        io::expect_header(location, &headers, &["county", "year"])?;
        let n = headers.len();
        if n < 3 || &headers[n - 1] != "yield" {
            return Err(Error::schema(location, "last column must be `yield`"));
        }
        let column_names: Vec<String> = headers.iter().skip(2).take(n - 3).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(location, e))?;
            let loc = format!("{location} row {}", i + 1);
            let x = (2..n - 1)
                .map(|j| io::parse_f64(&loc, &headers[j], &rec[j]))
                .collect::<Result<Vec<_>>>()?;
            let y = match &rec[n - 1] {
                "" => None,
                raw => Some(io::parse_f64(&loc, "yield", raw)?),
            };
            rows.push(TableRow {
                county: rec[0].to_string(),
                year: io::parse_i32(&loc, "year", &rec[1])?,
                x,
                y,
            });
        }
        Ok(FeatureTable { column_names, rows })
    }
}

/// Per-column z-scoring of the climate columns; other columns pass through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns at or beyond this index are left untouched.
    pub n_normalized: usize,
    pub n_training_rows: usize,
    pub fitted_on_training_only: bool,
}

/// Fits means and population standard deviations on `training_rows`.
///
/// A column that is constant over the training rows gets `std = 1`, so it
/// maps to zeros instead of dividing by zero.
pub fn fit_normalizer(table: &FeatureTable, training_rows: &[usize]) -> Result<Normalizer> {
    let n_normalized = N_CLIMATE_COLUMNS.min(table.n_cols());
    fit_columns(&table.matrix(training_rows), n_normalized, training_rows.len() < table.n_rows())
}

pub(crate) fn fit_columns(x: &Matrix, n_normalized: usize, training_only: bool) -> Result<Normalizer> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::validation("normalizer", "no training rows"));
    }
    let mut mean = Vec::with_capacity(n_normalized);
    let mut std = Vec::with_capacity(n_normalized);
    for j in 0..n_normalized {
        let m = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x.get(i, j) - m).powi(2)).sum::<f64>() / n as f64;
        let mut s = var.sqrt();
        if s <= 1e-12 * (1.0 + m.abs()) {
            log::warn!("column {j} is constant over training rows; centering only");
            s = 1.0;
        }
        mean.push(m);
        std.push(s);
    }
    Ok(Normalizer {
        mean,
        std,
        n_normalized,
        n_training_rows: n,
        fitted_on_training_only: training_only,
    })
}

impl Normalizer {
    pub fn transform_row(&self, x: &mut [f64]) {
        for j in 0..self.n_normalized {
            x[j] = (x[j] - self.mean[j]) / self.std[j];
        }
    }

    pub fn inverse_row(&self, x: &mut [f64]) {
        for j in 0..self.n_normalized {
            x[j] = x[j] * self.std[j] + self.mean[j];
        }
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() < self.n_normalized {
            return Err(Error::Dimension {
                expected: self.n_normalized,
                found: x.cols(),
            });
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            self.transform_row(out.row_mut(i));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitKind {
    KFold { k: usize, repeats: usize },
    Holdout { test_fraction: f64 },
}

/// Row assignments for cross-validation or a train/test split. Row indices
/// refer to positions in the slice given to [`make_split`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
    /// KFold: `assignments[repeat][row]` is the row's fold.
    /// Holdout: a single vector with 1 for test rows and 0 for training rows.
    pub assignments: Vec<Vec<usize>>,
}

/// Builds a deterministic split over `n_rows` rows.
pub fn make_split(n_rows: usize, kind: SplitKind, seed: u64) -> Result<SplitPlan> {
    use rand::seq::SliceRandom;
    let assignments = match kind {
        SplitKind::KFold { k, repeats } => {
            if k < 2 {
                return Err(Error::config(format!("k-fold needs k >= 2, got {k}")));
            }
            if repeats < 1 {
                return Err(Error::config("k-fold needs at least one repeat"));
            }
            if k > n_rows {
                return Err(Error::validation(
                    "k-fold split",
                    format!("{k} folds requested for {n_rows} rows"),
                ));
            }
            (0..repeats)
                .map(|r| {
                    let mut perm: Vec<usize> = (0..n_rows).collect();
                    perm.shuffle(&mut rng::rng_from(rng::derive_indexed(seed, "kfold", r as u64)));
                    let mut folds = vec![0; n_rows];
                    for (pos, &row) in perm.iter().enumerate() {
                        folds[row] = pos % k;
                    }
                    folds
                })
                .collect()
        }
        SplitKind::Holdout { test_fraction } => {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(Error::config(format!("test fraction {test_fraction} outside (0, 1)")));
            }
            let n_train = ((1.0 - test_fraction) * n_rows as f64).round() as usize;
            if n_train == 0 || n_train >= n_rows {
                return Err(Error::validation(
                    "holdout split",
                    format!("{n_rows} rows cannot be split at test fraction {test_fraction}"),
                ));
            }
            let mut perm: Vec<usize> = (0..n_rows).collect();
            perm.shuffle(&mut rng::rng_for(seed, "holdout"));
            let mut test = vec![0; n_rows];
            for &row in &perm[n_train..] {
                test[row] = 1;
            }
            vec![test]
        }
    };
    Ok(SplitPlan {
        kind,
        seed,
        assignments,
    })
}

impl SplitPlan {
    pub fn n_rows(&self) -> usize {
        self.assignments.first().map_or(0, Vec::len)
    }

    /// `(train, held_out)` row lists for every fold of `repeat`.
    pub fn folds(&self, repeat: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
        let k = match self.kind {
            SplitKind::KFold { k, .. } => k,
            SplitKind::Holdout { .. } => 2,
        };
        let a = &self.assignments[repeat];
        (0..k)
            .map(|f| {
                let (held, train): (Vec<usize>, Vec<usize>) = (0..a.len()).partition(|&i| a[i] == f);
                (train, held)
            })
            .collect()
    }

    pub fn train_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.assignments[0][i] == 0).collect()
    }

    pub fn test_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.assignments[0][i] == 1).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names() -> Vec<String> {
        (0..N_FEATURES).map(|i| format!("f{i}")).collect()
    }

    fn raw(county: &str, year: i32, v: f64) -> FeatureVectorRaw {
        FeatureVectorRaw {
            county: county.into(),
            year,
            values: vec![v; N_FEATURES],
        }
    }

    fn yield_rec(county: &str, year: i32, y: f64) -> YieldRecord {
        YieldRecord {
            county: county.into(),
            year,
            yield_tpa: y,
            planted_area: 100.0,
        }
    }

    #[test]
    fn squares_indicator_and_trend() {
        let t = build_table(&names(), &[raw("Kern", 2000, 3.0)], &[yield_rec("Kern", 2000, 1.2)]).unwrap();
        let row = &t.rows[0];
        assert_eq!(row.x.len(), N_COLUMNS);
        assert_eq!(row.x[N_FEATURES], 9.0);
        let kern = roster::county_index("Kern").unwrap();
        for i in 0..N_COUNTIES {
            let ind = row.x[N_CLIMATE_COLUMNS + i];
            let trend = row.x[N_CLIMATE_COLUMNS + N_COUNTIES + i];
            if i == kern {
                assert_eq!((ind, trend), (1.0, 20.0));
            } else {
                assert_eq!((ind, trend), (0.0, 0.0));
            }
        }
        assert_eq!(row.y, Some(1.2));
        assert_eq!(t.column_names[N_CLIMATE_COLUMNS + 8], "county_San_Joaquin");
    }

    #[test]
    fn full_roster_table_shape() {
        let mut raws = Vec::new();
        let mut ys = Vec::new();
        for c in COUNTIES {
            for year in 1980..=2020 {
                raws.push(raw(c, year, 1.0));
                ys.push(yield_rec(c, year, 1.0));
            }
        }
        let t = build_table(&names(), &raws, &ys).unwrap();
        assert_eq!((t.n_rows(), t.n_cols()), (656, 58));
    }

    #[test]
    fn table_errors_and_prediction_rows() {
        assert!(build_table(&names(), &[raw("Atlantis", 2000, 1.0)], &[]).is_err());
        assert!(build_table(&names(), &[raw("Kern", 2000, 1.0), raw("Kern", 2000, 2.0)], &[]).is_err());
        let t = build_table(&names(), &[raw("Kern", 2030, 1.0)], &[]).unwrap();
        assert_eq!(t.rows[0].y, None);
        assert!(t.labelled_rows().is_empty());
    }

    #[test]
    fn rows_sorted_by_county_then_year() {
        let t = build_table(
            &names(),
            &[raw("Kern", 2001, 1.0), raw("Butte", 2002, 1.0), raw("Kern", 2000, 1.0)],
            &[],
        )
        .unwrap();
        let keys: Vec<_> = t.rows.iter().map(|r| (r.county.as_str(), r.year)).collect();
        assert_eq!(keys, vec![("Butte", 2002), ("Kern", 2000), ("Kern", 2001)]);
    }

    #[test]
    fn tech_trend_freeze() {
        assert_eq!(Tech::WOTech.trend(2050), 40.0);
        assert_eq!(Tech::WTech.trend(2050), 70.0);
        assert_eq!(Tech::WOTech.trend(2010), Tech::WTech.trend(2010));
    }

    #[test]
    fn normalizer_examples() {
        let mut m = Matrix::zeros(0, 2);
        for v in [1.0, 2.0, 3.0] {
            m.push_row(&[v, 5.0]);
        }
        let n = fit_columns(&m, 2, true).unwrap();
        assert!((n.mean[0] - 2.0).abs() < 1e-15);
        assert!((n.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((n.std[0] - 0.8165).abs() < 1e-4);
        let t = n.transform(&m).unwrap();
        let col: Vec<f64> = (0..3).map(|i| t.get(i, 0)).collect();
        for (a, b) in col.iter().zip([-1.224744871391589, 0.0, 1.224744871391589]) {
            assert!((a - b).abs() < 1e-12);
        }
        for i in 0..3 {
            assert_eq!(t.get(i, 1), 0.0);
        }
    }

    #[test]
    fn normalizer_leaves_indicator_columns_alone() {
        let raws: Vec<_> = (0..5).map(|i| raw("Kern", 2000 + i, f64::from(i) * 1.5)).collect();
        let t = build_table(&names(), &raws, &[]).unwrap();
        let rows: Vec<usize> = (0..5).collect();
        let n = fit_normalizer(&t, &rows[..3]).unwrap();
        assert!(n.fitted_on_training_only);
        let x = n.transform(&t.matrix(&rows)).unwrap();
        for i in 0..5 {
            for j in N_CLIMATE_COLUMNS..N_COLUMNS {
                assert_eq!(x.get(i, j), t.rows[i].x[j]);
            }
        }
        let full = fit_normalizer(&t, &rows).unwrap();
        let z = full.transform(&t.matrix(&rows)).unwrap();
        for j in 0..N_CLIMATE_COLUMNS {
            let mean = (0..5).map(|i| z.get(i, j)).sum::<f64>() / 5.0;
            let var = (0..5).map(|i| (z.get(i, j) - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-12 && (var.sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn splits_match_training_fractions() {
        let kf = make_split(100, SplitKind::KFold { k: 5, repeats: 1 }, 7).unwrap();
        for (train, held) in kf.folds(0) {
            assert_eq!(train.len(), 80);
            assert_eq!(held.len(), 20);
        }
        let ho = make_split(100, SplitKind::Holdout { test_fraction: 0.3 }, 7).unwrap();
        assert_eq!(ho.train_rows().len(), 70);
        assert_eq!(ho.test_rows().len(), 30);
        assert_eq!(ho, make_split(100, SplitKind::Holdout { test_fraction: 0.3 }, 7).unwrap());
        assert_eq!(kf, make_split(100, SplitKind::KFold { k: 5, repeats: 1 }, 7).unwrap());
        assert!(make_split(3, SplitKind::KFold { k: 5, repeats: 1 }, 7).is_err());
        assert!(make_split(10, SplitKind::KFold { k: 1, repeats: 1 }, 7).is_err());
        assert!(make_split(10, SplitKind::Holdout { test_fraction: 1.0 }, 7).is_err());
    }

    #[test]
    fn yields_csv_roundtrip_and_validation() {
        let recs = vec![yield_rec("Kern", 2000, 1.25), yield_rec("San Joaquin", 2001, 0.9)];
        let text = yields_csv(&Metadata::tool(), &recs).unwrap();
        assert_eq!(parse_yields(&text, "mem").unwrap(), recs);
        let bad = "county,year,yield_ton_per_acre,planted_area_acres\nKern,2000,-1,10\n";
        assert!(parse_yields(bad, "mem").is_err());
        let early = "county,year,yield_ton_per_acre,planted_area_acres\nKern,1975,1,10\n";
        assert!(parse_yields(early, "mem").is_err());
    }

    #[test]
    fn table_csv_roundtrip() {
        let t = build_table(&names(), &[raw("Kern", 2000, 0.1), raw("Kern", 2001, 0.2)], &[yield_rec("Kern", 2000, 1.0)]).unwrap();
        let text = t.to_csv(&Metadata::tool()).unwrap();
        assert_eq!(FeatureTable::parse_csv(&text, "mem").unwrap(), t);
    }

    proptest! {
        #[test]
        fn kfold_partitions_rows(n in 2usize..200, k in 2usize..10, repeats in 1usize..4, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let plan = make_split(n, SplitKind::KFold { k, repeats }, seed).unwrap();
            prop_assert_eq!(plan.assignments.len(), repeats);
            for r in 0..repeats {
                let folds = plan.folds(r);
                let mut all: Vec<usize> = folds.iter().flat_map(|f| f.1.clone()).collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                let sizes: Vec<usize> = folds.iter().map(|f| f.1.len()).collect();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            }
        }

        #[test]
        fn normalize_roundtrip(values in prop::collection::vec(-1e3f64..1e3, 3..30)) {
            let mut m = Matrix::zeros(0, 1);
            for v in &values {
                m.push_row(&[*v]);
            }
            let n = fit_columns(&m, 1, false).unwrap();
            for v in &values {
                let mut x = [*v];
                n.transform_row(&mut x);
                n.inverse_row(&mut x);
                prop_assert!((x[0] - v).abs() <= 1e-10 * (1.0 + v.abs()));
            }
        }
    }
}
