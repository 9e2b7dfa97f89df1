//! Gridded daily climate data, orchard crop masks, and area-weighted
//! aggregation of grid cells to county-level daily series.
//!
//! Grids are stored as a TOML manifest plus a long-format CSV with one
//! `date,cell_id,value` row per (date, cell). Cell ids are row-major:
//! `cell_id = row * n_cols + col`, with row 0 at the southern edge.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, csv_err, expect_header, fmt_f64, Metadata};
use crate::roster;

pub const DEFAULT_CELL_SIZE: f64 = 1.0 / 24.0;

fn default_cell_size() -> f64 {
    DEFAULT_CELL_SIZE
}

/// Physical quantity carried by a grid, used for range validation and to
/// choose the default aggregation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Temperature,
    Precipitation,
    SpecificHumidity,
    Wind,
    ReferenceEt,
    Other,
}

impl Quantity {
    /// Guesses the quantity from a GridMET-style variable name.
    pub fn infer(variable: &str) -> Quantity {
        match variable.to_ascii_lowercase().as_str() {
            "tmin" | "tmax" | "tmmn" | "tmmx" | "tmean" | "tavg" => Quantity::Temperature,
            "pr" | "precip" | "prcp" | "precipitation" => Quantity::Precipitation,
            "sph" | "huss" | "specific_humidity" => Quantity::SpecificHumidity,
            "vs" | "wind" | "ws" => Quantity::Wind,
            "etr" | "eto" | "pet" => Quantity::ReferenceEt,
            _ => Quantity::Other,
        }
    }

    fn check(self, v: f64) -> std::result::Result<(), String> {
        let ok = match self {
            Quantity::Temperature => (-90.0..=60.0).contains(&v),
            Quantity::Precipitation | Quantity::Wind | Quantity::ReferenceEt => v >= 0.0,
            Quantity::SpecificHumidity => (0.0..=0.05).contains(&v),
            Quantity::Other => true,
        };
        if ok && v.is_finite() {
            Ok(())
        } else {
            Err(format!("value {v} out of range for {self:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub variable_name: String,
    pub unit: String,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    pub date_start: NaiveDate,
    pub date_end: NaiveDate,
    /// Overrides the quantity inferred from `variable_name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<Quantity>,
}

impl GridManifest {
    pub fn validate(&self) -> Result<()> {
        let loc = "grid manifest";
        if self.variable_name.trim().is_empty() {
            return Err(Error::validation(loc, "variable_name is empty"));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::validation(loc, "cell_size must be positive"));
        }
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::validation(loc, "n_rows and n_cols must be at least 1"));
        }
        if self.date_start > self.date_end {
            return Err(Error::validation(loc, "date_start is after date_end"));
        }
        Ok(())
    }

    pub fn quantity(&self) -> Quantity {
        self.quantity
            .unwrap_or_else(|| Quantity::infer(&self.variable_name))
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn n_dates(&self) -> usize {
        (self.date_end - self.date_start).num_days() as usize + 1
    }

    pub fn cell_id(&self, row: usize, col: usize) -> usize {
        row * self.n_cols + col
    }

    /// Latitude and longitude of the center of `cell_id`.
    pub fn cell_center(&self, cell_id: usize) -> (f64, f64) {
        let row = (cell_id / self.n_cols) as f64;
        let col = (cell_id % self.n_cols) as f64;
        (
            self.origin_lat + (row + 0.5) * self.cell_size,
            self.origin_lon + (col + 0.5) * self.cell_size,
        )
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: GridManifest = toml::from_str(text)
            .map_err(|e| Error::schema("grid manifest", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// Daily values of one variable over every cell of a grid. `NaN` marks a
/// missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSeries {
    manifest: GridManifest,
    // date-major: values[d * n_cells + cell]
    values: Vec<f64>,
}

impl GridSeries {
    pub fn new(manifest: GridManifest, values: Vec<f64>) -> Result<Self> {
        manifest.validate()?;
        let expected = manifest.n_dates() * manifest.n_cells();
        if values.len() != expected {
            return Err(Error::Dimension {
                expected,
                found: values.len(),
            });
        }
        let q = manifest.quantity();
        for (i, v) in values.iter().enumerate() {
            if v.is_nan() {
                continue;
            }
            q.check(*v).map_err(|m| {
                let d = i / manifest.n_cells();
                let date = manifest.date_start + chrono::Days::new(d as u64);
                Error::validation(format!("date {date}, cell {}", i % manifest.n_cells()), m)
            })?;
        }
        Ok(GridSeries { manifest, values })
    }

    pub fn manifest(&self) -> &GridManifest {
        &self.manifest
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn variable(&self) -> &str {
        &self.manifest.variable_name
    }

    pub fn n_dates(&self) -> usize {
        self.manifest.n_dates()
    }

    pub fn date(&self, index: usize) -> NaiveDate {
        self.manifest.date_start + chrono::Days::new(index as u64)
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        if date < self.manifest.date_start || date > self.manifest.date_end {
            None
        } else {
            Some((date - self.manifest.date_start).num_days() as usize)
        }
    }

    pub fn value(&self, date_index: usize, cell_id: usize) -> f64 {
        self.values[date_index * self.manifest.n_cells() + cell_id]
    }

    /// Renders the long-format data CSV.
    pub fn to_csv(&self) -> String {
        let n_cells = self.manifest.n_cells();
        let mut out = String::with_capacity(self.values.len() * 24);
        out.push_str("date,cell_id,value\n");
        for d in 0..self.n_dates() {
            let date = self.date(d);
            for c in 0..n_cells {
                let _ = writeln!(out, "{date},{c},{}", fmt_f64(self.value(d, c)));
            }
        }
        out
    }

    /// Joins grids of one variable over the same cells whose date ranges
    /// follow each other without gaps.
    pub fn concat(parts: &[GridSeries]) -> Result<GridSeries> {
        let first = parts
            .first()
            .ok_or_else(|| Error::validation("grid concat", "no grids given"))?;
        let m0 = &first.manifest;
        let mut values = first.values.clone();
        let mut end = m0.date_end;
        for p in &parts[1..] {
            let m = &p.manifest;
            let loc = format!("grid concat `{}`", m.variable_name);
            if m.variable_name != m0.variable_name || m.unit != m0.unit {
                return Err(Error::validation(loc, "variables or units differ"));
            }
            if (m.n_rows, m.n_cols) != (m0.n_rows, m0.n_cols)
                || m.origin_lat != m0.origin_lat
                || m.origin_lon != m0.origin_lon
                || m.cell_size != m0.cell_size
            {
                return Err(Error::validation(loc, "grid geometry differs"));
            }
            if m.date_start != end + chrono::Days::new(1) {
                return Err(Error::validation(
                    loc,
                    format!("dates not contiguous: {} then {}", end, m.date_start),
                ));
            }
            values.extend_from_slice(&p.values);
            end = m.date_end;
        }
        let manifest = GridManifest {
            date_end: end,
            ..m0.clone()
        };
        GridSeries::new(manifest, values)
    }

    /// Writes `<dir>/<variable>.toml` and `<dir>/<variable>.csv`.
    pub fn write_pair(&self, dir: &Path) -> Result<()> {
        let var = self.variable();
        io::write_atomic(&dir.join(format!("{var}.toml")), self.manifest.to_toml().as_bytes())?;
        io::write_atomic(&dir.join(format!("{var}.csv")), self.to_csv().as_bytes())
    }
}

/// Reads and validates a grid from its manifest and long-format data file.
pub fn load_grid(manifest_path: &Path, data_path: &Path) -> Result<GridSeries> {
    let manifest = GridManifest::from_toml(&io::read_text(manifest_path)?)
        .map_err(|e| e.context(format!("reading {}", manifest_path.display())))?;
    let text = io::read_text(data_path)?;
    parse_grid_data(manifest, &text, &data_path.display().to_string())
}

pub(crate) fn parse_grid_data(manifest: GridManifest, text: &str, location: &str) -> Result<GridSeries> {
    let n_cells = manifest.n_cells();
    let n_dates = manifest.n_dates();
    let quantity = manifest.quantity();
    let mut values = vec![f64::NAN; n_dates * n_cells];
    let mut seen = vec![false; n_dates * n_cells];
    let mut rdr = io::csv_reader(text);
    let headers = rdr.headers().map_err(|e| csv_err(location, e))?.clone();
    expect_header(location, &headers, &["date", "cell_id", "value"])?;
    let mut count = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(location, e))?;
        let row_loc = format!("{location} row {}", i + 1);
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|_| Error::schema(&row_loc, format!("bad date `{}`", &rec[0])))?;
        let cell: usize = rec[1]
            .parse()
            .map_err(|_| Error::schema(&row_loc, format!("bad cell_id `{}`", &rec[1])))?;
        if cell >= n_cells {
            return Err(Error::validation(&row_loc, format!("cell_id {cell} outside grid of {n_cells} cells")));
        }
        if date < manifest.date_start || date > manifest.date_end {
            return Err(Error::validation(&row_loc, format!("date {date} outside manifest range")));
        }
        let d = (date - manifest.date_start).num_days() as usize;
        let raw = &rec[2];
        let v = if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
            f64::NAN
        } else {
            let v = io::parse_f64(&row_loc, "value", raw)?;
            quantity.check(v).map_err(|m| Error::validation(&row_loc, m))?;
            v
        };
        let slot = d * n_cells + cell;
        if seen[slot] {
            return Err(Error::validation(&row_loc, format!("duplicate entry for {date}, cell {cell}")));
        }
        seen[slot] = true;
        values[slot] = v;
        count += 1;
    }
    if count != n_dates * n_cells {
        return Err(Error::Dimension {
            expected: n_dates * n_cells,
            found: count,
        }
        .context(format!("{location}: data rows vs manifest dates × cells")));
    }
    GridSeries::new(manifest, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub year: i32,
    pub cell_id: usize,
    pub county: String,
    pub area: f64,
}

/// Per-year orchard area by grid cell, with each cell's county.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CropMask {
    entries: Vec<MaskEntry>,
}

impl CropMask {
    pub fn new(entries: Vec<MaskEntry>) -> Result<Self> {
        let mut keys = BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            let loc = format!("mask entry {} (year {}, cell {})", i + 1, e.year, e.cell_id);
            if !(e.area >= 0.0 && e.area.is_finite()) {
                return Err(Error::validation(loc, format!("area {} must be non-negative", e.area)));
            }
            if !roster::is_known(&e.county) {
                return Err(Error::validation(loc, format!("county `{}` not in the roster", e.county)));
            }
            if !keys.insert((e.year, e.cell_id)) {
                return Err(Error::validation(loc, "duplicate (year, cell_id)"));
            }
        }
        Ok(CropMask { entries })
    }

    pub fn entries(&self) -> &[MaskEntry] {
        &self.entries
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.entries.iter().map(|e| e.year).collect()
    }

    pub fn check_bounds(&self, manifest: &GridManifest) -> Result<()> {
        let n = manifest.n_cells();
        match self.entries.iter().find(|e| e.cell_id >= n) {
            Some(e) => Err(Error::validation(
                format!("mask year {}, cell {}", e.year, e.cell_id),
                format!("cell outside grid of {n} cells"),
            )),
            None => Ok(()),
        }
    }

    /// The mask year used for `year`: `year` itself if present, else the
    /// nearest earlier year with entries, else the earliest year on record.
    pub fn effective_year(&self, year: i32) -> Result<i32> {
        let years = self.years();
        if years.is_empty() {
            return Err(Error::validation("crop mask", "no entries for any year"));
        }
        Ok(years
            .range(..=year)
            .next_back()
            .copied()
            .unwrap_or_else(|| *years.iter().next().unwrap()))
    }

    /// Counties and their `(cell_id, area)` lists for `year` (after
    /// fallback), sorted by county then cell so that floating-point
    /// reductions are independent of entry order.
    pub fn cells_by_county(&self, year: i32) -> Result<BTreeMap<String, Vec<(usize, f64)>>> {
        let eff = self.effective_year(year)?;
        let mut out: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.year == eff) {
            out.entry(e.county.clone()).or_default().push((e.cell_id, e.area));
        }
        for cells in out.values_mut() {
            cells.sort_by_key(|c| c.0);
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("year,cell_id,county,area_acres\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{}", e.year, e.cell_id, e.county, fmt_f64(e.area));
        }
        out
    }
}

pub fn load_mask(path: &Path) -> Result<CropMask> {
    let text = io::read_text(path)?;
    parse_mask(&text, &path.display().to_string())
}

pub(crate) fn parse_mask(text: &str, location: &str) -> Result<CropMask> {
    let mut rdr = io::csv_reader(text);
    let headers = rdr.headers().map_err(|e| csv_err(location, e))?.clone();
    expect_header(location, &headers, &["year", "cell_id", "county", "area_acres"])?;
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(location, e))?;
        let loc = format!("{location} row {}", i + 1);
        entries.push(MaskEntry {
            year: io::parse_i32(&loc, "year", &rec[0])?,
            cell_id: rec[1]
                .parse()
                .map_err(|_| Error::schema(&loc, format!("bad cell_id `{}`", &rec[1])))?,
            county: rec[2].to_string(),
            area: io::parse_f64(&loc, "area_acres", &rec[3])?,
        });
    }
    CropMask::new(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    AreaWeightedMean,
    /// For accumulated quantities (precipitation, ET). Spatially this is the
    /// same area-weighted mean of per-cell daily totals; accumulation over
    /// time happens inside the phenology windows.
    AreaWeightedSum,
}

impl AggregationMode {
    pub fn for_quantity(q: Quantity) -> Self {
        match q {
            Quantity::Precipitation | Quantity::ReferenceEt => AggregationMode::AreaWeightedSum,
            _ => AggregationMode::AreaWeightedMean,
        }
    }
}

/// One county's daily values of one variable. `NaN` marks a missing day.
#[derive(Debug, Clone, PartialEq)]
pub struct CountyDailySeries {
    pub county: String,
    pub variable_name: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl CountyDailySeries {
    pub fn new(county: String, variable_name: String, dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::Dimension {
                expected: dates.len(),
                found: values.len(),
            });
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::validation(
                format!("{county}/{variable_name}"),
                format!("dates not strictly increasing at {}", w[1]),
            ));
        }
        Ok(CountyDailySeries {
            county,
            variable_name,
            dates,
            values,
        })
    }

    /// Value on `date`, `None` when the date is absent or missing.
    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.dates
            .binary_search(&date)
            .ok()
            .map(|i| self.values[i])
            .filter(|v| !v.is_nan())
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.dates.first().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.dates.last().copied()
    }
}

fn weighted_mean(grid: &GridSeries, d: usize, cells: &[(usize, f64)]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(c, a) in cells {
        let v = grid.value(d, c);
        if !v.is_nan() && a > 0.0 {
            num += v * a;
            den += a;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}

/// Aggregates every date of `grid` to county series using the mask of
/// `year` (with the fallback rule of [`CropMask::effective_year`]).
pub fn aggregate_to_county(
    grid: &GridSeries,
    mask: &CropMask,
    year: i32,
    mode: AggregationMode,
) -> Result<Vec<CountyDailySeries>> {
    aggregate_range(grid, mask, year, mode, 0..grid.n_dates())
}

/// As [`aggregate_to_county`], over the date indices in `range` only.
pub fn aggregate_range(
    grid: &GridSeries,
    mask: &CropMask,
    year: i32,
    // Both modes share the same spatial reduction; see `AggregationMode`.
    _mode: AggregationMode,
    range: std::ops::Range<usize>,
) -> Result<Vec<CountyDailySeries>> {
    mask.check_bounds(grid.manifest())?;
    let by_county = mask.cells_by_county(year)?;
    let mut out = Vec::new();
    for (county, cells) in by_county {
        let total: f64 = cells.iter().map(|c| c.1).sum();
        if total <= 0.0 {
            continue;
        }
        let dates: Vec<NaiveDate> = range.clone().map(|d| grid.date(d)).collect();
        let values: Vec<f64> = range.clone().map(|d| weighted_mean(grid, d, &cells)).collect();
        out.push(CountyDailySeries::new(
            county,
            grid.variable().to_string(),
            dates,
            values,
        )?);
    }
    Ok(out)
}

/// Aggregates the whole grid, using for each date the mask of that date's
/// calendar year. Counties absent from a year's mask have no dates there.
pub fn aggregate_by_calendar_year(
    grid: &GridSeries,
    mask: &CropMask,
    mode: AggregationMode,
) -> Result<Vec<CountyDailySeries>> {
    let m = grid.manifest();
    let mut acc: BTreeMap<String, (Vec<NaiveDate>, Vec<f64>)> = BTreeMap::new();
    for year in m.date_start.year()..=m.date_end.year() {
        let first = NaiveDate::from_ymd_opt(year, 1, 1).unwrap().max(m.date_start);
        let last = NaiveDate::from_ymd_opt(year, 12, 31).unwrap().min(m.date_end);
        let lo = grid.date_index(first).unwrap();
        let hi = grid.date_index(last).unwrap() + 1;
        for s in aggregate_range(grid, mask, year, mode, lo..hi)? {
            let slot = acc.entry(s.county).or_default();
            slot.0.extend(s.dates);
            slot.1.extend(s.values);
        }
    }
    acc.into_iter()
        .map(|(county, (dates, values))| {
            CountyDailySeries::new(county, grid.variable().to_string(), dates, values)
        })
        .collect()
}

pub const COUNTY_SERIES_HEADER: [&str; 4] = ["county", "variable", "date", "value"];

/// Renders county series as `county,variable,date,value`.
pub fn county_series_csv(meta: &Metadata, series: &[CountyDailySeries]) -> String {
    let mut out = meta.render();
    out.push_str("county,variable,date,value\n");
    for s in series {
        for (d, v) in s.dates.iter().zip(&s.values) {
            let _ = writeln!(out, "{},{},{},{}", s.county, s.variable_name, d, fmt_f64(*v));
        }
    }
    out
}

pub fn load_county_series(path: &Path) -> Result<Vec<CountyDailySeries>> {
    let text = io::read_text(path)?;
    parse_county_series(&text, &path.display().to_string())
}

pub(crate) fn parse_county_series(text: &str, location: &str) -> Result<Vec<CountyDailySeries>> {
    let mut rdr = io::csv_reader(text);
    let headers = rdr.headers().map_err(|e| csv_err(location, e))?.clone();
    expect_header(location, &headers, &COUNTY_SERIES_HEADER)?;
    let mut acc: BTreeMap<(String, String), (Vec<NaiveDate>, Vec<f64>)> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(location, e))?;
        let loc = format!("{location} row {}", i + 1);
        let date = NaiveDate::parse_from_str(&rec[2], "%Y-%m-%d")
            .map_err(|_| Error::schema(&loc, format!("bad date `{}`", &rec[2])))?;
        let v = if rec[3].eq_ignore_ascii_case("na") || rec[3].is_empty() {
            f64::NAN
        } else {
            io::parse_f64(&loc, "value", &rec[3])?
        };
        let slot = acc.entry((rec[0].to_string(), rec[1].to_string())).or_default();
        slot.0.push(date);
        slot.1.push(v);
    }
    acc.into_iter()
        .map(|((county, var), (dates, values))| CountyDailySeries::new(county, var, dates, values))
        .collect()
}
