//! Scenario projection: run a trained ensemble over climate-model members
//! under emission pathways and technology assumptions, reduce members to
//! statewide series, and summarize the ensemble per year.
//!
//! Member data lives in one directory per period holding the usual grid
//! file pairs. The historical period ends the year before [`SEAM_YEAR`];
//! a pathway run reads the historical directory followed by the pathway's.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{self, Tech, YieldRecord};
use crate::error::{Error, Result};
use crate::grid::{self, AggregationMode, CropMask, GridSeries};
use crate::io::{self, fmt_f64, Metadata};
use crate::learners::{r2_score, Matrix};
use crate::phenology::{self, CountyClimate, PhenologyConfig};
use crate::stack::StackEnsemble;

/// First year of the pathway period.
pub const SEAM_YEAR: i32 = 2006;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rcp {
    #[serde(rename = "4.5")]
    Rcp45,
    #[serde(rename = "8.5")]
    Rcp85,
}

impl Rcp {
    pub fn as_str(self) -> &'static str {
        match self {
            Rcp::Rcp45 => "rcp45",
            Rcp::Rcp85 => "rcp85",
        }
    }
}

impl std::str::FromStr for Rcp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "4.5" | "rcp45" | "rcp4.5" => Ok(Rcp::Rcp45),
            "8.5" | "rcp85" | "rcp8.5" => Ok(Rcp::Rcp85),
            other => Err(Error::config(format!("unknown pathway `{other}`; expected 4.5 or 8.5"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberEntry {
    pub id: String,
    pub historical: PathBuf,
    pub rcp45: PathBuf,
    pub rcp85: PathBuf,
}

impl MemberEntry {
    pub fn pathway_dir(&self, rcp: Rcp) -> &Path {
        match rcp {
            Rcp::Rcp45 => &self.rcp45,
            Rcp::Rcp85 => &self.rcp85,
        }
    }
}

/// Climate-model members and their data directories. Relative paths are
/// resolved against the roster file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRoster {
    #[serde(rename = "member")]
    pub members: Vec<MemberEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl MemberRoster {
    pub fn new(members: Vec<MemberEntry>) -> Result<Self> {
        let r = MemberRoster {
            members,
            base_dir: PathBuf::new(),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::config("member roster is empty"));
        }
        let mut seen = BTreeSet::new();
        for m in &self.members {
            if m.id.trim().is_empty() {
                return Err(Error::config("member id is empty"));
            }
            if !seen.insert(m.id.as_str()) {
                return Err(Error::config(format!("duplicate member id `{}`", m.id)));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut r: MemberRoster = toml::from_str(text).map_err(|e| Error::schema("member roster", e.to_string()))?;
        r.base_dir = base_dir.to_path_buf();
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&io::read_text(path)?, base).map_err(|e| e.context(format!("reading {}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::config(e.to_string()))?;
        io::write_atomic(path, text.as_bytes())
    }

    pub fn get(&self, id: &str) -> Result<&MemberEntry> {
        self.members
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| Error::config(format!("member `{id}` not in roster")))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub member_id: String,
    pub rcp: Rcp,
    pub tech: Tech,
    pub first_year: i32,
    pub last_year: i32,
}

impl ScenarioSpec {
    pub fn validate(&self, roster: &MemberRoster) -> Result<()> {
        roster.get(&self.member_id)?;
        if self.first_year > self.last_year {
            return Err(Error::config(format!(
                "scenario years {}..{} are empty",
                self.first_year, self.last_year
            )));
        }
        Ok(())
    }

    /// Label used in output files, e.g. `rcp45-wtech`.
    pub fn label(&self) -> String {
        scenario_label(self.rcp, self.tech)
    }
}

pub fn scenario_label(rcp: Rcp, tech: Tech) -> String {
    format!("{}-{}", rcp.as_str(), tech.as_str())
}

/// One member's climate for one pathway, one grid per variable.
#[derive(Debug, Clone)]
pub struct MemberClimate {
    pub member_id: String,
    pub grids: Vec<GridSeries>,
}

fn load_pair(dir: &Path, var: &str) -> Result<GridSeries> {
    grid::load_grid(&dir.join(format!("{var}.toml")), &dir.join(format!("{var}.csv")))
}

/// Reads `variables` for one member and pathway, joining the historical and
/// pathway periods. When both entries name the same directory it is read once.
pub fn load_member_climate(roster: &MemberRoster, member_id: &str, rcp: Rcp, variables: &[String]) -> Result<MemberClimate> {
    let entry = roster.get(member_id)?;
    let hist = roster.resolve(&entry.historical);
    let path = roster.resolve(entry.pathway_dir(rcp));
    let grids = variables
        .iter()
        .map(|v| {
            let ctx = |e: Error| e.context(format!("member `{member_id}`, variable `{v}`"));
            let h = load_pair(&hist, v).map_err(ctx)?;
            if hist == path {
                return Ok(h);
            }
            let p = load_pair(&path, v).map_err(ctx)?;
            GridSeries::concat(&[h, p]).map_err(ctx)
        })
        .collect::<Result<_>>()?;
    Ok(MemberClimate {
        member_id: member_id.to_string(),
        grids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedYield {
    pub member: String,
    pub county: String,
    pub year: i32,
    pub yield_tpa: f64,
}

/// Raw feature rows for `counties` over `years` built from a member's grids.
pub fn member_features(
    climate: &MemberClimate,
    mask: &CropMask,
    pheno: &PhenologyConfig,
    counties: &[String],
    years: std::ops::RangeInclusive<i32>,
) -> Result<Vec<phenology::FeatureVectorRaw>> {
    let present: BTreeSet<&str> = climate.grids.iter().map(|g| g.variable()).collect();
    for w in &pheno.windows {
        let vars: Vec<&str> = match &w.variable_name {
            Some(v) => vec![v.as_str()],
            None => vec![pheno.tmin_variable.as_str(), pheno.tmax_variable.as_str()],
        };
        for v in vars {
            if !present.contains(v) {
                return Err(Error::validation(
                    format!("member `{}`", climate.member_id),
                    format!("variable `{v}` missing for window `{}`", w.feature_name),
                ));
            }
        }
    }
    let mut series = Vec::new();
    for g in &climate.grids {
        let mode = AggregationMode::for_quantity(g.manifest().quantity());
        series.extend(grid::aggregate_by_calendar_year(g, mask, mode)?);
    }
    let by_county: BTreeMap<String, CountyClimate> =
        CountyClimate::group(series).into_iter().map(|c| (c.county.clone(), c)).collect();
    let mut out = Vec::new();
    for county in counties {
        let cc = by_county.get(county).ok_or_else(|| {
            Error::validation(
                format!("member `{}`", climate.member_id),
                format!("county `{county}` has no cells in the crop mask"),
            )
        })?;
        for year in years.clone() {
            out.push(
                phenology::featurize_year(cc, pheno, year)
                    .map_err(|e| e.context(format!("member `{}`", climate.member_id)))?,
            );
        }
    }
    Ok(out)
}

/// Projects one member under `spec` for every county in `areas`.
pub fn project_member(
    ens: &StackEnsemble,
    climate: &MemberClimate,
    spec: &ScenarioSpec,
    mask: &CropMask,
    pheno: &PhenologyConfig,
    areas: &BTreeMap<String, f64>,
) -> Result<Vec<ProjectedYield>> {
    let counties: Vec<String> = areas.keys().cloned().collect();
    let raw = member_features(climate, mask, pheno, &counties, spec.first_year..=spec.last_year)?;
    let mut x = Matrix::zeros(0, ens.column_names.len());
    for r in &raw {
        x.push_row(&dataset::design_row(&r.values, &r.county, r.year, spec.tech)?);
    }
    let preds = ens.predict(&x)?;
    Ok(raw
        .iter()
        .zip(preds)
        .map(|(r, p)| ProjectedYield {
            member: climate.member_id.clone(),
            county: r.county.clone(),
            year: r.year,
            yield_tpa: p,
        })
        .collect())
}

/// Each county's planted area in its last observed year.
pub fn frozen_areas(yields: &[YieldRecord]) -> BTreeMap<String, f64> {
    let mut last: BTreeMap<String, (i32, f64)> = BTreeMap::new();
    for y in yields {
        let e = last.entry(y.county.clone()).or_insert((y.year, y.planted_area));
        if y.year >= e.0 {
            *e = (y.year, y.planted_area);
        }
    }
    last.into_iter().map(|(c, (_, a))| (c, a)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSeries {
    pub member: String,
    pub years: Vec<i32>,
    pub values: Vec<f64>,
}

/// Area-weighted statewide series of one member.
pub fn statewide_series(projections: &[ProjectedYield], areas: &BTreeMap<String, f64>) -> Result<MemberSeries> {
    let member = projections
        .first()
        .map(|p| p.member.clone())
        .ok_or_else(|| Error::validation("statewide series", "no projections"))?;
    let mut acc: BTreeMap<i32, (f64, f64)> = BTreeMap::new();
    for p in projections {
        if p.member != member {
            return Err(Error::validation("statewide series", "projections mix members"));
        }
        let a = *areas
            .get(&p.county)
            .ok_or_else(|| Error::validation("statewide series", format!("no planted area for `{}`", p.county)))?;
        let e = acc.entry(p.year).or_insert((0.0, 0.0));
        e.0 += a * p.yield_tpa;
        e.1 += a;
    }
    let mut years = Vec::new();
    let mut values = Vec::new();
    for (y, (num, den)) in acc {
        if den <= 0.0 {
            return Err(Error::numerical(format!("total planted area is zero in {y}")));
        }
        years.push(y);
        values.push(num / den);
    }
    Ok(MemberSeries { member, years, values })
}

/// Linear-interpolation quantile of sorted values at `p ∈ [0, 1]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub scenario: String,
    pub members: Vec<String>,
    pub years: Vec<i32>,
    pub mean: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    /// `member_values[year][member]`, members in input order.
    pub member_values: Vec<Vec<f64>>,
}

pub fn summarize_ensemble(scenario: &str, members: &[MemberSeries]) -> Result<ProjectionSummary> {
    let first = members
        .first()
        .ok_or_else(|| Error::validation("ensemble summary", "no members"))?;
    for m in members {
        if m.years != first.years || m.values.len() != m.years.len() {
            return Err(Error::validation(
                "ensemble summary",
                format!("member `{}` covers different years than `{}`", m.member, first.member),
            ));
        }
    }
    let n = members.len() as f64;
    let mut summary = ProjectionSummary {
        scenario: scenario.to_string(),
        members: members.iter().map(|m| m.member.clone()).collect(),
        years: first.years.clone(),
        mean: Vec::new(),
        q25: Vec::new(),
        q75: Vec::new(),
        member_values: Vec::new(),
    };
    for t in 0..first.years.len() {
        let vals: Vec<f64> = members.iter().map(|m| m.values[t]).collect();
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        summary.mean.push(vals.iter().sum::<f64>() / n);
        summary.q25.push(quantile_sorted(&sorted, 0.25));
        summary.q75.push(quantile_sorted(&sorted, 0.75));
        summary.member_values.push(vals);
    }
    Ok(summary)
}

/// Observed statewide yield per year, weighted by that year's planted areas.
pub fn observed_statewide(yields: &[YieldRecord]) -> BTreeMap<i32, f64> {
    let mut acc: BTreeMap<i32, (f64, f64)> = BTreeMap::new();
    for y in yields {
        let e = acc.entry(y.year).or_insert((0.0, 0.0));
        e.0 += y.planted_area * y.yield_tpa;
        e.1 += y.planted_area;
    }
    acc.into_iter()
        .filter(|(_, (_, d))| *d > 0.0)
        .map(|(y, (n, d))| (y, n / d))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub scenario: String,
    pub r2: f64,
    pub n_years: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalComparison {
    pub entries: Vec<ComparisonEntry>,
}

/// R² of the ensemble-mean statewide series against observations over the
/// years both cover.
pub fn compare_historical(summary: &ProjectionSummary, observations: &[YieldRecord]) -> Result<ComparisonEntry> {
    let obs = observed_statewide(observations);
    let mut o = Vec::new();
    let mut s = Vec::new();
    for (y, m) in summary.years.iter().zip(&summary.mean) {
        if let Some(v) = obs.get(y) {
            o.push(*v);
            s.push(*m);
        }
    }
    if o.len() < 3 {
        return Err(Error::validation(
            format!("historical comparison `{}`", summary.scenario),
            format!("{} overlap years; at least 3 needed", o.len()),
        ));
    }
    Ok(ComparisonEntry {
        scenario: summary.scenario.clone(),
        r2: r2_score(&o, &s)?,
        n_years: o.len(),
    })
}

pub const PROJECTION_HEADER: [&str; 5] = ["scenario", "member", "year", "county", "yield"];
pub const SUMMARY_HEADER: [&str; 5] = ["scenario", "year", "mean", "q25", "q75"];

pub fn projections_csv(meta: &Metadata, scenario: &str, rows: &[ProjectedYield]) -> Result<String> {
    io::render_csv(
        meta,
        &PROJECTION_HEADER,
        rows.iter().map(|r| {
            vec![
                scenario.to_string(),
                r.member.clone(),
                r.year.to_string(),
                r.county.clone(),
                fmt_f64(r.yield_tpa),
            ]
        }),
    )
}

/// Parses a long projection file into `(scenario, rows)` pairs in file order.
pub fn parse_projections(text: &str, location: &str) -> Result<Vec<(String, ProjectedYield)>> {
    let mut rdr = io::csv_reader(text);
    let headers = rdr.headers().map_err(|e| io::csv_err(location, e))?.clone();
    io::expect_header(location, &headers, &PROJECTION_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io::csv_err(location, e))?;
        let loc = format!("{location} row {}", i + 1);
        out.push((
            rec[0].to_string(),
            ProjectedYield {
                member: rec[1].to_string(),
                year: io::parse_i32(&loc, "year", &rec[2])?,
                county: rec[3].to_string(),
                yield_tpa: io::parse_f64(&loc, "yield", &rec[4])?,
            },
        ));
    }
    Ok(out)
}

pub fn summary_csv(meta: &Metadata, summaries: &[ProjectionSummary]) -> Result<String> {
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .flat_map(|s| {
            (0..s.years.len()).map(move |t| {
                vec![
                    s.scenario.clone(),
                    s.years[t].to_string(),
                    fmt_f64(s.mean[t]),
                    fmt_f64(s.q25[t]),
                    fmt_f64(s.q75[t]),
                ]
            })
        })
        .collect();
    io::render_csv(meta, &SUMMARY_HEADER, rows)
}

/// Groups projection rows by scenario, then member, and reduces each member
/// to its statewide series.
pub fn statewide_by_scenario(
    rows: &[(String, ProjectedYield)],
    areas: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, Vec<MemberSeries>>> {
    let mut grouped: BTreeMap<String, BTreeMap<String, Vec<ProjectedYield>>> = BTreeMap::new();
    for (s, r) in rows {
        grouped
            .entry(s.clone())
            .or_default()
            .entry(r.member.clone())
            .or_default()
            .push(r.clone());
    }
    grouped
        .into_iter()
        .map(|(s, members)| {
            let series = members
                .values()
                .map(|p| statewide_series(p, areas))
                .collect::<Result<Vec<_>>>()?;
            Ok((s, series))
        })
        .collect()
}
