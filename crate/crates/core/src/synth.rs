//! Deterministic synthetic dataset: a small grid of daily weather, a crop
//! mask, county yields driven by a planted quadratic in two phenology
//! features, and a few projection members with shared historical periods.
//!
//! Everything derives from one seed; writing the same dataset twice gives
//! byte-identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::Rng as _;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, YieldRecord, TREND_ORIGIN};
use crate::error::{Error, Result};
use crate::grid::{self, AggregationMode, CropMask, GridManifest, GridSeries, MaskEntry};
use crate::io::{self, Metadata};
use crate::phenology::{self, CountyClimate, FeatureVectorRaw, PhenologyConfig};
use crate::projection::{MemberEntry, MemberRoster, SEAM_YEAR};
use crate::rng::{self, Rng};

pub const VARIABLES: [&str; 6] = ["etr", "pr", "sph", "tmax", "tmin", "vs"];
const UNITS: [&str; 6] = ["mm", "mm", "kg/kg", "degC", "degC", "m/s"];
const N_ROWS: usize = 2;
const N_COLS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Exactly four counties from the roster.
    pub counties: Vec<String>,
    /// First and last harvest years with yields.
    pub first_year: i32,
    pub last_year: i32,
    /// Last harvest year covered by the projection members.
    pub projection_end: i32,
    pub n_members: usize,
    pub noise_sd: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            counties: ["Butte", "Fresno", "Kern", "Tulare"].map(String::from).to_vec(),
            first_year: 1991,
            last_year: 2020,
            projection_end: 2025,
            n_members: 3,
            noise_sd: 0.08,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        SynthConfig {
            seed,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.counties.len() != 4 {
            return Err(Error::config("synthetic data uses exactly four counties"));
        }
        for c in &self.counties {
            crate::roster::county_index(c)?;
        }
        if self.first_year < TREND_ORIGIN + 1 || self.first_year > self.last_year {
            return Err(Error::config(format!(
                "harvest years must satisfy {} <= first_year <= last_year",
                TREND_ORIGIN + 1
            )));
        }
        if self.first_year >= SEAM_YEAR {
            return Err(Error::config(format!("first_year must precede {SEAM_YEAR}")));
        }
        if self.projection_end < SEAM_YEAR {
            return Err(Error::config(format!("projection_end must be at least {SEAM_YEAR}")));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config("noise_sd must be a non-negative number"));
        }
        Ok(())
    }
}

/// True mean yield: county intercept + county trend + a quadratic in two
/// standardized features, `u = (f − center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub feature_a: String,
    pub feature_b: String,
    pub center_a: f64,
    pub scale_a: f64,
    pub center_b: f64,
    pub scale_b: f64,
    pub linear_a: f64,
    pub quadratic_a: f64,
    pub linear_b: f64,
    pub quadratic_b: f64,
    pub intercept: BTreeMap<String, f64>,
    /// Ton/acre per year since the trend origin.
    pub trend: BTreeMap<String, f64>,
    pub noise_sd: f64,
}

impl PlantedModel {
    pub fn mean_yield(&self, fa: f64, fb: f64, county: &str, year: i32) -> f64 {
        let ua = (fa - self.center_a) / self.scale_a;
        let ub = (fb - self.center_b) / self.scale_b;
        self.intercept[county]
            + self.trend[county] * f64::from(year - TREND_ORIGIN)
            + self.linear_a * ua
            + self.quadratic_a * ua * ua
            + self.linear_b * ub
            + self.quadratic_b * ub * ub
    }

    /// Coefficients on the raw columns `f_a, f_b, f_a², f_b²`.
    pub fn raw_coefficients(&self) -> [f64; 4] {
        let (ca, sa, cb, sb) = (self.center_a, self.scale_a, self.center_b, self.scale_b);
        [
            self.linear_a / sa - 2.0 * self.quadratic_a * ca / (sa * sa),
            self.linear_b / sb - 2.0 * self.quadratic_b * cb / (sb * sb),
            self.quadratic_a / (sa * sa),
            self.quadratic_b / (sb * sb),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub config: SynthConfig,
    pub planted: PlantedModel,
}

#[derive(Debug, Clone)]
pub struct SynthMember {
    pub id: String,
    pub historical: Vec<GridSeries>,
    pub rcp45: Vec<GridSeries>,
    pub rcp85: Vec<GridSeries>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub planted: PlantedModel,
    /// Observed climate, one grid per entry of [`VARIABLES`].
    pub climate: Vec<GridSeries>,
    pub mask: CropMask,
    pub features: Vec<FeatureVectorRaw>,
    pub yields: Vec<YieldRecord>,
    pub members: Vec<SynthMember>,
}

/// Per-year weather state shared by all cells.
struct YearState {
    year: i32,
    temp_anomaly: f64,
    precip_scale: f64,
}

/// Scenario forcing applied on top of the stochastic weather.
#[derive(Clone, Copy)]
struct Forcing {
    temp_bias: f64,
    /// °C per year after 2005.
    warming_rate: f64,
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

/// Simulates every variable over `[start, end]`; returns date-major values
/// in [`VARIABLES`] order.
fn simulate(rng: &mut Rng, start: NaiveDate, end: NaiveDate, forcing: Forcing) -> [Vec<f64>; 6] {
    let n_cells = N_ROWS * N_COLS;
    let n_days = (end - start).num_days() as usize + 1;
    let mut out: [Vec<f64>; 6] = Default::default();
    for v in out.iter_mut() {
        v.reserve(n_days * n_cells);
    }
    let noise = Normal::new(0.0, 1.0).unwrap();
    let rain = Exp::new(1.0 / 7.0).unwrap();
    let year_precip = LogNormal::new(0.0, 0.35).unwrap();
    let mut state: Option<YearState> = None;
    for d in 0..n_days {
        let date = start + chrono::Days::new(d as u64);
        if state.as_ref().is_none_or(|s| s.year != date.year()) {
            state = Some(YearState {
                year: date.year(),
                temp_anomaly: noise.sample(rng) * 0.9,
                precip_scale: year_precip.sample(rng),
            });
        }
        let st = state.as_ref().unwrap();
        let phase = 2.0 * std::f64::consts::PI * (f64::from(date.ordinal()) - 15.0) / 365.25;
        // -1 in mid-January, +1 in mid-July.
        let season = -phase.cos();
        let winter = (1.0 - season) / 2.0;
        let warming = forcing.warming_rate * f64::from((date.year() - (SEAM_YEAR - 1)).max(0));
        for c in 0..n_cells {
            let cell = c as f64;
            let tmin = 7.0 + 8.0 * season + 0.4 * cell - 1.0 + st.temp_anomaly + forcing.temp_bias + warming
                + 1.5 * noise.sample(rng);
            let diurnal = (12.0 + 3.0 * season + 1.5 * noise.sample(rng)).max(2.0);
            let wet = rng.gen::<f64>() < 0.04 + 0.3 * winter;
            let pr = if wet {
                rain.sample(rng) * st.precip_scale * (0.8 + 0.08 * cell)
            } else {
                0.0
            };
            let sph = (0.004 + 0.004 * (1.0 + season) / 2.0 + 0.0005 * noise.sample(rng)).clamp(0.001, 0.02);
            let vs = (3.0 + 0.8 * noise.sample(rng)).max(0.3);
            let etr = (1.5 + 4.5 * (1.0 + season) / 2.0 + 0.4 * noise.sample(rng)).max(0.1);
            let tmin = round_to(tmin, 2);
            out[0].push(round_to(etr, 2));
            out[1].push(round_to(pr, 2));
            out[2].push(round_to(sph, 5));
            out[3].push(round_to(tmin + diurnal, 2));
            out[4].push(tmin);
            out[5].push(round_to(vs, 2));
        }
    }
    out
}

fn grids(values: [Vec<f64>; 6], start: NaiveDate, end: NaiveDate) -> Result<Vec<GridSeries>> {
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let manifest = GridManifest {
                variable_name: VARIABLES[i].into(),
                unit: UNITS[i].into(),
                origin_lat: 36.0,
                origin_lon: -120.5,
                n_rows: N_ROWS,
                n_cols: N_COLS,
                cell_size: grid::DEFAULT_CELL_SIZE,
                date_start: start,
                date_end: end,
                quantity: None,
            };
            GridSeries::new(manifest, v)
        })
        .collect()
}

/// Two mask years; before the first the earliest one applies. Cell 1 moves
/// from the first county to the second in the later year.
fn build_mask(counties: &[String]) -> Result<CropMask> {
    let layout: [(i32, [(usize, f64); 6]); 2] = [
        (2008, [(0, 800.0), (0, 300.0), (1, 900.0), (2, 700.0), (2, 400.0), (3, 1000.0)]),
        (2015, [(0, 850.0), (1, 350.0), (1, 950.0), (2, 760.0), (2, 420.0), (3, 1100.0)]),
    ];
    let mut entries = Vec::new();
    for (year, cells) in layout {
        for (cell_id, (county, area)) in cells.into_iter().enumerate() {
            entries.push(MaskEntry {
                year,
                cell_id,
                county: counties[county].clone(),
                area,
            });
        }
    }
    CropMask::new(entries)
}

/// Runs the feature pipeline on a set of grids.
pub fn featurize_grids(grids: &[GridSeries], mask: &CropMask, config: &PhenologyConfig) -> Result<Vec<FeatureVectorRaw>> {
    let mut series = Vec::new();
    for g in grids {
        let mode = AggregationMode::for_quantity(g.manifest().quantity());
        series.extend(grid::aggregate_by_calendar_year(g, mask, mode)?);
    }
    phenology::featurize_all(&CountyClimate::group(series), config)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let seed = cfg.seed;
    let start = NaiveDate::from_ymd_opt(cfg.first_year - 1, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(cfg.last_year, 12, 31).unwrap();
    let observed = Forcing {
        temp_bias: 0.0,
        warming_rate: 0.0,
    };
    let climate = grids(simulate(&mut rng::rng_for(seed, "observed-climate"), start, end, observed), start, end)?;
    let mask = build_mask(&cfg.counties)?;
    let pheno = PhenologyConfig::default();
    let features: Vec<FeatureVectorRaw> = featurize_grids(&climate, &mask, &pheno)?
        .into_iter()
        .filter(|f| (cfg.first_year..=cfg.last_year).contains(&f.year))
        .collect();

    let names = pheno.feature_names();
    let (feature_a, feature_b) = ("bloom_precip".to_string(), "growing_tmax".to_string());
    let ia = names.iter().position(|n| *n == feature_a).unwrap();
    let ib = names.iter().position(|n| *n == feature_b).unwrap();
    let (center_a, scale_a) = mean_std(&features.iter().map(|f| f.values[ia]).collect::<Vec<_>>());
    let (center_b, scale_b) = mean_std(&features.iter().map(|f| f.values[ib]).collect::<Vec<_>>());
    let mut prng = rng::rng_for(seed, "planted-model");
    let mut intercept = BTreeMap::new();
    let mut trend = BTreeMap::new();
    for c in &cfg.counties {
        intercept.insert(c.clone(), round_to(prng.gen_range(0.9..1.2), 3));
        trend.insert(c.clone(), round_to(prng.gen_range(0.008..0.018), 4));
    }
    let planted = PlantedModel {
        feature_a,
        feature_b,
        center_a,
        scale_a,
        center_b,
        scale_b,
        linear_a: -0.12,
        quadratic_a: -0.04,
        linear_b: 0.10,
        quadratic_b: -0.05,
        intercept,
        trend,
        noise_sd: cfg.noise_sd,
    };

    let base_area: BTreeMap<&str, f64> = cfg
        .counties
        .iter()
        .zip([52_000.0, 160_000.0, 220_000.0, 110_000.0])
        .map(|(c, a)| (c.as_str(), a))
        .collect();
    let mut nrng = rng::rng_for(seed, "yield-noise");
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut yields = Vec::with_capacity(features.len());
    for f in &features {
        let mean = planted.mean_yield(f.values[ia], f.values[ib], &f.county, f.year);
        let eps = noise.sample(&mut nrng);
        let y = if cfg.noise_sd > 0.0 { mean + cfg.noise_sd * eps } else { mean };
        let area = (base_area[f.county.as_str()] * (1.0 + 0.012 * f64::from(f.year - cfg.first_year))).round();
        yields.push(YieldRecord {
            county: f.county.clone(),
            year: f.year,
            yield_tpa: y.max(0.0),
            planted_area: area,
        });
    }

    let mut members = Vec::with_capacity(cfg.n_members);
    let hist_end = NaiveDate::from_ymd_opt(SEAM_YEAR - 1, 12, 31).unwrap();
    let fut_start = NaiveDate::from_ymd_opt(SEAM_YEAR, 1, 1).unwrap();
    let fut_end = NaiveDate::from_ymd_opt(cfg.projection_end, 12, 31).unwrap();
    for m in 0..cfg.n_members {
        let mseed = rng::derive_indexed(seed, "member", m as u64);
        let bias = 0.4 * noise.sample(&mut rng::rng_for(mseed, "bias"));
        let hist = Forcing {
            temp_bias: bias,
            warming_rate: 0.0,
        };
        let historical = grids(simulate(&mut rng::rng_for(mseed, "historical"), start, hist_end, hist), start, hist_end)?;
        // Both pathways replay the same weather draws; only the forcing differs.
        let future = |rate: f64| {
            let forcing = Forcing {
                temp_bias: bias,
                warming_rate: rate,
            };
            grids(simulate(&mut rng::rng_for(mseed, "future"), fut_start, fut_end, forcing), fut_start, fut_end)
        };
        members.push(SynthMember {
            id: format!("synth-{:02}", m + 1),
            historical,
            rcp45: future(0.03)?,
            rcp85: future(0.07)?,
        });
    }

    Ok(SynthDataset {
        config: cfg.clone(),
        planted,
        climate,
        mask,
        features,
        yields,
        members,
    })
}

/// Relative paths of the files written by [`SynthDataset::write`].
pub struct SynthLayout;

impl SynthLayout {
    pub const CLIMATE_DIR: &'static str = "climate";
    pub const MASK: &'static str = "mask.csv";
    pub const YIELDS: &'static str = "yields.csv";
    pub const GENERATOR: &'static str = "generator.toml";
    pub const ROSTER: &'static str = "scenarios/members.toml";
}

impl SynthDataset {
    pub fn write(&self, dir: &Path, meta: &Metadata) -> Result<()> {
        for g in &self.climate {
            g.write_pair(&dir.join(SynthLayout::CLIMATE_DIR))?;
        }
        io::write_atomic(&dir.join(SynthLayout::MASK), self.mask.to_csv().as_bytes())?;
        io::write_atomic(
            &dir.join(SynthLayout::YIELDS),
            dataset::yields_csv(meta, &self.yields)?.as_bytes(),
        )?;
        let record = GeneratorRecord {
            config: self.config.clone(),
            planted: self.planted.clone(),
        };
        let text = toml::to_string(&record).map_err(|e| Error::config(e.to_string()))?;
        io::write_atomic(&dir.join(SynthLayout::GENERATOR), text.as_bytes())?;

        let roster_path = dir.join(SynthLayout::ROSTER);
        let scen_dir = roster_path.parent().unwrap().to_path_buf();
        let mut entries = Vec::new();
        for m in &self.members {
            let rel = |p: &str| PathBuf::from(&m.id).join(p);
            for (sub, grids) in [("historical", &m.historical), ("rcp45", &m.rcp45), ("rcp85", &m.rcp85)] {
                for g in grids {
                    g.write_pair(&scen_dir.join(rel(sub)))?;
                }
            }
            entries.push(MemberEntry {
                id: m.id.clone(),
                historical: rel("historical"),
                rcp45: rel("rcp45"),
                rcp85: rel("rcp85"),
            });
        }
        MemberRoster::new(entries)?.save(&roster_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(seed: u64) -> SynthConfig {
        SynthConfig {
            first_year: 2001,
            last_year: 2008,
            projection_end: 2008,
            n_members: 1,
            ..SynthConfig::with_seed(seed)
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&quick(3)).unwrap();
        let b = generate(&quick(3)).unwrap();
        let c = generate(&quick(4)).unwrap();
        assert_eq!(a.yields, b.yields);
        assert_eq!(a.climate, b.climate);
        assert_ne!(a.yields, c.yields);
    }

    #[test]
    fn yields_cover_every_county_year_and_are_non_negative() {
        let d = generate(&quick(5)).unwrap();
        assert_eq!(d.yields.len(), 4 * 8);
        assert!(d.yields.iter().all(|y| y.yield_tpa >= 0.0));
        let mut heavy = quick(5);
        heavy.noise_sd = 50.0;
        let d = generate(&heavy).unwrap();
        assert!(d.yields.iter().all(|y| y.yield_tpa >= 0.0));
        assert!(d.yields.iter().any(|y| y.yield_tpa == 0.0));
    }

    #[test]
    fn planted_expansion_matches_direct_evaluation() {
        let d = generate(&quick(6)).unwrap();
        let p = &d.planted;
        let [ca, cb, qa, qb] = p.raw_coefficients();
        for (fa, fb) in [(10.0, 20.0), (150.0, 28.0), (0.0, 0.0)] {
            let direct = p.mean_yield(fa, fb, "Kern", 2000) - p.mean_yield(0.0, 0.0, "Kern", 2000);
            let expanded = ca * fa + cb * fb + qa * fa * fa + qb * fb * fb;
            assert!((direct - expanded).abs() < 1e-9);
        }
    }

    #[test]
    fn member_pathways_share_weather_and_differ_by_forcing() {
        let d = generate(&quick(7)).unwrap();
        let m = &d.members[0];
        let tmin = VARIABLES.iter().position(|v| *v == "tmin").unwrap();
        let pr = VARIABLES.iter().position(|v| *v == "pr").unwrap();
        assert_eq!(m.rcp45[pr], m.rcp85[pr]);
        let last = m.rcp45[tmin].values().len() - 1;
        assert!(m.rcp85[tmin].values()[last] > m.rcp45[tmin].values()[last]);
        assert_eq!(m.historical[0].manifest().date_end, NaiveDate::from_ymd_opt(2005, 12, 31).unwrap());
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = quick(1);
        c.counties.pop();
        assert!(generate(&c).is_err());
        let mut c = quick(1);
        c.noise_sd = -1.0;
        assert!(c.validate().is_err());
    }
}
