//! Subcommand implementations. Each reads its inputs, runs one pipeline
//! stage and writes its outputs atomically with a metadata header.

use std::path::{Path, PathBuf};

use chrono::Datelike;
use orchardcast_core::dataset::{self, FeatureTable, Tech};
use orchardcast_core::evaluate;
use orchardcast_core::grid::{self, AggregationMode};
use orchardcast_core::io::{self, Metadata};
use orchardcast_core::phenology::{self, CountyClimate, PhenologyConfig};
use orchardcast_core::projection::{self, MemberRoster, Rcp, ScenarioSpec};
use orchardcast_core::stack::{self, Preset};
use orchardcast_core::synth::{self, SynthConfig, SynthLayout};
use orchardcast_core::{artifact, Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{digest_of, Paths, RunConfig, CONFIG_FILE};

fn header(command: &str, seed: Option<u64>, config_digest: &str) -> Metadata {
    let mut m = Metadata::tool().with("command", command);
    if let Some(s) = seed {
        m.set("seed", s);
    }
    m.set("config_digest", config_digest);
    m
}

fn phenology_config(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<PhenologyConfig> {
    match flag.or_else(|| cfg.paths.phenology.clone()) {
        Some(p) => PhenologyConfig::load(&p),
        None => Ok(PhenologyConfig::default()),
    }
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub seed: u64,
    pub noise_sd: Option<f64>,
    pub members: Option<usize>,
}

pub fn synth(args: SynthArgs) -> Result<Vec<PathBuf>> {
    let mut cfg = SynthConfig::with_seed(args.seed);
    if let Some(s) = args.noise_sd {
        cfg.noise_sd = s;
    }
    if let Some(m) = args.members {
        cfg.n_members = m;
    }
    let data = synth::generate(&cfg)?;
    let meta = header("synth", Some(args.seed), &digest_of(&cfg));
    data.write(&args.out, &meta)?;
    let run = RunConfig {
        seed: Some(args.seed),
        out_dir: Some(PathBuf::from("out")),
        preset: Some(Preset::HighQuality),
        paths: Paths {
            climate_dir: Some(SynthLayout::CLIMATE_DIR.into()),
            mask: Some(SynthLayout::MASK.into()),
            yields: Some(SynthLayout::YIELDS.into()),
            phenology: None,
            roster: Some(SynthLayout::ROSTER.into()),
        },
        stack: None,
        base_dir: PathBuf::new(),
    };
    let text = toml::to_string(&run).map_err(|e| Error::config(e.to_string()))?;
    let cfg_path = args.out.join(CONFIG_FILE);
    io::write_atomic(&cfg_path, text.as_bytes())?;
    Ok(vec![args.out.join(SynthLayout::YIELDS), cfg_path])
}

/// Variables with a manifest in `dir`, sorted by name.
fn climate_variables(dir: &Path) -> Result<Vec<String>> {
    let mut vars = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "toml") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                vars.push(stem.to_string());
            }
        }
    }
    vars.sort();
    if vars.is_empty() {
        return Err(Error::validation(dir.display().to_string(), "no grid manifests (*.toml) found"));
    }
    Ok(vars)
}

pub struct IngestArgs {
    pub climate_dir: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn ingest(cfg: &RunConfig, args: IngestArgs) -> Result<Vec<PathBuf>> {
    let dir = cfg.input(args.climate_dir, &cfg.paths.climate_dir, "climate directory")?;
    let mask_path = cfg.input(args.mask, &cfg.paths.mask, "crop mask")?;
    let mask = grid::load_mask(&mask_path)?;
    let vars = climate_variables(&dir)?;
    let mut series = Vec::new();
    for v in &vars {
        let g = grid::load_grid(&dir.join(format!("{v}.toml")), &dir.join(format!("{v}.csv")))?;
        let mode = AggregationMode::for_quantity(g.manifest().quantity());
        series.extend(grid::aggregate_by_calendar_year(&g, &mask, mode)?);
    }
    let out = cfg.output(args.out, "county_daily.csv");
    let meta = header("ingest", None, &digest_of(&vars)).with("variables", vars.join(" "));
    io::write_atomic(&out, grid::county_series_csv(&meta, &series).as_bytes())?;
    Ok(vec![out])
}

pub struct FeaturizeArgs {
    pub county_daily: Option<PathBuf>,
    pub phenology: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn featurize(cfg: &RunConfig, args: FeaturizeArgs) -> Result<Vec<PathBuf>> {
    let default_in = Some(cfg.out_dir().join("county_daily.csv"));
    let input = cfg.input(args.county_daily, &default_in, "county daily series")?;
    let pheno = phenology_config(cfg, args.phenology)?;
    let series = grid::load_county_series(&input)?;
    let rows = phenology::featurize_all(&CountyClimate::group(series), &pheno)?;
    if rows.is_empty() {
        return Err(Error::validation(input.display().to_string(), "no year covers every phenology window"));
    }
    let out = cfg.output(args.out, "features.csv");
    let meta = header("featurize", None, &digest_of(&pheno));
    io::write_atomic(&out, phenology::features_csv(&meta, &pheno.feature_names(), &rows)?.as_bytes())?;
    Ok(vec![out])
}

fn load_table(cfg: &RunConfig, features: Option<PathBuf>, yields: Option<PathBuf>) -> Result<FeatureTable> {
    let default_features = Some(cfg.out_dir().join("features.csv"));
    let fpath = cfg.input(features, &default_features, "feature file")?;
    let ypath = cfg.input(yields, &cfg.paths.yields, "yields file")?;
    let (names, raw) = phenology::load_features(&fpath)?;
    let yields = dataset::load_yields(&ypath)?;
    let table = dataset::build_table(&names, &raw, &yields)?;
    if table.labelled_rows().is_empty() {
        return Err(Error::validation(fpath.display().to_string(), "no feature row has a matching yield"));
    }
    Ok(table)
}

pub struct TrainArgs {
    pub features: Option<PathBuf>,
    pub yields: Option<PathBuf>,
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub out: Option<PathBuf>,
}

pub fn train(cfg: &RunConfig, args: TrainArgs) -> Result<Vec<PathBuf>> {
    let seed = cfg.seed(args.seed);
    let stack_cfg = cfg.stack_config(args.preset, seed);
    let table = load_table(cfg, args.features, args.yields)?;
    let ens = stack::fit_stack(&stack_cfg, &table, &table.labelled_rows())?;
    let out = cfg.output(args.out, "model.ocm");
    artifact::save(&out, &ens)?;
    Ok(vec![out])
}

pub struct EvaluateArgs {
    pub features: Option<PathBuf>,
    pub yields: Option<PathBuf>,
    pub folds: usize,
    pub test_frac: f64,
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub out: Option<PathBuf>,
}

pub fn evaluate(cfg: &RunConfig, args: EvaluateArgs) -> Result<(Vec<PathBuf>, String)> {
    if !(args.test_frac > 0.0 && args.test_frac < 1.0) {
        return Err(Error::config(format!("--test-frac must lie in (0, 1), got {}", args.test_frac)));
    }
    let seed = cfg.seed(args.seed);
    let stack_cfg = cfg.stack_config(args.preset, seed);
    let table = load_table(cfg, args.features, args.yields)?;
    let models = evaluate::standard_models(stack_cfg);
    let report = evaluate::run_benchmark(&table, &models, args.folds, args.test_frac, seed)?;
    let out = cfg.output(args.out, "benchmark.csv");
    let meta = header("evaluate", None, &digest_of(&models));
    io::write_atomic(&out, report.to_csv(meta)?.as_bytes())?;
    Ok((vec![out], report.render_table()))
}

pub struct ImportanceArgs {
    pub model: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub yields: Option<PathBuf>,
    pub repeats: usize,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn importance(cfg: &RunConfig, args: ImportanceArgs) -> Result<Vec<PathBuf>> {
    let seed = cfg.seed(args.seed);
    let default_model = Some(cfg.out_dir().join("model.ocm"));
    let ens = artifact::load(&cfg.input(args.model, &default_model, "model artifact")?)?;
    let table = load_table(cfg, args.features, args.yields)?;
    if table.column_names != ens.column_names {
        return Err(Error::schema("feature table", "columns differ from the model's training columns"));
    }
    let rows = table.labelled_rows();
    let report = stack::permutation_importance(&ens, &table.matrix(&rows), &table.targets(&rows)?, args.repeats, seed)?;
    let out = cfg.output(args.out, "importance.csv");
    let meta = header("importance", Some(seed), &artifact::config_digest(&ens)).with("repeats", args.repeats);
    io::write_atomic(&out, report.to_csv(&meta)?.as_bytes())?;
    Ok(vec![out])
}

pub struct ProjectArgs {
    pub model: Option<PathBuf>,
    pub members: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub yields: Option<PathBuf>,
    pub phenology: Option<PathBuf>,
    pub rcp: Rcp,
    pub tech: Tech,
    pub first_year: Option<i32>,
    pub last_year: Option<i32>,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ProjectionSettings<'a> {
    rcp: Rcp,
    tech: Tech,
    first_year: i32,
    last_year: i32,
    members: Vec<&'a str>,
    model: String,
}

pub fn project(cfg: &RunConfig, args: ProjectArgs) -> Result<Vec<PathBuf>> {
    let default_model = Some(cfg.out_dir().join("model.ocm"));
    let ens = artifact::load(&cfg.input(args.model, &default_model, "model artifact")?)?;
    let roster = MemberRoster::load(&cfg.input(args.members, &cfg.paths.roster, "member roster")?)?;
    let mask = grid::load_mask(&cfg.input(args.mask, &cfg.paths.mask, "crop mask")?)?;
    let yields = dataset::load_yields(&cfg.input(args.yields, &cfg.paths.yields, "yields file")?)?;
    let pheno = phenology_config(cfg, args.phenology)?;
    let areas = projection::frozen_areas(&yields);
    let vars = pheno.required_variables();
    let first_year = args
        .first_year
        .or_else(|| yields.iter().map(|y| y.year).min())
        .ok_or_else(|| Error::config("no --first-year and no yields to infer it from"))?;

    let climates = roster
        .members
        .par_iter()
        .map(|m| projection::load_member_climate(&roster, &m.id, args.rcp, &vars))
        .collect::<Result<Vec<_>>>()?;
    // Last harvest year whose windows all lie inside every member's data.
    let last_covered = climates
        .iter()
        .flat_map(|c| &c.grids)
        .map(|g| {
            let end = g.manifest().date_end;
            if (end.month(), end.day()) >= (10, 31) { end.year() } else { end.year() - 1 }
        })
        .min()
        .unwrap_or(first_year);
    let last_year = args.last_year.unwrap_or(last_covered);
    let specs: Vec<ScenarioSpec> = roster
        .members
        .iter()
        .map(|m| ScenarioSpec {
            member_id: m.id.clone(),
            rcp: args.rcp,
            tech: args.tech,
            first_year,
            last_year,
        })
        .collect();
    for s in &specs {
        s.validate(&roster)?;
    }
    let projected = climates
        .par_iter()
        .zip(&specs)
        .map(|(c, s)| projection::project_member(&ens, c, s, &mask, &pheno, &areas))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<_> = projected.into_iter().flatten().collect();
    let label = projection::scenario_label(args.rcp, args.tech);
    let settings = ProjectionSettings {
        rcp: args.rcp,
        tech: args.tech,
        first_year,
        last_year,
        members: roster.members.iter().map(|m| m.id.as_str()).collect(),
        model: artifact::config_digest(&ens),
    };
    let out = cfg.output(args.out, &format!("projections_{label}.csv"));
    let meta = header("project", Some(ens.config.seed), &digest_of(&settings)).with("scenario", &label);
    io::write_atomic(&out, projection::projections_csv(&meta, &label, &rows)?.as_bytes())?;
    Ok(vec![out])
}

pub struct SummarizeArgs {
    pub projections: Vec<PathBuf>,
    pub yields: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub comparison_out: Option<PathBuf>,
}

pub fn summarize(cfg: &RunConfig, args: SummarizeArgs) -> Result<(Vec<PathBuf>, String)> {
    if args.projections.is_empty() {
        return Err(Error::config("summarize needs at least one --projections file"));
    }
    let yields = dataset::load_yields(&cfg.input(args.yields, &cfg.paths.yields, "yields file")?)?;
    let mut rows = Vec::new();
    let mut digests = Vec::new();
    for p in &args.projections {
        let text = io::read_text(p)?;
        digests.push(io::digest(text.as_bytes()));
        rows.extend(projection::parse_projections(&text, &p.display().to_string())?);
    }
    let areas = projection::frozen_areas(&yields);
    let grouped = projection::statewide_by_scenario(&rows, &areas)?;
    let mut summaries = Vec::new();
    let mut comparisons = Vec::new();
    let mut notes = String::new();
    for (scenario, members) in &grouped {
        let s = projection::summarize_ensemble(scenario, members)?;
        match projection::compare_historical(&s, &yields) {
            Ok(c) => {
                notes.push_str(&format!("{scenario}: historical R² = {:.4} over {} years\n", c.r2, c.n_years));
                comparisons.push(c);
            }
            Err(e) => log::warn!("{scenario}: no historical comparison ({e})"),
        }
        summaries.push(s);
    }
    let meta = header("summarize", None, &io::digest(digests.join(",").as_bytes()));
    let out = cfg.output(args.out, "summary.csv");
    io::write_atomic(&out, projection::summary_csv(&meta, &summaries)?.as_bytes())?;
    let cmp_out = cfg.output(args.comparison_out, "historical.csv");
    let cmp_text = io::render_csv(
        &meta,
        &["scenario", "r2", "n_years"],
        comparisons
            .iter()
            .map(|c| vec![c.scenario.clone(), io::fmt_f64(c.r2), c.n_years.to_string()]),
    )?;
    io::write_atomic(&cmp_out, cmp_text.as_bytes())?;
    Ok((vec![out, cmp_out], notes))
}
