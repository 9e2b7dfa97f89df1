//! Acceptance suite: one check per criterion, each printing a pass/fail line.
//! Runs without the libtest harness so the lines always reach the output.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use orchardcast_core::dataset::{self, FeatureTable, SplitKind, Tech};
use orchardcast_core::evaluate::{self, BenchmarkReport};
use orchardcast_core::learners::{r2_score, rmse, LearnerKind, Matrix};
use orchardcast_core::phenology::{self, Aggregator, CountyClimate, MonthDay, PhenologyConfig, PhenologyWindowSpec};
use orchardcast_core::grid::CountyDailySeries;
use orchardcast_core::projection::{self, MemberRoster, MemberSeries, Rcp, ScenarioSpec};
use orchardcast_core::stack::{self, Preset, StackConfig, StackEnsemble};
use orchardcast_core::synth::{self, SynthConfig, SynthDataset};
use orchardcast_core::rng;
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Shared {
    data: SynthDataset,
    table: FeatureTable,
    report: BenchmarkReport,
}

fn shared() -> Shared {
    let data = synth::generate(&SynthConfig::with_seed(42)).unwrap();
    let table = dataset::build_table(&PhenologyConfig::default().feature_names(), &data.features, &data.yields).unwrap();
    let report = evaluate::run_benchmark(&table, &evaluate::standard_models(StackConfig::high_quality(42)), 5, 0.3, 42).unwrap();
    Shared { data, table, report }
}

fn sum_sq(v: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x * x;
    }
    s
}

fn metric_oracles() -> Outcome {
    let mut rng = rng::rng_for(1, "acceptance-metrics");
    let mut worst: f64 = 0.0;
    for case in 0..25 {
        let n = rng.gen_range(3..12);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let yhat: Vec<f64> = y.iter().map(|v| v + rng.gen_range(-2.0..2.0)).collect();
        let mean = y.iter().sum::<f64>() / n as f64;
        let ss_res = sum_sq(y.iter().zip(&yhat).map(|(a, b)| a - b));
        let ss_tot = sum_sq(y.iter().map(|a| a - mean));
        let r2_want = 1.0 - ss_res / ss_tot;
        let rmse_want = (ss_res / n as f64).sqrt();
        let r2_got = r2_score(&y, &yhat).map_err(|e| e.to_string())?;
        let rmse_got = rmse(&y, &yhat).map_err(|e| e.to_string())?;
        let err = (r2_got - r2_want).abs().max((rmse_got - rmse_want).abs());
        ensure!(err <= 1e-12, "case {case}: error {err:e}");
        worst = worst.max(err);
    }
    Ok(format!("25 vectors, max error {worst:.1e}"))
}

fn protocol_shape(s: &Shared) -> Outcome {
    let r = &s.report;
    ensure!(r.rows.len() == 3, "{} report rows", r.rows.len());
    ensure!(r.rows.iter().all(|row| row.cells().iter().all(|c| c.is_finite())), "non-finite cell");
    let n = r.n_rows as f64;
    for a in &r.audit {
        let (want, total) = if a.stage == "holdout" { (0.7 * n, n) } else { (0.8 * n, n) };
        ensure!((a.n_train as f64 - want).abs() <= 1.0, "{} {}: {} training rows, want {want}", a.model, a.stage, a.n_train);
        ensure!((a.n_train + a.n_test) as f64 == total, "{} {}: rows do not partition", a.model, a.stage);
        ensure!(a.normalizer_rows == a.n_train, "{} {}: normalizer saw {} rows", a.model, a.stage, a.normalizer_rows);
    }
    let cv: Vec<usize> = r.audit.iter().filter(|a| a.stage != "holdout").map(|a| a.n_train).collect();
    let ho = r.audit.iter().find(|a| a.stage == "holdout").unwrap();
    Ok(format!("3 models x 4 cells, {} rows, CV train {:?}, holdout {}/{}", r.n_rows, cv, ho.n_train, ho.n_test))
}

fn stack_dominance(s: &Shared) -> Outcome {
    let rows = s.table.labelled_rows();
    let n = rows.len();
    let split = dataset::make_split(n, SplitKind::Holdout { test_fraction: 0.3 }, rng::derive(42, "benchmark-holdout"))
        .map_err(|e| e.to_string())?;
    let train: Vec<usize> = split.train_rows().iter().map(|&i| rows[i]).collect();
    let test: Vec<usize> = split.test_rows().iter().map(|&i| rows[i]).collect();
    let ens = stack::fit_stack(&StackConfig::high_quality(42), &s.table, &train).map_err(|e| e.to_string())?;
    let y_test = s.table.targets(&test).unwrap();
    let x_test = s.table.matrix(&test);
    let stack_r2 = r2_score(&y_test, &ens.predict(&x_test).unwrap()).unwrap();
    let x0 = ens.normalizer.transform(&x_test).unwrap();
    let mut best_base = f64::NEG_INFINITY;
    for bag in &ens.layers[0] {
        best_base = best_base.max(r2_score(&y_test, &bag.predict(&x0).unwrap()).unwrap());
    }
    ensure!(stack_r2 >= best_base - 0.02, "stack holdout R² {stack_r2:.4} < best base {best_base:.4} - 0.02");

    let y_train = s.table.targets(&train).unwrap();
    let ens_oof = rmse(&y_train, &ens.oof_predictions()).unwrap();
    let best_single = ens
        .layers
        .last()
        .unwrap()
        .iter()
        .map(|b| rmse(&y_train, &b.oof_predictions).unwrap())
        .fold(f64::INFINITY, f64::min);
    ensure!(ens_oof <= best_single + 1e-12, "ensemble OOF RMSE {ens_oof:.6} > best single {best_single:.6}");
    Ok(format!(
        "holdout R² stack {stack_r2:.4} vs best base {best_base:.4}; OOF RMSE {ens_oof:.4} <= {best_single:.4}"
    ))
}

fn oof_audit(s: &Shared) -> Outcome {
    let rows = s.table.labelled_rows();
    let ens = stack::fit_stack(&StackConfig::high_quality(42), &s.table, &rows).map_err(|e| e.to_string())?;
    let mut checked = 0usize;
    for bag in ens.layers.iter().flatten() {
        for (train, held) in bag.fold_train_rows.iter().zip(&bag.fold_oof_rows) {
            let mut in_train = vec![false; rows.len()];
            for &i in train {
                in_train[i] = true;
            }
            let leaks = held.iter().filter(|&&i| in_train[i]).count();
            ensure!(leaks == 0, "{} held-out rows were in training", leaks);
            checked += held.len();
        }
    }
    ensure!(ens.audit() == 0, "stack audit reports {} violations", ens.audit());
    Ok(format!("{checked} held-out predictions across {} bags, 0 leaks", ens.layers.iter().flatten().count()))
}

fn brute_quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn quantile_oracle() -> Outcome {
    let years: Vec<i32> = (2021..=2030).collect();
    let mut rng = rng::rng_for(5, "acceptance-quantiles");
    let members: Vec<MemberSeries> = (0..17)
        .map(|m| MemberSeries {
            member: format!("m{m:02}"),
            years: years.clone(),
            values: years.iter().map(|_| rng.gen_range(0.5..3.0)).collect(),
        })
        .collect();
    let s = projection::summarize_ensemble("x", &members).map_err(|e| e.to_string())?;
    for t in 0..years.len() {
        let vals: Vec<f64> = members.iter().map(|m| m.values[t]).collect();
        ensure!(s.q25[t] == brute_quantile(&vals, 0.25), "q25 year {}", years[t]);
        ensure!(s.q75[t] == brute_quantile(&vals, 0.75), "q75 year {}", years[t]);
        ensure!(s.mean[t] == vals.iter().sum::<f64>() / 17.0, "mean year {}", years[t]);
    }
    let ramp: Vec<MemberSeries> = (1..=17)
        .map(|v| MemberSeries {
            member: format!("m{v:02}"),
            years: vec![2050],
            values: vec![f64::from(v)],
        })
        .collect();
    let r = projection::summarize_ensemble("ramp", &ramp).map_err(|e| e.to_string())?;
    ensure!(r.q25[0] == 5.0 && r.q75[0] == 13.0, "values 1..17 gave q25 {} q75 {}", r.q25[0], r.q75[0]);
    Ok("17 members x 10 years exact; 1..17 gives q25=5, q75=13".into())
}

fn tech_linearity(s: &Shared) -> Outcome {
    let cfg = StackConfig {
        base_learners: vec![LearnerKind::ridge()],
        n_layers: 1,
        bag_folds: 5,
        bag_repeats: 1,
        ensemble_iterations: 5,
        preset: Preset::HighQuality,
        seed: 42,
    };
    let ens = stack::fit_stack(&cfg, &s.table, &s.table.labelled_rows()).map_err(|e| e.to_string())?;
    let d = &s.data;
    let m = &d.members[0];
    let climate = projection::MemberClimate {
        member_id: m.id.clone(),
        grids: m
            .historical
            .iter()
            .zip(&m.rcp85)
            .map(|(h, f)| orchardcast_core::grid::GridSeries::concat(&[h.clone(), f.clone()]).unwrap())
            .collect(),
    };
    let pheno = PhenologyConfig::default();
    let areas = projection::frozen_areas(&d.yields);
    let run = |tech| {
        let spec = ScenarioSpec {
            member_id: m.id.clone(),
            rcp: Rcp::Rcp85,
            tech,
            first_year: 2018,
            last_year: 2025,
        };
        projection::project_member(&ens, &climate, &spec, &d.mask, &pheno, &areas)
    };
    let w = run(Tech::WTech).map_err(|e| e.to_string())?;
    let wo = run(Tech::WOTech).map_err(|e| e.to_string())?;
    let bag = &ens.layers[0][0];
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (a, b) in w.iter().zip(&wo) {
        ensure!(a.county == b.county && a.year == b.year, "row mismatch");
        let j = ens.column_names.iter().position(|c| *c == format!("trend_{}", a.county)).unwrap();
        let coef = bag.fold_models.iter().map(|f| f.as_ridge().unwrap().weights[j]).sum::<f64>() / bag.fold_models.len() as f64;
        let want = coef * f64::from((a.year - dataset::TECH_FREEZE_YEAR).max(0));
        let err = (a.yield_tpa - b.yield_tpa - want).abs();
        ensure!(err <= 1e-8, "{} {}: error {err:e}", a.county, a.year);
        worst = worst.max(err);
        checked += usize::from(a.year > dataset::TECH_FREEZE_YEAR);
    }
    ensure!(checked > 0, "no years past the freeze");
    Ok(format!("{checked} county-years past 2020, max error {worst:.1e}"))
}

fn historical_seam(s: &Shared) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = &s.data;
    d.write(dir.path(), &orchardcast_core::io::Metadata::tool()).map_err(|e| e.to_string())?;
    let roster = MemberRoster::load(&dir.path().join("scenarios/members.toml")).map_err(|e| e.to_string())?;
    let pheno = PhenologyConfig::default();
    let vars = pheno.required_variables();
    let areas = projection::frozen_areas(&d.yields);
    let counties: Vec<String> = areas.keys().cloned().collect();
    let cfg = StackConfig {
        base_learners: vec![LearnerKind::ridge(), LearnerKind::gbdt()],
        n_layers: 1,
        bag_folds: 5,
        bag_repeats: 1,
        ensemble_iterations: 5,
        preset: Preset::HighQuality,
        seed: 42,
    };
    let ens = stack::fit_stack(&cfg, &s.table, &s.table.labelled_rows()).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for m in &roster.members {
        let a = projection::load_member_climate(&roster, &m.id, Rcp::Rcp45, &vars).map_err(|e| e.to_string())?;
        let b = projection::load_member_climate(&roster, &m.id, Rcp::Rcp85, &vars).map_err(|e| e.to_string())?;
        let fa = projection::member_features(&a, &d.mask, &pheno, &counties, 1991..=2005).map_err(|e| e.to_string())?;
        let fb = projection::member_features(&b, &d.mask, &pheno, &counties, 1991..=2005).map_err(|e| e.to_string())?;
        ensure!(fa == fb, "{}: pre-2006 features differ", m.id);
        let spec = |rcp| ScenarioSpec {
            member_id: m.id.clone(),
            rcp,
            tech: Tech::WTech,
            first_year: 1991,
            last_year: 2025,
        };
        let pa = projection::project_member(&ens, &a, &spec(Rcp::Rcp45), &d.mask, &pheno, &areas).map_err(|e| e.to_string())?;
        let pb = projection::project_member(&ens, &b, &spec(Rcp::Rcp85), &d.mask, &pheno, &areas).map_err(|e| e.to_string())?;
        for (x, y) in pa.iter().zip(&pb) {
            if x.year < projection::SEAM_YEAR {
                ensure!(x.yield_tpa.to_bits() == y.yield_tpa.to_bits(), "{} {} {}: predictions differ", m.id, x.county, x.year);
                compared += 1;
            }
        }
        ensure!(pa.iter().zip(&pb).any(|(x, y)| x.yield_tpa != y.yield_tpa), "{}: pathways never diverge", m.id);
    }
    Ok(format!("{} members, {compared} pre-2006 predictions bit-identical", roster.members.len()))
}

fn importance_recovery() -> Outcome {
    let cfg = |seed| StackConfig {
        base_learners: vec![
            LearnerKind::ridge(),
            LearnerKind::Gbdt {
                n_rounds: 20,
                learning_rate: 0.2,
                max_depth: 2,
                min_leaf: 3,
                row_subsample: 1.0,
            },
        ],
        n_layers: 1,
        bag_folds: 5,
        bag_repeats: 1,
        ensemble_iterations: 5,
        preset: Preset::HighQuality,
        seed,
    };
    let names: Vec<String> = (0..5).map(|j| format!("x{j}")).collect();
    let mut hits = 0;
    for seed in 0..100u64 {
        let mut rng = rng::rng_for(seed, "acceptance-importance");
        let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        // Equal-variance inputs: x0 carries 4 / (4 + 4 * 0.25) = 80% of the variance.
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] + 0.5 * (r[1] + r[2] + r[3] + r[4])).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let ens: StackEnsemble = stack::fit_stack_matrix(&cfg(seed), &x, &y, names.clone(), 5).map_err(|e| e.to_string())?;
        let rep = stack::permutation_importance(&ens, &x, &y, 5, seed).map_err(|e| e.to_string())?;
        hits += usize::from(rep.ranked()[0].feature == "x0");
    }
    ensure!(hits >= 95, "planted feature ranked first in {hits}/100 repeats");
    Ok(format!("planted feature ranked first in {hits}/100 repeats"))
}

const LIGHT_STACK: &str = r#"
[stack]
n_layers = 2
bag_folds = 3
bag_repeats = 1
ensemble_iterations = 10
preset = "high-quality"
seed = 0
base_learners = [{ ridge = { lambda = 1.0 } }, { gbdt = { n_rounds = 30, learning_rate = 0.1, max_depth = 3, min_leaf = 3, row_subsample = 1.0 } }]
"#;

fn cli(dir: &Path, threads: &str, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_orchardcast"))
        .current_dir(dir)
        .env("ORCHARDCAST_THREADS", threads)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "{:?} failed: {}", args, String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn chain(root: &Path, threads: &str) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    std::fs::create_dir_all(root).unwrap();
    cli(root, threads, &["synth", "--out", "data", "--seed", "42"])?;
    let cfg_path = root.join("data/orchardcast.toml");
    let mut text = std::fs::read_to_string(&cfg_path).unwrap();
    text.push_str(LIGHT_STACK);
    std::fs::write(&cfg_path, text).unwrap();
    let c = ["--config", "data/orchardcast.toml"];
    let steps: [&[&str]; 8] = [
        &["ingest"],
        &["featurize"],
        &["train"],
        &["evaluate"],
        &["importance", "--repeats", "3"],
        &["project", "--rcp", "4.5", "--tech", "wotech"],
        &["project", "--rcp", "8.5", "--tech", "wtech"],
        &["summarize", "--projections", "data/out/projections_rcp45-wotech.csv", "data/out/projections_rcp85-wtech.csv"],
    ];
    for step in steps {
        let args: Vec<&str> = step.iter().chain(&c).copied().collect();
        cli(root, threads, &args)?;
    }
    let mut files = BTreeMap::new();
    collect(root, root, &mut files);
    Ok(files)
}

fn collect(root: &Path, dir: &Path, files: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            collect(root, &p, files);
        } else {
            files.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
        }
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let a = chain(&tmp.path().join("a"), "1")?;
    let b = chain(&tmp.path().join("b"), "1")?;
    let c = chain(&tmp.path().join("c"), "8")?;
    ensure!(a.len() >= 10, "only {} files written", a.len());
    for (other, label) in [(&b, "repeat"), (&c, "8 threads")] {
        ensure!(a.keys().eq(other.keys()), "{label}: file sets differ");
        for (k, v) in &a {
            ensure!(other[k] == *v, "{label}: {} differs", k.display());
        }
    }
    Ok(format!("{} files byte-identical across 2 runs and 1 vs 8 threads", a.len()))
}

fn constant_climate(first: chrono::NaiveDate, last: chrono::NaiveDate, values: &[(&str, f64)]) -> CountyClimate {
    let dates: Vec<chrono::NaiveDate> = first.iter_days().take_while(|d| *d <= last).collect();
    let mut c = CountyClimate::new("Kern");
    for (v, x) in values {
        c.insert(CountyDailySeries::new("Kern".into(), v.to_string(), dates.clone(), vec![*x; dates.len()]).unwrap());
    }
    c
}

fn phenology_oracles() -> Outcome {
    let ch = phenology::chill_hours_daily(2.0, 12.0, 7.2).map_err(|e| e.to_string())?;
    let gdd = phenology::gdd_daily(10.0, 20.0, 4.5).map_err(|e| e.to_string())?;
    ensure!((ch - 12.48).abs() <= 1e-10, "chill hours {ch}");
    ensure!((gdd - 10.5).abs() <= 1e-10, "gdd {gdd}");
    let window = |feature: &str, variable: Option<&str>, aggregator, start: (u32, u32), end: (u32, u32), crosses| {
        PhenologyWindowSpec {
            feature_name: feature.into(),
            variable_name: variable.map(str::to_string),
            aggregator,
            threshold: (aggregator == Aggregator::ChillHours).then_some(7.2),
            base: (aggregator == Aggregator::Gdd).then_some(4.5),
            start: MonthDay::new(start.0, start.1).unwrap(),
            end: MonthDay::new(end.0, end.1).unwrap(),
            crosses_year_boundary: crosses,
        }
    };
    let windows = [
        window("late_winter_precip", Some("pr"), Aggregator::Sum, (2, 1), (3, 31), false),
        window("winter_chill", None, Aggregator::ChillHours, (12, 1), (2, 28), true),
        window("spring_gdd", None, Aggregator::Gdd, (2, 15), (3, 10), false),
        window("late_winter_tmax", Some("tmax"), Aggregator::Mean, (2, 1), (3, 31), false),
    ];
    let cfg = PhenologyConfig::default();
    let climate = constant_climate(
        chrono::NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
        chrono::NaiveDate::from_ymd_opt(2021, 12, 31).unwrap(),
        &[("pr", 1.5), ("tmin", 2.0), ("tmax", 12.0)],
    );
    // (year, Feb-Mar days, Dec-Feb days ending 02-28, Feb 15 - Mar 10 days)
    for (year, feb_mar, dec_feb, mid) in [(2019, 59, 90, 24), (2020, 60, 90, 25), (2021, 59, 90, 24)] {
        let want = [1.5 * f64::from(feb_mar), 12.48 * f64::from(dec_feb), 2.5 * f64::from(mid), 12.0];
        for (spec, w) in windows.iter().zip(want) {
            let g = phenology::extract_window(&climate, &cfg, spec, year).map_err(|e| e.to_string())?;
            ensure!((g - w).abs() <= 1e-10, "{year} {}: {g} vs {w}", spec.feature_name);
        }
    }
    Ok("12.48 h, 10.5 GDD, window sums exact for 2019-2021 including leap day".into())
}

fn main() {
    let start = Instant::now();
    println!("running acceptance criteria");
    let shared = shared();
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 metric oracles", Box::new(metric_oracles)),
        ("2 benchmark protocol shape", Box::new(|| protocol_shape(&shared))),
        ("3 stack dominance", Box::new(|| stack_dominance(&shared))),
        ("4 out-of-fold integrity audit", Box::new(|| oof_audit(&shared))),
        ("5 quantile and ensemble oracle", Box::new(quantile_oracle)),
        ("6 technology-scenario linearity", Box::new(|| tech_linearity(&shared))),
        ("7 historical seam", Box::new(|| historical_seam(&shared))),
        ("8 permutation importance recovery", Box::new(importance_recovery)),
        ("9 CLI determinism", Box::new(determinism)),
        ("10 phenology oracles", Box::new(phenology_oracles)),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({secs:.1}s) {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {name}: FAIL ({secs:.1}s) {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        checks.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
