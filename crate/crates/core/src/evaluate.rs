//! Benchmark harness: k-fold cross-validation on pooled out-of-fold
//! predictions plus a single train/test holdout, for every model in a list.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, FeatureTable, Normalizer, SplitKind};
use crate::error::{Error, Result};
use crate::io::{self, fmt_f64, Metadata};
use crate::learners::{self, r2_score, rmse, FittedModel, LearnerConfig, LearnerKind, Matrix};
use crate::rng;
use crate::stack::{self, StackConfig, StackEnsemble};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BenchmarkModel {
    Stack(StackConfig),
    Learner(LearnerKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub model: BenchmarkModel,
}

impl ModelEntry {
    pub fn is_stack(&self) -> bool {
        matches!(self.model, BenchmarkModel::Stack(_))
    }
}

/// The three rows of the standard comparison: the stack, an (almost)
/// unpenalized linear regression and a random forest.
pub fn standard_models(stack: StackConfig) -> Vec<ModelEntry> {
    vec![
        ModelEntry {
            name: "StackEnsemble".into(),
            model: BenchmarkModel::Stack(stack),
        },
        ModelEntry {
            name: "LinearRegression".into(),
            // One-hot counties plus an intercept are collinear; a vanishing
            // penalty keeps the normal equations solvable.
            model: BenchmarkModel::Learner(LearnerKind::Ridge { lambda: 1e-6 }),
        },
        ModelEntry {
            name: "RandomForest".into(),
            model: BenchmarkModel::Learner(LearnerKind::random_forest()),
        },
    ]
}

/// Where the normalizer is fit. `Global` leaks test-row statistics into
/// training and exists only to check that the harness does not use it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizationScope {
    PerFold,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub is_stack: bool,
    pub cv_r2: f64,
    pub cv_rmse: f64,
    pub split_r2: f64,
    pub split_rmse: f64,
}

impl ReportRow {
    pub fn cells(&self) -> [f64; 4] {
        [self.cv_r2, self.cv_rmse, self.split_r2, self.split_rmse]
    }
}

/// Row counts seen by one fit, for auditing the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitAudit {
    pub model: String,
    /// `cv-<fold>` or `holdout`.
    pub stage: String,
    pub n_train: usize,
    pub n_test: usize,
    pub normalizer_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub folds: usize,
    pub test_fraction: f64,
    pub n_rows: usize,
    pub normalization: NormalizationScope,
    pub rows: Vec<ReportRow>,
    pub audit: Vec<FitAudit>,
    /// Pooled CV predictions per model, in labelled-row order.
    #[serde(skip)]
    pub cv_predictions: Vec<Vec<f64>>,
}

enum Fitted {
    Stack(Box<StackEnsemble>),
    Learner(FittedModel),
}

fn fit_predict(
    entry: &ModelEntry,
    x_raw: &Matrix,
    y: &[f64],
    train: &[usize],
    test: &[usize],
    global: Option<&Normalizer>,
    n_normalized: usize,
    seed: u64,
) -> Result<(Vec<f64>, usize)> {
    let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let x_train_raw = x_raw.select_rows(train);
    let x_test_raw = x_raw.select_rows(test);
    let names: Vec<String> = (0..x_raw.cols()).map(|j| format!("c{j}")).collect();
    let (normalizer, n_norm_rows) = match global {
        Some(g) => (g.clone(), g.n_training_rows),
        None => {
            let n = dataset::fit_columns(&x_train_raw, n_normalized, true)?;
            let rows = n.n_training_rows;
            (n, rows)
        }
    };
    let fitted = match &entry.model {
        BenchmarkModel::Stack(cfg) => {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            // The stack normalizes internally; with a global normalizer the
            // input arrives pre-scaled and the internal one is a no-op.
            let (x, n_norm) = match global {
                Some(g) => (g.transform(&x_train_raw)?, 0),
                None => (x_train_raw.clone(), n_normalized),
            };
            Fitted::Stack(Box::new(stack::fit_stack_matrix(&cfg, &x, &y_train, names, n_norm)?))
        }
        BenchmarkModel::Learner(kind) => {
            let cfg = LearnerConfig::new(kind.clone(), seed);
            Fitted::Learner(learners::fit(&cfg, &normalizer.transform(&x_train_raw)?, &y_train)?)
        }
    };
    let preds = match fitted {
        Fitted::Stack(ens) => match global {
            Some(g) => ens.predict(&g.transform(&x_test_raw)?)?,
            None => ens.predict(&x_test_raw)?,
        },
        Fitted::Learner(m) => learners::predict(&m, &normalizer.transform(&x_test_raw)?)?,
    };
    Ok((preds, n_norm_rows))
}

/// Runs the benchmark on every labelled row of `table`.
pub fn run_benchmark(
    table: &FeatureTable,
    models: &[ModelEntry],
    k: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<BenchmarkReport> {
    run_benchmark_scoped(table, models, k, test_fraction, seed, NormalizationScope::PerFold)
}

pub fn run_benchmark_scoped(
    table: &FeatureTable,
    models: &[ModelEntry],
    k: usize,
    test_fraction: f64,
    seed: u64,
    scope: NormalizationScope,
) -> Result<BenchmarkReport> {
    if models.is_empty() {
        return Err(Error::config("benchmark needs at least one model"));
    }
    let rows = table.labelled_rows();
    let n = rows.len();
    if k < 2 || n < k {
        return Err(Error::validation(
            "benchmark",
            format!("{n} labelled rows cannot be split into {k} folds"),
        ));
    }
    let x = table.matrix(&rows);
    let y = table.targets(&rows)?;
    let n_normalized = dataset::N_CLIMATE_COLUMNS.min(table.n_cols());
    let global = match scope {
        NormalizationScope::PerFold => None,
        NormalizationScope::Global => Some(dataset::fit_columns(&x, n_normalized, false)?),
    };
    let cv = dataset::make_split(n, SplitKind::KFold { k, repeats: 1 }, rng::derive(seed, "benchmark-cv"))?;
    let holdout = dataset::make_split(n, SplitKind::Holdout { test_fraction }, rng::derive(seed, "benchmark-holdout"))?;
    let folds = cv.folds(0);
    let (h_train, h_test) = (holdout.train_rows(), holdout.test_rows());

    // One job per (model, stage); stage k is the holdout.
    let jobs: Vec<(usize, usize)> = (0..models.len()).flat_map(|m| (0..=k).map(move |s| (m, s))).collect();
    let results: Vec<(Vec<f64>, usize)> = jobs
        .par_iter()
        .map(|&(m, s)| {
            let (train, test) = if s < k { (&folds[s].0, &folds[s].1) } else { (&h_train, &h_test) };
            let fit_seed = rng::derive_indexed(rng::derive_indexed(seed, "benchmark-model", m as u64), "stage", s as u64);
            fit_predict(&models[m], &x, &y, train, test, global.as_ref(), n_normalized, fit_seed)
                .map_err(|e| e.context(format!("{} {}", models[m].name, if s < k { format!("fold {s}") } else { "holdout".into() })))
        })
        .collect::<Result<_>>()?;

    let mut report_rows = Vec::new();
    let mut audit = Vec::new();
    let mut cv_predictions = Vec::new();
    for (m, entry) in models.iter().enumerate() {
        let mut pooled = vec![f64::NAN; n];
        for s in 0..=k {
            let (preds, norm_rows) = &results[m * (k + 1) + s];
            let (train, test) = if s < k { (&folds[s].0, &folds[s].1) } else { (&h_train, &h_test) };
            if s < k {
                for (&i, p) in test.iter().zip(preds) {
                    pooled[i] = *p;
                }
            }
            audit.push(FitAudit {
                model: entry.name.clone(),
                stage: if s < k { format!("cv-{s}") } else { "holdout".into() },
                n_train: train.len(),
                n_test: test.len(),
                normalizer_rows: *norm_rows,
            });
        }
        let (split_preds, _) = &results[m * (k + 1) + k];
        let y_test: Vec<f64> = h_test.iter().map(|&i| y[i]).collect();
        report_rows.push(ReportRow {
            model: entry.name.clone(),
            is_stack: entry.is_stack(),
            cv_r2: r2_score(&y, &pooled)?,
            cv_rmse: rmse(&y, &pooled)?,
            split_r2: r2_score(&y_test, split_preds)?,
            split_rmse: rmse(&y_test, split_preds)?,
        });
        cv_predictions.push(pooled);
    }
    Ok(BenchmarkReport {
        seed,
        folds: k,
        test_fraction,
        n_rows: n,
        normalization: scope,
        rows: report_rows,
        audit,
        cv_predictions,
    })
}

/// Metric-wise ranks: index `[row][cell]`, competition style (1, 1, 3).
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub ranks: Vec<[usize; 4]>,
    /// The stack is strictly best on every cell.
    pub stack_best_all: bool,
    /// The stack is strictly best on both R² cells.
    pub stack_best_r2: bool,
}

pub const CELL_NAMES: [&str; 4] = ["cv_r2", "cv_rmse", "split_r2", "split_rmse"];

pub fn compare_rows(report: &BenchmarkReport) -> Ranking {
    let rows = &report.rows;
    let mut ranks = vec![[0usize; 4]; rows.len()];
    for c in 0..4 {
        let higher_better = c % 2 == 0;
        for (i, r) in rows.iter().enumerate() {
            let v = r.cells()[c];
            let better = rows
                .iter()
                .filter(|o| if higher_better { o.cells()[c] > v } else { o.cells()[c] < v })
                .count();
            ranks[i][c] = better + 1;
        }
    }
    let sole_best = |i: usize, c: usize| {
        ranks[i][c] == 1 && ranks.iter().enumerate().all(|(j, r)| j == i || r[c] > 1)
    };
    let stack = rows.iter().position(|r| r.is_stack);
    let stack_best_all = stack.is_some_and(|i| (0..4).all(|c| sole_best(i, c)));
    let stack_best_r2 = stack.is_some_and(|i| sole_best(i, 0) && sole_best(i, 2));
    Ranking {
        ranks,
        stack_best_all,
        stack_best_r2,
    }
}

pub const REPORT_HEADER: [&str; 6] = ["model", "is_stack", "cv_r2", "cv_rmse", "split_r2", "split_rmse"];

impl BenchmarkReport {
    pub fn metadata(&self, base: Metadata) -> Metadata {
        base.with("seed", self.seed)
            .with("folds", self.folds)
            .with("test_fraction", fmt_f64(self.test_fraction))
            .with("rows", self.n_rows)
            .with(
                "normalization",
                match self.normalization {
                    NormalizationScope::PerFold => "per-fold",
                    NormalizationScope::Global => "global",
                },
            )
    }

    pub fn to_csv(&self, base: Metadata) -> Result<String> {
        io::render_csv(
            &self.metadata(base),
            &REPORT_HEADER,
            self.rows.iter().map(|r| {
                vec![
                    r.model.clone(),
                    r.is_stack.to_string(),
                    fmt_f64(r.cv_r2),
                    fmt_f64(r.cv_rmse),
                    fmt_f64(r.split_r2),
                    fmt_f64(r.split_rmse),
                ]
            }),
        )
    }

    /// Parses the CSV form. Fit audits and pooled predictions are not stored.
    pub fn parse_csv(text: &str, location: &str) -> Result<Self> {
        let meta = Metadata::parse(text);
        let need = |k: &str| {
            meta.get(k)
                .map(str::to_string)
                .ok_or_else(|| Error::schema(location, format!("missing metadata `{k}`")))
        };
        let num = |k: &str| -> Result<f64> { io::parse_f64(location, k, &need(k)?) };
        let mut rdr = io::csv_reader(text);
        let headers = rdr.headers().map_err(|e| io::csv_err(location, e))?.clone();
        io::expect_header(location, &headers, &REPORT_HEADER)?;
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| io::csv_err(location, e))?;
            let loc = format!("{location} row {}", i + 1);
            let f = |j: usize| io::parse_f64(&loc, REPORT_HEADER[j], &rec[j]);
            rows.push(ReportRow {
                model: rec[0].to_string(),
                is_stack: rec[1]
                    .parse()
                    .map_err(|_| Error::schema(&loc, format!("bad is_stack `{}`", &rec[1])))?,
                cv_r2: f(2)?,
                cv_rmse: f(3)?,
                split_r2: f(4)?,
                split_rmse: f(5)?,
            });
        }
        Ok(BenchmarkReport {
            seed: need("seed")?
                .parse()
                .map_err(|_| Error::schema(location, "bad seed"))?,
            folds: num("folds")? as usize,
            test_fraction: num("test_fraction")?,
            n_rows: num("rows")? as usize,
            normalization: match need("normalization")?.as_str() {
                "per-fold" => NormalizationScope::PerFold,
                "global" => NormalizationScope::Global,
                other => return Err(Error::schema(location, format!("bad normalization `{other}`"))),
            },
            rows,
            audit: Vec::new(),
            cv_predictions: Vec::new(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("serializing report: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::schema("benchmark report", e.to_string()))
    }

    /// Aligned text table, one row per model.
    pub fn render_table(&self) -> String {
        let heads = ["Model", "Cross-Validation R²", "Cross-Validation RMSE", "Train-Test R²", "Train-Test RMSE"];
        let width0 = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(heads[0].len());
        let mut out = String::new();
        let _ = write!(out, "{:<width0$}", heads[0]);
        for h in &heads[1..] {
            let _ = write!(out, "  {:>w$}", h, w = h.chars().count());
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<width0$}", r.model);
            for (h, v) in heads[1..].iter().zip(r.cells()) {
                let _ = write!(out, "  {:>w$.3}", v, w = h.chars().count());
            }
            out.push('\n');
        }
        out
    }
}
