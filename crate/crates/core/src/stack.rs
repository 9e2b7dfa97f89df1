//! Stacked ensembles of bagged base learners.
//!
//! Every base learner is bagged with repeated k-fold: each of the `k × r`
//! fold-models is trained on the rows outside its fold and predicts the rows
//! inside it, giving each training row `r` out-of-fold (OOF) predictions,
//! which are averaged. Layer `ℓ + 1` sees the original features plus one
//! OOF column per layer-`ℓ` model; at inference the OOF column is replaced
//! by the bag prediction (mean over all fold-models). The last layer is
//! combined by greedy forward selection with replacement.
//!
//! All layers share one fold assignment, derived from the stack seed.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::dataset::{self, FeatureTable, Normalizer, SplitKind, SplitPlan};
use crate::error::{Error, Result};
use crate::learners::{self, r2_score, rmse, FittedModel, LearnerConfig, LearnerKind, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "high-quality")]
    HighQuality,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high-quality" | "high_quality" => Ok(Preset::HighQuality),
            other => Err(Error::config(format!("unknown preset `{other}`; only `high-quality` is supported"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub base_learners: Vec<LearnerKind>,
    pub n_layers: usize,
    pub bag_folds: usize,
    pub bag_repeats: usize,
    pub ensemble_iterations: usize,
    pub preset: Preset,
    pub seed: u64,
}

impl StackConfig {
    /// Ridge, random forest and GBDT over two layers, 5-fold bagging
    /// repeated twice, 25 greedy ensemble steps.
    pub fn high_quality(seed: u64) -> Self {
        StackConfig {
            base_learners: vec![LearnerKind::ridge(), LearnerKind::random_forest(), LearnerKind::gbdt()],
            n_layers: 2,
            bag_folds: 5,
            bag_repeats: 2,
            ensemble_iterations: 25,
            preset: Preset::HighQuality,
            seed,
        }
    }

    pub fn from_preset(preset: Preset, seed: u64) -> Self {
        match preset {
            Preset::HighQuality => StackConfig::high_quality(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_learners.is_empty() {
            return Err(Error::config("stack needs at least one base learner"));
        }
        if self.n_layers < 1 {
            return Err(Error::config("stack needs at least one layer"));
        }
        if self.bag_folds < 2 {
            return Err(Error::config(format!("bag_folds must be >= 2, got {}", self.bag_folds)));
        }
        if self.bag_repeats < 1 {
            return Err(Error::config("bag_repeats must be >= 1"));
        }
        for kind in &self.base_learners {
            LearnerConfig::new(kind.clone(), 0).validate()?;
        }
        Ok(())
    }
}

/// One base learner bagged over `k × r` folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggedModel {
    pub learner: LearnerConfig,
    /// Repeat-major: index `repeat * k + fold`.
    pub fold_models: Vec<FittedModel>,
    /// Rows (positions in the training matrix) each fold-model was fit on.
    pub fold_train_rows: Vec<Vec<usize>>,
    /// Rows each fold-model predicted to produce OOF values.
    pub fold_oof_rows: Vec<Vec<usize>>,
    pub oof_predictions: Vec<f64>,
}

/// Fits a bag with a fresh repeated k-fold assignment drawn from `seed`.
pub fn fit_bagged(
    config: &LearnerConfig,
    x: &Matrix,
    y: &[f64],
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<BaggedModel> {
    let plan = dataset::make_split(x.rows(), SplitKind::KFold { k, repeats }, seed)?;
    fit_bagged_with_plan(config, x, y, &plan)
}

/// Fits a bag over a given k-fold plan.
pub fn fit_bagged_with_plan(config: &LearnerConfig, x: &Matrix, y: &[f64], plan: &SplitPlan) -> Result<BaggedModel> {
    if x.rows() != y.len() || plan.n_rows() != y.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            found: x.rows().min(plan.n_rows()),
        });
    }
    let repeats = plan.assignments.len();
    let jobs: Vec<(usize, usize, Vec<usize>, Vec<usize>)> = (0..repeats)
        .flat_map(|r| {
            plan.folds(r)
                .into_iter()
                .enumerate()
                .map(move |(f, (train, held))| (r, f, train, held))
        })
        .collect();
    let fitted: Vec<(FittedModel, Vec<f64>)> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, (r, f, train, held))| {
            let fold_cfg = LearnerConfig::new(
                config.kind.clone(),
                rng::derive_indexed(config.seed, "fold-model", j as u64),
            );
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let model = learners::fit(&fold_cfg, &x.select_rows(train), &y_train)
                .map_err(|e| e.context(format!("{} repeat {r}, fold {f}", config.kind.name())))?;
            let preds = learners::predict(&model, &x.select_rows(held))?;
            Ok((model, preds))
        })
        .collect::<Result<_>>()?;

    let n = y.len();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    let mut fold_models = Vec::with_capacity(jobs.len());
    let mut fold_train_rows = Vec::with_capacity(jobs.len());
    let mut fold_oof_rows = Vec::with_capacity(jobs.len());
    for ((_, _, train, held), (model, preds)) in jobs.into_iter().zip(fitted) {
        for (&i, p) in held.iter().zip(&preds) {
            sum[i] += p;
            count[i] += 1;
        }
        fold_models.push(model);
        fold_train_rows.push(train);
        fold_oof_rows.push(held);
    }
    let oof_predictions = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    Ok(BaggedModel {
        learner: config.clone(),
        fold_models,
        fold_train_rows,
        fold_oof_rows,
        oof_predictions,
    })
}

impl BaggedModel {
    /// Mean prediction over all fold-models.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; x.rows()];
        for m in &self.fold_models {
            for (a, p) in acc.iter_mut().zip(learners::predict(m, x)?) {
                *a += p;
            }
        }
        let n = self.fold_models.len() as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }

    /// Number of audit violations: a fold-model predicting a row it was
    /// trained on, or a row without exactly `repeats` OOF predictions.
    pub fn audit(&self, n_rows: usize, repeats: usize) -> usize {
        let mut violations = 0;
        let mut count = vec![0usize; n_rows];
        for (train, held) in self.fold_train_rows.iter().zip(&self.fold_oof_rows) {
            let mut in_train = vec![false; n_rows];
            for &i in train {
                in_train[i] = true;
            }
            for &i in held {
                if in_train[i] {
                    violations += 1;
                }
                count[i] += 1;
            }
        }
        violations + count.iter().filter(|&&c| c != repeats).count()
    }
}

/// Greedy forward selection with replacement over candidate prediction
/// vectors. Starts from the best single candidate, runs `iterations`
/// additions, and returns the selection frequencies of the lowest-RMSE
/// ensemble seen along the way.
pub fn greedy_weights(candidates: &[Vec<f64>], y: &[f64], iterations: usize) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::config("greedy selection needs at least one candidate"));
    }
    let m = candidates.len();
    let score = |pred: &[f64]| rmse(y, pred);

    let mut best_single = 0;
    let mut best_single_score = f64::INFINITY;
    for (j, c) in candidates.iter().enumerate() {
        let s = score(c)?;
        if s < best_single_score {
            best_single = j;
            best_single_score = s;
        }
    }
    let mut counts = vec![0usize; m];
    counts[best_single] = 1;
    let mut sum = candidates[best_single].clone();
    let mut total = 1usize;
    let mut best_counts = counts.clone();
    let mut best_score = best_single_score;

    let mut trial = vec![0.0; y.len()];
    for _ in 0..iterations {
        let mut pick = 0;
        let mut pick_score = f64::INFINITY;
        for (j, c) in candidates.iter().enumerate() {
            for ((t, s), v) in trial.iter_mut().zip(&sum).zip(c) {
                *t = (s + v) / (total + 1) as f64;
            }
            let sc = score(&trial)?;
            if sc < pick_score {
                pick = j;
                pick_score = sc;
            }
        }
        counts[pick] += 1;
        total += 1;
        for (s, v) in sum.iter_mut().zip(&candidates[pick]) {
            *s += v;
        }
        if pick_score < best_score {
            best_score = pick_score;
            best_counts = counts.clone();
        }
    }
    let n: usize = best_counts.iter().sum();
    Ok(best_counts.iter().map(|&c| c as f64 / n as f64).collect())
}

/// Weighted combination `Σ w_j p_j`, summed in candidate order.
pub fn combine(weights: &[f64], preds: &[Vec<f64>]) -> Vec<f64> {
    let n = preds.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for (w, p) in weights.iter().zip(preds) {
        if *w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(p) {
            *o += w * v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackEnsemble {
    pub config: StackConfig,
    pub column_names: Vec<String>,
    pub normalizer: Normalizer,
    pub layers: Vec<Vec<BaggedModel>>,
    /// Input column names of each layer.
    pub layer_columns: Vec<Vec<String>>,
    pub final_weights: Vec<f64>,
    pub n_training_rows: usize,
}

/// Fits a stack on the labelled `training_rows` of `table`. The normalizer
/// is fit on those rows only and stored with the ensemble.
pub fn fit_stack(config: &StackConfig, table: &FeatureTable, training_rows: &[usize]) -> Result<StackEnsemble> {
    let x = table.matrix(training_rows);
    let y = table.targets(training_rows)?;
    let n_normalized = dataset::N_CLIMATE_COLUMNS.min(table.n_cols());
    fit_stack_matrix(config, &x, &y, table.column_names.clone(), n_normalized)
}

/// Fits a stack on a raw matrix; the first `n_normalized` columns are
/// z-scored with statistics from `x`.
pub fn fit_stack_matrix(
    config: &StackConfig,
    x_raw: &Matrix,
    y: &[f64],
    column_names: Vec<String>,
    n_normalized: usize,
) -> Result<StackEnsemble> {
    config.validate()?;
    let n = x_raw.rows();
    if n != y.len() {
        return Err(Error::Dimension {
            expected: n,
            found: y.len(),
        });
    }
    if column_names.len() != x_raw.cols() {
        return Err(Error::Dimension {
            expected: x_raw.cols(),
            found: column_names.len(),
        });
    }
    if n < 5 * config.bag_folds {
        return Err(Error::validation(
            "stack training",
            format!("{n} rows; at least {} needed for {}-fold bagging", 5 * config.bag_folds, config.bag_folds),
        ));
    }
    let normalizer = dataset::fit_columns(x_raw, n_normalized, true)?;
    let x0 = normalizer.transform(x_raw)?;
    let plan = dataset::make_split(
        n,
        SplitKind::KFold {
            k: config.bag_folds,
            repeats: config.bag_repeats,
        },
        rng::derive(config.seed, "bag-split"),
    )?;

    let mut layers: Vec<Vec<BaggedModel>> = Vec::with_capacity(config.n_layers);
    let mut layer_columns = Vec::with_capacity(config.n_layers);
    let mut input = x0.clone();
    let mut names = column_names.clone();
    for layer in 0..config.n_layers {
        let mut bags = Vec::new();
        let mut failures = Vec::new();
        for (j, kind) in config.base_learners.iter().enumerate() {
            let lc = LearnerConfig::new(
                kind.clone(),
                rng::derive_indexed(config.seed, &format!("layer{layer}-learner"), j as u64),
            );
            match fit_bagged_with_plan(&lc, &input, y, &plan) {
                Ok(b) => bags.push(b),
                Err(e) => {
                    log::warn!("layer {}: {} failed: {e}", layer + 1, kind.name());
                    failures.push(format!("{}: {e}", kind.name()));
                }
            }
        }
        if bags.is_empty() {
            return Err(Error::numerical(format!(
                "every learner failed in layer {}: {}",
                layer + 1,
                failures.join("; ")
            )));
        }
        layer_columns.push(names.clone());
        if layer + 1 < config.n_layers {
            let mut oof = Matrix::zeros(n, bags.len());
            for (j, b) in bags.iter().enumerate() {
                oof.set_column(j, &b.oof_predictions);
            }
            input = x0.hstack(&oof)?;
            names = column_names.clone();
            names.extend(bags.iter().enumerate().map(|(j, b)| format!("l{}_{}_{j}", layer + 1, b.learner.kind.name())));
        }
        layers.push(bags);
    }

    let last: Vec<Vec<f64>> = layers
        .last()
        .unwrap()
        .iter()
        .map(|b| b.oof_predictions.clone())
        .collect();
    let final_weights = greedy_weights(&last, y, config.ensemble_iterations)?;
    Ok(StackEnsemble {
        config: config.clone(),
        column_names,
        normalizer,
        layers,
        layer_columns,
        final_weights,
        n_training_rows: n,
    })
}

impl StackEnsemble {
    /// Bag predictions of every last-layer model, feeding each layer's bag
    /// predictions forward as stack features.
    pub fn last_layer_predictions(&self, x_raw: &Matrix) -> Result<Vec<Vec<f64>>> {
        if x_raw.rows() > 0 && x_raw.cols() != self.column_names.len() {
            return Err(Error::Dimension {
                expected: self.column_names.len(),
                found: x_raw.cols(),
            });
        }
        let x0 = self.normalizer.transform(x_raw)?;
        let mut input = x0.clone();
        let mut preds = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            preds = layer
                .iter()
                .map(|b| b.predict(&input))
                .collect::<Result<Vec<_>>>()?;
            if l + 1 < self.layers.len() {
                let mut cols = Matrix::zeros(x_raw.rows(), preds.len());
                for (j, p) in preds.iter().enumerate() {
                    cols.set_column(j, p);
                }
                input = x0.hstack(&cols)?;
            }
        }
        Ok(preds)
    }

    /// Ensemble predictions for raw (un-normalized) rows.
    pub fn predict(&self, x_raw: &Matrix) -> Result<Vec<f64>> {
        Ok(combine(&self.final_weights, &self.last_layer_predictions(x_raw)?))
    }

    /// Weighted ensemble of the last layer's OOF predictions.
    pub fn oof_predictions(&self) -> Vec<f64> {
        let oof: Vec<Vec<f64>> = self
            .layers
            .last()
            .map(|l| l.iter().map(|b| b.oof_predictions.clone()).collect())
            .unwrap_or_default();
        combine(&self.final_weights, &oof)
    }

    /// Total audit violations over every bag in every layer.
    pub fn audit(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|b| b.audit(self.n_training_rows, self.config.bag_repeats))
            .sum()
    }
}

/// Predicts the given rows of a feature table.
pub fn predict_stack(ens: &StackEnsemble, table: &FeatureTable, rows: &[usize]) -> Result<Vec<f64>> {
    if table.n_cols() != ens.column_names.len() {
        return Err(Error::Dimension {
            expected: ens.column_names.len(),
            found: table.n_cols(),
        });
    }
    ens.predict(&table.matrix(rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_r2_drop: f64,
    pub std_r2_drop: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub baseline_r2: f64,
    /// In input-column order.
    pub features: Vec<FeatureImportance>,
}

pub const IMPORTANCE_HEADER: [&str; 4] = ["feature", "mean_r2_drop", "std_r2_drop", "rank"];

impl ImportanceReport {
    pub fn ranked(&self) -> Vec<&FeatureImportance> {
        let mut v: Vec<&FeatureImportance> = self.features.iter().collect();
        v.sort_by_key(|f| f.rank);
        v
    }

    /// CSV rows in rank order.
    pub fn to_csv(&self, meta: &crate::io::Metadata) -> Result<String> {
        let meta = meta.clone().with("baseline_r2", crate::io::fmt_f64(self.baseline_r2));
        crate::io::render_csv(
            &meta,
            &IMPORTANCE_HEADER,
            self.ranked().into_iter().map(|f| {
                vec![
                    f.feature.clone(),
                    crate::io::fmt_f64(f.mean_r2_drop),
                    crate::io::fmt_f64(f.std_r2_drop),
                    f.rank.to_string(),
                ]
            }),
        )
    }
}

/// Shuffles column `column` of a copy of `x` with the permutation drawn for
/// `(seed, column, repeat)`.
fn shuffled(x: &Matrix, column: usize, seed: u64, repeat: usize) -> Matrix {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..x.rows()).collect();
    let s = rng::derive_indexed(rng::derive_indexed(seed, "importance-column", column as u64), "repeat", repeat as u64);
    perm.shuffle(&mut rng::rng_from(s));
    let col = x.column(column);
    let mut out = x.clone();
    for (i, &p) in perm.iter().enumerate() {
        out.set(i, column, col[p]);
    }
    out
}

/// Drop in R² when each input column is shuffled, averaged over `repeats`.
pub fn permutation_importance(
    ens: &StackEnsemble,
    x_raw: &Matrix,
    y: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    if x_raw.rows() < 10 {
        return Err(Error::validation("permutation importance", "needs at least 10 rows"));
    }
    if repeats < 1 {
        return Err(Error::config("permutation importance needs at least one repeat"));
    }
    let baseline = r2_score(y, &ens.predict(x_raw)?)?;
    let stats: Vec<(f64, f64)> = (0..x_raw.cols())
        .into_par_iter()
        .map(|j| {
            let drops = (0..repeats)
                .map(|r| Ok(baseline - r2_score(y, &ens.predict(&shuffled(x_raw, j, seed, r))?)?))
                .collect::<Result<Vec<f64>>>()?;
            let mean = drops.iter().sum::<f64>() / repeats as f64;
            let var = drops.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / repeats as f64;
            Ok((mean, var.sqrt()))
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| stats[b].0.total_cmp(&stats[a].0).then(a.cmp(&b)));
    let mut rank = vec![0; stats.len()];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r + 1;
    }
    Ok(ImportanceReport {
        baseline_r2: baseline,
        features: stats
            .iter()
            .enumerate()
            .map(|(j, &(mean, std))| FeatureImportance {
                feature: ens.column_names[j].clone(),
                mean_r2_drop: mean,
                std_r2_drop: std,
                rank: rank[j],
            })
            .collect(),
    })
}
