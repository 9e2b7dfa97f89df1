//! Deterministic base regressors and skill metrics.

mod matrix;
mod metrics;
pub mod ridge;
pub mod tree;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use matrix::Matrix;
pub use metrics::{r2_score, rmse};
pub use ridge::{fit_ridge, RidgeModel};
pub use tree::{Tree, TreeParams};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Ridge {
        lambda: f64,
    },
    RandomForest {
        n_trees: usize,
        min_leaf: usize,
        max_depth: Option<usize>,
        feature_fraction: f64,
        bootstrap: bool,
    },
    Gbdt {
        n_rounds: usize,
        learning_rate: f64,
        max_depth: usize,
        min_leaf: usize,
        row_subsample: f64,
    },
}

impl LearnerKind {
    pub fn ridge() -> Self {
        LearnerKind::Ridge { lambda: 1.0 }
    }

    pub fn random_forest() -> Self {
        LearnerKind::RandomForest {
            n_trees: 300,
            min_leaf: 2,
            max_depth: None,
            feature_fraction: 1.0 / 3.0,
            bootstrap: true,
        }
    }

    pub fn gbdt() -> Self {
        LearnerKind::Gbdt {
            n_rounds: 300,
            learning_rate: 0.05,
            max_depth: 3,
            min_leaf: 5,
            row_subsample: 0.8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Ridge { .. } => "ridge",
            LearnerKind::RandomForest { .. } => "random_forest",
            LearnerKind::Gbdt { .. } => "gbdt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub seed: u64,
}

impl LearnerConfig {
    pub fn new(kind: LearnerKind, seed: u64) -> Self {
        LearnerConfig { kind, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("{}: {m}", self.kind.name())));
        match self.kind {
            LearnerKind::Ridge { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => bad("lambda must be >= 0"),
            LearnerKind::RandomForest {
                n_trees,
                min_leaf,
                feature_fraction,
                ..
            } => {
                if n_trees < 1 {
                    bad("n_trees must be >= 1")
                } else if min_leaf < 1 {
                    bad("min_leaf must be >= 1")
                } else if !(feature_fraction > 0.0 && feature_fraction <= 1.0) {
                    bad("feature_fraction must lie in (0, 1]")
                } else {
                    Ok(())
                }
            }
            LearnerKind::Gbdt {
                n_rounds,
                learning_rate,
                min_leaf,
                row_subsample,
                ..
            } => {
                if n_rounds < 1 {
                    bad("n_rounds must be >= 1")
                } else if min_leaf < 1 {
                    bad("min_leaf must be >= 1")
                } else if !(row_subsample > 0.0 && row_subsample <= 1.0) {
                    bad("row_subsample must lie in (0, 1]")
                } else if !(learning_rate > 0.0 && learning_rate.is_finite()) {
                    bad("learning_rate must be positive")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Ridge(RidgeModel),
    Forest { trees: Vec<Tree> },
    Gbdt {
        base: f64,
        learning_rate: f64,
        trees: Vec<Tree>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub kind: String,
    pub n_features: usize,
    /// Empty unless the caller attached names.
    pub column_names: Vec<String>,
    pub params: ModelParams,
}

fn check_inputs(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::Dimension {
            expected: x.rows(),
            found: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::validation("fit", "needs at least two rows"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("fit", "target contains missing or non-finite values"));
    }
    for i in 0..x.rows() {
        if x.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("fit, row {i}"), "missing or non-finite feature value"));
        }
    }
    Ok(())
}

/// Fits a learner to `x`, `y`.
pub fn fit(config: &LearnerConfig, x: &Matrix, y: &[f64]) -> Result<FittedModel> {
    config.validate()?;
    check_inputs(x, y)?;
    let n = x.rows();
    let p = x.cols();
    let params = match config.kind {
        LearnerKind::Ridge { lambda } => ModelParams::Ridge(ridge::fit_ridge(x, y, lambda)?),
        LearnerKind::RandomForest {
            n_trees,
            min_leaf,
            max_depth,
            feature_fraction,
            bootstrap,
        } => {
            let max_features = ((p as f64 * feature_fraction).ceil() as usize).clamp(1, p.max(1));
            let tp = TreeParams {
                min_leaf,
                max_depth,
                max_features: Some(max_features),
            };
            let trees = (0..n_trees)
                .into_par_iter()
                .map(|t| {
                    let mut r = rng::rng_from(rng::derive_indexed(config.seed, "forest-tree", t as u64));
                    let samples: Vec<usize> = if bootstrap {
                        (0..n).map(|_| r.gen_range(0..n)).collect()
                    } else {
                        (0..n).collect()
                    };
                    tree::grow(x, y, &samples, tp, &mut r)
                })
                .collect();
            ModelParams::Forest { trees }
        }
        LearnerKind::Gbdt {
            n_rounds,
            learning_rate,
            max_depth,
            min_leaf,
            row_subsample,
        } => {
            let base = y.iter().sum::<f64>() / n as f64;
            let mut pred = vec![base; n];
            let mut resid = vec![0.0; n];
            let tp = TreeParams {
                min_leaf,
                max_depth: Some(max_depth),
                max_features: None,
            };
            let n_sub = ((n as f64 * row_subsample).round() as usize).clamp(1, n);
            let mut trees = Vec::with_capacity(n_rounds);
            for round in 0..n_rounds {
                for i in 0..n {
                    resid[i] = y[i] - pred[i];
                }
                let mut r = rng::rng_from(rng::derive_indexed(config.seed, "gbdt-round", round as u64));
                let samples: Vec<usize> = if n_sub < n {
                    let mut s = sample(&mut r, n, n_sub).into_vec();
                    s.sort_unstable();
                    s
                } else {
                    (0..n).collect()
                };
                let t = tree::grow(x, &resid, &samples, tp, &mut r);
                for (i, p) in pred.iter_mut().enumerate() {
                    *p += learning_rate * t.predict_row(x.row(i));
                }
                trees.push(t);
            }
            ModelParams::Gbdt {
                base,
                learning_rate,
                trees,
            }
        }
    };
    Ok(FittedModel {
        kind: config.kind.name().to_string(),
        n_features: p,
        column_names: Vec::new(),
        params,
    })
}

impl FittedModel {
    pub fn with_columns(mut self, names: Vec<String>) -> Self {
        self.column_names = names;
        self
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Ridge(m) => m.predict_row(x),
            ModelParams::Forest { trees } => {
                trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / trees.len() as f64
            }
            ModelParams::Gbdt {
                base,
                learning_rate,
                trees,
            } => {
                let mut acc = *base;
                for t in trees {
                    acc += learning_rate * t.predict_row(x);
                }
                acc
            }
        }
    }

    /// The ridge parameters, when this is a ridge model.
    pub fn as_ridge(&self) -> Option<&RidgeModel> {
        match &self.params {
            ModelParams::Ridge(m) => Some(m),
            _ => None,
        }
    }
}

/// Predicts every row of `x`.
pub fn predict(model: &FittedModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.rows() > 0 && x.cols() != model.n_features {
        return Err(Error::Dimension {
            expected: model.n_features,
            found: x.cols(),
        });
    }
    Ok((0..x.rows())
        .into_par_iter()
        .map(|i| model.predict_row(x.row(i)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn synthetic(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut r = rng::rng_from(seed);
        let mut x = Matrix::zeros(0, 4);
        let mut y = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..4).map(|_| r.gen_range(-2.0..2.0)).collect();
            y.push(row[0] * row[0] + 0.5 * row[1] - row[2] + 0.1 * r.gen_range(-1.0..1.0));
            x.push_row(&row);
        }
        (x, y)
    }

    fn small_forest() -> LearnerKind {
        LearnerKind::RandomForest {
            n_trees: 20,
            min_leaf: 2,
            max_depth: None,
            feature_fraction: 1.0 / 3.0,
            bootstrap: true,
        }
    }

    fn small_gbdt(row_subsample: f64) -> LearnerKind {
        LearnerKind::Gbdt {
            n_rounds: 40,
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf: 3,
            row_subsample,
        }
    }

    #[test]
    fn constant_target_any_learner() {
        let (x, _) = synthetic(30, 1);
        let y = vec![2.7; 30];
        for kind in [LearnerKind::ridge(), small_forest(), small_gbdt(0.8)] {
            let m = fit(&LearnerConfig::new(kind, 5), &x, &y).unwrap();
            for p in predict(&m, &x).unwrap() {
                assert!((p - 2.7).abs() < 1e-12, "{}: {p}", m.kind);
            }
        }
    }

    #[test]
    fn ridge_interpolates_when_underdetermined() {
        // n = p + 1 independent rows: an exact fit exists.
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [2.0, 3.0]]).unwrap();
        let y = [1.0, -1.0, 4.0];
        let m = fit(&LearnerConfig::new(LearnerKind::Ridge { lambda: 0.0 }, 0), &x, &y).unwrap();
        for (p, t) in predict(&m, &x).unwrap().iter().zip(y) {
            assert!((p - t).abs() < 1e-8);
        }
    }

    #[test]
    fn ridge_stationarity_and_shrinkage() {
        let (x, y) = synthetic(40, 2);
        let mut last_norm = f64::INFINITY;
        for lambda in [0.0, 0.1, 1.0, 10.0, 100.0] {
            let m = fit(&LearnerConfig::new(LearnerKind::Ridge { lambda }, 0), &x, &y).unwrap();
            let r = m.as_ridge().unwrap();
            // Gradient of the centered objective must vanish.
            let xm: Vec<f64> = (0..4).map(|j| x.column(j).iter().sum::<f64>() / 40.0).collect();
            let ym = y.iter().sum::<f64>() / 40.0;
            for j in 0..4 {
                let mut g = lambda * r.weights[j];
                for i in 0..40 {
                    let xc: Vec<f64> = (0..4).map(|k| x.get(i, k) - xm[k]).collect();
                    let fit_i: f64 = xc.iter().zip(&r.weights).map(|(a, w)| a * w).sum();
                    g += xc[j] * (fit_i - (y[i] - ym));
                }
                assert!(g.abs() < 1e-8, "lambda {lambda}: gradient {g}");
            }
            let norm = r.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            assert!(norm <= last_norm + 1e-12);
            last_norm = norm;
        }
    }

    #[test]
    fn forest_of_identical_trees_equals_one_tree() {
        let (x, y) = synthetic(30, 3);
        let kind = LearnerKind::RandomForest {
            n_trees: 5,
            min_leaf: 1,
            max_depth: Some(3),
            feature_fraction: 1.0,
            bootstrap: false,
        };
        let many = fit(&LearnerConfig::new(kind, 9), &x, &y).unwrap();
        let ModelParams::Forest { trees } = &many.params else { unreachable!() };
        assert!(trees.windows(2).all(|w| w[0] == w[1]));
        for i in 0..30 {
            assert!((many.predict_row(x.row(i)) - trees[0].predict_row(x.row(i))).abs() < 1e-12);
        }
    }

    #[test]
    fn gbdt_training_rmse_non_increasing() {
        let (x, y) = synthetic(60, 4);
        let m = fit(&LearnerConfig::new(small_gbdt(1.0), 4), &x, &y).unwrap();
        let ModelParams::Gbdt { base, learning_rate, trees } = &m.params else { unreachable!() };
        let mut pred = vec![*base; 60];
        let mut last = rmse(&y, &pred).unwrap();
        for t in trees {
            for (i, p) in pred.iter_mut().enumerate() {
                *p += learning_rate * t.predict_row(x.row(i));
            }
            let now = rmse(&y, &pred).unwrap();
            assert!(now <= last + 1e-12);
            last = now;
        }
    }

    #[test]
    fn same_seed_bit_identical_models() {
        let (x, y) = synthetic(40, 5);
        for kind in [small_forest(), small_gbdt(0.8)] {
            let a = fit(&LearnerConfig::new(kind.clone(), 11), &x, &y).unwrap();
            let b = fit(&LearnerConfig::new(kind.clone(), 11), &x, &y).unwrap();
            assert_eq!(bincode::serialize(&a).unwrap(), bincode::serialize(&b).unwrap());
            let c = fit(&LearnerConfig::new(kind, 12), &x, &y).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn predict_arity_and_empty() {
        let (x, y) = synthetic(20, 6);
        let m = fit(&LearnerConfig::new(LearnerKind::ridge(), 0), &x, &y).unwrap();
        assert!(predict(&m, &Matrix::zeros(0, 4)).unwrap().is_empty());
        assert!(predict(&m, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = LearnerConfig::new(LearnerKind::Ridge { lambda: -1.0 }, 0);
        assert!(bad.validate().is_err());
        let bad = LearnerConfig::new(
            LearnerKind::RandomForest { n_trees: 0, min_leaf: 1, max_depth: None, feature_fraction: 0.5, bootstrap: true },
            0,
        );
        assert!(bad.validate().is_err());
        let bad = LearnerConfig::new(small_gbdt(0.0), 0);
        assert!(bad.validate().is_err());
        let (x, _) = synthetic(5, 0);
        assert!(fit(&LearnerConfig::new(LearnerKind::ridge(), 0), &x, &[1.0; 4]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        // Training rows only: when two features induce the same partition the
        // lower index wins, which can move thresholds for unseen rows.
        #[test]
        fn tree_learners_invariant_under_feature_permutation(seed in 0u64..1000, shift in 1usize..4) {
            let (x, y) = synthetic(40, seed);
            let perm: Vec<usize> = (0..4).map(|j| (j + shift) % 4).collect();
            let xp = x.select_columns(&perm);
            let kinds = [
                LearnerKind::RandomForest { n_trees: 5, min_leaf: 2, max_depth: None, feature_fraction: 1.0, bootstrap: false },
                small_gbdt(1.0),
            ];
            for kind in kinds {
                let a = fit(&LearnerConfig::new(kind.clone(), seed), &x, &y).unwrap();
                let b = fit(&LearnerConfig::new(kind, seed), &xp, &y).unwrap();
                let pa = predict(&a, &x).unwrap();
                let pb = predict(&b, &xp).unwrap();
                for (u, v) in pa.iter().zip(&pb) {
                    prop_assert!((u - v).abs() < 1e-9);
                }
            }
        }
    }
}
