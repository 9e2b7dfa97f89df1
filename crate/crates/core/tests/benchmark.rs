use std::sync::OnceLock;

use orchardcast_core::dataset::{self, FeatureTable};
use orchardcast_core::evaluate::{self, BenchmarkModel, BenchmarkReport, ModelEntry, NormalizationScope};
use orchardcast_core::learners::LearnerKind;
use orchardcast_core::phenology::PhenologyConfig;
use orchardcast_core::stack::StackConfig;
use orchardcast_core::synth::{self, SynthConfig};

fn table() -> &'static FeatureTable {
    static T: OnceLock<FeatureTable> = OnceLock::new();
    T.get_or_init(|| {
        let d = synth::generate(&SynthConfig::with_seed(42)).unwrap();
        dataset::build_table(&PhenologyConfig::default().feature_names(), &d.features, &d.yields).unwrap()
    })
}

#[test]
fn stack_leads_cross_validation_on_the_synthetic_benchmark() {
    let rep: BenchmarkReport =
        evaluate::run_benchmark(table(), &evaluate::standard_models(StackConfig::high_quality(42)), 5, 0.3, 42).unwrap();
    assert_eq!(rep.rows.len(), 3);
    let ranking = evaluate::compare_rows(&rep);
    // The planted yield is linear in the design columns, so on a small
    // holdout the linear baseline can edge out the stack; the pooled CV
    // cells are the stable comparison.
    assert_eq!(ranking.ranks[0][0], 1, "{ranking:?}");
    assert_eq!(ranking.ranks[0][1], 1, "{ranking:?}");
    assert!(rep.rows.iter().all(|r| r.cv_rmse >= 0.0 && r.split_rmse >= 0.0));
}

#[test]
fn per_fold_normalization_differs_from_global_fit() {
    // Ridge is not scale invariant under a penalty, so fold-local statistics
    // change the pooled predictions.
    let models = [ModelEntry {
        name: "ridge".into(),
        model: BenchmarkModel::Learner(LearnerKind::Ridge { lambda: 5.0 }),
    }];
    let per_fold = evaluate::run_benchmark(table(), &models, 5, 0.3, 42).unwrap();
    let global = evaluate::run_benchmark_scoped(table(), &models, 5, 0.3, 42, NormalizationScope::Global).unwrap();
    assert_eq!(per_fold.normalization, NormalizationScope::PerFold);
    assert!(per_fold.audit.iter().all(|a| a.normalizer_rows == a.n_train));
    assert!(global.audit.iter().all(|a| a.normalizer_rows == table().labelled_rows().len()));
    assert_ne!(per_fold.cv_predictions, global.cv_predictions);
}
