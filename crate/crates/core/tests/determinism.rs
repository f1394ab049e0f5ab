//! Results must not depend on thread count or scheduling.

use dnn_core::experiment::{run_experiment, write_outputs, ExperimentConfig, CIS_FILE, RISK_FILE};
use dnn_core::simgen::simulation_spec;
use dnn_core::weights::ownn_weights;
use dnn_core::{Aggregation, DnnModel, SeededRng};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn predict_batch_is_thread_count_invariant() {
    let spec = simulation_spec(3, 5).unwrap();
    let train = spec.sample(3000, &mut SeededRng::new(1, 0)).unwrap();
    let test = spec.sample(2000, &mut SeededRng::new(2, 0)).unwrap();
    let queries: Vec<&[f64]> = test.rows().collect();
    for mode in [Aggregation::Majority, Aggregation::Weighted] {
        let w = ownn_weights(300, 60, 5).unwrap();
        let (model, _) = DnnModel::fit_random(&train, 10, w, mode, &mut SeededRng::new(3, 0)).unwrap();
        let one = in_pool(1, || model.predict_batch(&queries).unwrap());
        let eight = in_pool(8, || model.predict_batch(&queries).unwrap());
        assert_eq!(one, eight);
        let (by_rows, _) = in_pool(8, || model.predict_dataset(&test).unwrap());
        assert_eq!(one, by_rows);
    }
}

const CONFIG: &str = r#"
source = "simulation"
simulation = 2
dim = 3
n_train = 600
n_test = 200
methods = ["oracle-knn", "oracle-ownn", "oracle-bnn", "m-dnn-k", "w-dnn-k", "m-dnn-ownn", "w-dnn-ownn"]
gammas = [0.0, 0.2, 0.4]
replications = 4
seed = 77
cis = true
"#;

#[test]
fn experiment_output_is_a_function_of_config() {
    let config = ExperimentConfig::from_toml_str(CONFIG).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = in_pool(1, || run_experiment(&config).unwrap());
    let b = in_pool(4, || run_experiment(&config).unwrap());
    assert_eq!(a.reports.len(), 21);
    write_outputs(&a, &dir.path().join("a")).unwrap();
    write_outputs(&b, &dir.path().join("b")).unwrap();
    for f in [RISK_FILE, CIS_FILE, "tuning.csv", "manifest.json"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }

    let mut other = config.clone();
    other.seed = 78;
    let c = run_experiment(&other).unwrap();
    assert_ne!(
        a.reports.iter().map(|r| r.stats.risk.mean).collect::<Vec<_>>(),
        c.reports.iter().map(|r| r.stats.risk.mean).collect::<Vec<_>>()
    );
}
