//! Multi-run drivers end to end: sweep shape, grid degeneracy and the
//! direction of the migration weight.

use fairmig::graph::SyntheticSpec;
use fairmig::harness::{
    read_csv, run_in, sweep, Aggregate, DataSource, Execution, ExperimentConfig, GridAxis, SweepParam, AGGREGATE_FILE,
    SWEEP_FILE,
};
use fairmig::models::AdamConfig;
use fairmig::sup::AdversaryObjective;

fn tiny() -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic(SyntheticSpec { n_nodes: 80, ..SyntheticSpec::default() }),
        ssl_epochs: 3,
        sup_epochs: 3,
        seeds: vec![0],
        ..ExperimentConfig::default()
    }
}

#[test]
fn four_by_five_grid_writes_twenty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let axes: Vec<GridAxis> =
        ["lambda=5,10,15,20", "beta=0.01,0.05,0.1,0.5,1"].iter().map(|s| s.parse().unwrap()).collect();
    let cells = sweep(&tiny(), &axes, dir.path(), Execution::Sequential).unwrap();
    assert_eq!(cells.len(), 20);
    assert!(cells.iter().all(|c| c.outcome.is_ok()));
    let rows = read_csv(&dir.path().join(SWEEP_FILE)).unwrap();
    assert_eq!(rows.len(), 20);
    assert_eq!(rows[7]["lambda"], "10");
    assert_eq!(rows[7]["beta"], "0.1");
    assert!(dir.path().join("cell_19").join(AGGREGATE_FILE).exists());
}

#[test]
fn one_by_one_grid_matches_a_plain_run() {
    let dir = tempfile::tempdir().unwrap();
    let axis = GridAxis { param: SweepParam::Lambda, values: vec![10.0] };
    let cells = sweep(&tiny(), &[axis], &dir.path().join("grid"), Execution::Sequential).unwrap();
    let cell = cells[0].outcome.as_ref().unwrap();
    let plain =
        run_in(&ExperimentConfig { name: "cell_0".into(), ..tiny() }, &dir.path().join("plain"), Execution::Sequential)
            .unwrap();
    assert_eq!(cell, &plain);
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { seeds: vec![0, 1, 2], ..tiny() };
    let a = run_in(&cfg, &dir.path().join("seq"), Execution::Sequential).unwrap();
    let b = run_in(&cfg, &dir.path().join("par"), Execution::default()).unwrap();
    assert_eq!(a, b);
    let read = |d: &str| std::fs::read(dir.path().join(d).join(AGGREGATE_FILE)).unwrap();
    assert_eq!(read("seq"), read("par"));
    assert_eq!(Aggregate::read(&dir.path().join("seq")).unwrap(), a);
}

/// Larger migration weight never raises median dSP in at least 60% of
/// adjacent grid pairs on the debiasing synthetic graph.
#[test]
fn larger_lambda_tends_to_lower_parity_gap() {
    let cfg = ExperimentConfig {
        data: DataSource::Synthetic(SyntheticSpec {
            label_signal: 0.25,
            label_homophily: 0.5,
            ..SyntheticSpec::default()
        }),
        adversary_objective: AdversaryObjective::Standard,
        adversary_steps: 20,
        adam: AdamConfig { lr: 0.003, ..AdamConfig::default() },
        seeds: (0..5).collect(),
        ..ExperimentConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let axis = GridAxis { param: SweepParam::Lambda, values: vec![5.0, 10.0, 15.0, 20.0] };
    let cells = sweep(&cfg, &[axis], dir.path(), Execution::default()).unwrap();
    let medians: Vec<f64> = cells.iter().map(|c| c.outcome.as_ref().unwrap().delta_sp.unwrap().median).collect();
    let holds = medians.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(holds * 10 >= 6 * (medians.len() - 1), "medians {medians:?}");
}
