use std::collections::BTreeSet;

use comp_energy::harness::{
    aggregate, aggregate_csv, emit_all, emit_csv, read_csv, render_svg, run_experiment, Algorithm,
    ExperimentConfig, HarnessError, ResultTable, SweepAxis, CSV_HEADER,
};

fn tiny(axis_config: ExperimentConfig, algorithms: &[Algorithm]) -> ExperimentConfig {
    ExperimentConfig {
        algorithms: algorithms.to_vec(),
        num_intervals: 2,
        warmup_intervals: 1,
        ..axis_config
    }
}

#[test]
fn default_battery_sweep_has_every_combination() {
    let cfg = tiny(ExperimentConfig::battery_sweep(), &Algorithm::ALL);
    let table = run_experiment(&cfg, 1).unwrap();
    assert_eq!(table.rows.len(), 200);
    assert_eq!(table.failures().count(), 0);
    assert_eq!(aggregate(&table.rows).len(), 20);
    let cells: BTreeSet<(u64, usize, Algorithm)> = table
        .rows
        .iter()
        .map(|r| (r.axis_value.to_bits(), r.seed, r.algorithm))
        .collect();
    assert_eq!(cells.len(), 200);
    // one trace per (value, seed), shared by every algorithm
    for chunk in table.rows.chunks(4) {
        assert!(chunk
            .iter()
            .all(|r| r.trace_checksum == chunk[0].trace_checksum));
    }
}

#[test]
fn csv_round_trip_and_recomputed_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        grid: vec![2.0, 4.0],
        num_seeds: 3,
        ..tiny(
            ExperimentConfig::sinr_sweep(),
            &[Algorithm::Heu, Algorithm::Twet],
        )
    };
    let table = run_experiment(&cfg, 1).unwrap();
    let files = emit_all(&table, dir.path(), false).unwrap();
    let text = std::fs::read_to_string(&files.csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    let rows = read_csv(&files.csv).unwrap();
    assert_eq!(rows.len(), table.rows.len());
    for (parsed, row) in rows.iter().zip(&table.rows) {
        assert_eq!(parsed.axis, row.axis);
        assert_eq!(parsed.axis_value, row.axis_value);
        assert_eq!(parsed.seed, row.seed);
        assert_eq!(parsed.algorithm, row.algorithm);
        assert_eq!(parsed.avg_cost, row.avg_cost);
        assert_eq!(parsed.runtime_s, 0.0);
    }
    assert_eq!(aggregate_csv(&rows), aggregate(&table.rows));
    assert!(files.summary.exists() && files.runs.exists());
}

#[test]
fn empty_table_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    let table = ResultTable {
        name: "empty".into(),
        axis: SweepAxis::HarvestRate,
        rows: Vec::new(),
    };
    assert!(matches!(
        emit_csv(&table, &path, false),
        Err(HarnessError::EmptyTable)
    ));
    assert!(!path.exists());
    assert!(matches!(
        emit_all(&table, dir.path(), false),
        Err(HarnessError::EmptyTable)
    ));
}

#[test]
fn plot_is_well_formed_svg() {
    let cfg = ExperimentConfig {
        grid: vec![1.0, 2.0],
        num_seeds: 2,
        ..tiny(
            ExperimentConfig::harvest_sweep(),
            &[Algorithm::Heu, Algorithm::Offline],
        )
    };
    let table = run_experiment(&cfg, 1).unwrap();
    let svg = render_svg(&table);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let count = |tag: &str| doc.descendants().filter(|n| n.has_tag_name(tag)).count();
    assert_eq!(count("polyline"), 2);
    assert_eq!(count("polygon"), 2);
}

#[test]
fn worker_count_never_changes_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        grid: vec![40.0, 120.0],
        num_seeds: 2,
        ..tiny(
            ExperimentConfig::battery_sweep(),
            &[Algorithm::Twet, Algorithm::Heu],
        )
    };
    let mut bytes = Vec::new();
    for jobs in [1, 3, 1] {
        let out = dir.path().join(format!("jobs{jobs}-{}", bytes.len()));
        let files = emit_all(&run_experiment(&cfg, jobs).unwrap(), &out, false).unwrap();
        bytes.push(std::fs::read(files.csv).unwrap());
    }
    assert!(bytes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn failed_runs_are_recorded_not_fatal() {
    let cfg = ExperimentConfig {
        axis: SweepAxis::Weight,
        grid: vec![1.0, 1000.0],
        num_seeds: 1,
        ..tiny(
            ExperimentConfig::battery_sweep(),
            &[Algorithm::Twet, Algorithm::Heu],
        )
    };
    let table = run_experiment(&cfg, 1).unwrap();
    let failed: Vec<_> = table.failures().collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(
        (failed[0].axis_value, failed[0].algorithm),
        (1000.0, Algorithm::Twet)
    );
    assert!(failed[0].avg_cost.is_none());
    assert_eq!(table.rows.len(), 4);
}

#[test]
fn configs_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("harvest.json");
    let cfg = ExperimentConfig::harvest_sweep();
    std::fs::write(&path, cfg.to_json()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
    std::fs::write(&path, "{\"name\": 3}").unwrap();
    assert!(matches!(
        ExperimentConfig::load(&path),
        Err(HarnessError::Format { .. })
    ));
}
