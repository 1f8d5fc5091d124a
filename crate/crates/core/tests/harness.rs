use std::fs;
use std::path::Path;

use dcpi::harness::{
    aggregate, aggregate_path, emit_plot_data, read_aggregate, read_metrics, read_plot_data, run_seed, run_sweep,
    seed_metrics_path, RunConfig,
};

fn bandit_config(dir: &Path) -> RunConfig {
    let text = format!(
        r#"
[run]
seeds = [1, 2]
steps = 1200
iteration_length = 200
output_dir = "{}"

[env]
name = "bandit"

[agent]
kind = "dcpi"
hidden = [16, 16]
batch_size = 32
min_fill = 64
"#,
        dir.display()
    );
    RunConfig::from_toml_str(&text).unwrap()
}

#[test]
fn same_seed_gives_identical_metrics_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let config = RunConfig { seeds: vec![5], ..bandit_config(dir.path()) };
        run_sweep(&config, false).unwrap();
    }
    let read = |d: &tempfile::TempDir| fs::read(seed_metrics_path(d.path(), 5)).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (straight, split) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let full = bandit_config(straight.path());
    let expected = run_seed(&full, 1, false).unwrap();

    let interrupted = RunConfig { total_steps: 600, checkpoint_every: Some(1), ..bandit_config(split.path()) };
    run_seed(&interrupted, 1, false).unwrap();
    let resumed = RunConfig { checkpoint_every: Some(1), ..bandit_config(split.path()) };
    let rows = run_seed(&resumed, 1, true).unwrap();

    assert_eq!(rows.len(), 6);
    assert!(rows.iter().zip(&expected).all(|(a, b)| a.same_bits(b)));
    assert_eq!(
        fs::read(seed_metrics_path(straight.path(), 1)).unwrap(),
        fs::read(seed_metrics_path(split.path(), 1)).unwrap()
    );
}

#[test]
fn resume_rejects_a_different_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig { total_steps: 400, checkpoint_every: Some(1), ..bandit_config(dir.path()) };
    run_seed(&config, 2, false).unwrap();
    let mut changed = config.clone();
    changed.agent.gamma = 0.5;
    assert!(run_seed(&changed, 2, true).is_err());
}

#[test]
fn sweep_writes_aggregate_of_all_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = bandit_config(dir.path());
    let outcome = run_sweep(&config, false).unwrap();
    assert_eq!(outcome.exit_code(), 0);
    assert_eq!(outcome.completed.len(), 2);

    let per_seed: Vec<_> =
        config.seeds.iter().map(|&s| read_metrics(seed_metrics_path(dir.path(), s)).unwrap()).collect();
    let expected = aggregate(&per_seed).unwrap();
    let written = read_aggregate(aggregate_path(dir.path())).unwrap();
    assert_eq!(written, expected);
    assert!(written.iter().all(|r| r.n_seeds == 2));

    let plot = dir.path().join("plot.dat");
    emit_plot_data(aggregate_path(dir.path()), &plot).unwrap();
    let rows = read_plot_data(&plot).unwrap();
    assert_eq!(rows.len(), written.len());
    assert!(rows.iter().zip(&written).all(|(p, w)| p.mean == w.mean));
}

#[test]
fn workers_do_not_change_results() {
    let (one, two) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_sweep(&bandit_config(one.path()), false).unwrap();
    run_sweep(&RunConfig { workers: 2, ..bandit_config(two.path()) }, false).unwrap();
    assert_eq!(fs::read(aggregate_path(one.path())).unwrap(), fs::read(aggregate_path(two.path())).unwrap());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);

    let guide = include_str!("../../../book/src/harness.md");
    let block = guide.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
    let config = RunConfig::from_toml_str(block).unwrap();
    assert_eq!(config.seeds.len(), 5);
    assert_eq!(config.checkpoint_every, Some(10));
}
