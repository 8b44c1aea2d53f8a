use popmaj::experiment::{read_records_jsonl, run_experiment, summarize, ExperimentConfig, ProtocolName};

fn config(dir: &std::path::Path, protocol: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{
            "graphs": [{{"family": "cycle", "n": 10}}, {{"family": "complete", "n": 12}}],
            "protocol": "{protocol}",
            "gamma": 0.2,
            "epsilon": 0.25,
            "seeds": {{"count": 6, "base": 41}},
            "output": {{"records": "{}", "summary": "{}"}}
        }}"#,
        dir.join("records.jsonl").display(),
        dir.join("summary.csv").display()
    );
    let path = dir.join("cfg.json");
    std::fs::write(&path, text).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn records_on_disk_reproduce_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "annihilation");
    let (records, stats) = run_experiment(&cfg).unwrap();
    assert_eq!(records.len(), 12);
    assert!(records
        .iter()
        .all(|r| r.protocol == ProtocolName::Annihilation && !r.censored));

    let on_disk = read_records_jsonl(&std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap()).unwrap();
    assert_eq!(on_disk.len(), records.len());
    assert_eq!(summarize(&on_disk).unwrap(), stats);

    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("metric,t_ext,12,0,")));
}

#[test]
fn reruns_are_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ra, _) = run_experiment(&config(a.path(), "four_state")).unwrap();
    let (rb, _) = run_experiment(&config(b.path(), "four_state")).unwrap();
    let key = |r: &popmaj::experiment::TrialRecord| (r.graph.clone(), r.trial, r.steps, r.t_stab);
    let mut ka: Vec<_> = ra.iter().map(key).collect();
    let mut kb: Vec<_> = rb.iter().map(key).collect();
    ka.sort();
    kb.sort();
    assert_eq!(ka, kb);
}

#[test]
fn bad_configs_are_rejected() {
    assert!(ExperimentConfig::from_json("{").is_err());
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "clearing");
    cfg.seeds.count = 0;
    assert!(matches!(run_experiment(&cfg), Err(popmaj::Error::Config(_))));
}
