use std::collections::BTreeMap;
use std::fs;

use mgcbo::acquisition::{AcquisitionConfig, PolicyKind};
use mgcbo::benchmarks::lookup;
use mgcbo::harness::{
    cumulative_table, default_windows, load_dir, read_csv, run_experiment, write_plotdata,
    write_results, write_summary, ExperimentConfig, ObjectiveSpec, Summary,
};

fn small(policy: PolicyKind, function: &str) -> ExperimentConfig {
    ExperimentConfig {
        steps: 6,
        seeds: vec![0, 1],
        acquisition: AcquisitionConfig {
            samples: 12,
            features: 200,
            sample_budget: 300,
            acquisition_budget: 300,
        },
        fit_budget: 80,
        ..ExperimentConfig::new(ObjectiveSpec::Builtin(function.into()), policy)
    }
}

fn strip_timing(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn every_policy_completes_a_short_run() {
    for policy in PolicyKind::ALL {
        let traces = run_experiment(&small(policy, "hartmann-3")).unwrap();
        let f = lookup("hartmann-3").unwrap();
        for t in &traces {
            assert!(t.error.is_none(), "{policy}: {:?}", t.error);
            assert_eq!(t.observations.len(), 3 + 6, "{policy}");
            let regrets: Vec<f64> = t.observations.iter().map(|o| o.regret).collect();
            assert!(regrets.windows(2).all(|w| w[1] <= w[0]), "{policy}");
            for o in &t.observations {
                assert!(f.bounds.contains(&o.x));
                assert_eq!(o.y, f.evaluate(&o.x).unwrap());
            }
        }
    }
}

#[test]
fn repeated_runs_emit_identical_csv() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let cfg = small(PolicyKind::GpMgc, "camel");
    let a = write_results(dir_a.path(), &run_experiment(&cfg).unwrap()).unwrap();
    let b = write_results(dir_b.path(), &run_experiment(&cfg).unwrap()).unwrap();
    let text_a = fs::read_to_string(&a[0]).unwrap();
    let text_b = fs::read_to_string(&b[0]).unwrap();
    assert_eq!(strip_timing(&text_a), strip_timing(&text_b));
}

#[test]
fn summary_and_plotdata_agree_with_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut traces = run_experiment(&small(PolicyKind::Random, "camel")).unwrap();
    traces.extend(run_experiment(&small(PolicyKind::Ei, "camel")).unwrap());
    write_results(dir.path(), &traces).unwrap();

    let loaded = load_dir(dir.path()).unwrap();
    let table = cumulative_table(&loaded, &default_windows(6)).unwrap();
    write_summary(dir.path(), &Summary::new(table.clone(), &loaded)).unwrap();
    let summary: Summary =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary.table, table);
    assert_eq!(summary.table, cumulative_table(&traces, &default_windows(6)).unwrap());

    // recompute the plot means from raw CSV rows
    let plot = dir.path().join("plotdata.csv");
    write_plotdata(&plot, &loaded).unwrap();
    let mut per_step: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for t in read_csv(&dir.path().join("camel-2__ei.csv")).unwrap() {
        let init = t.observations.iter().filter(|o| o.step == 0).count();
        for o in &t.observations[init - 1..] {
            per_step.entry(("ei".into(), o.step)).or_default().push(o.regret);
        }
    }
    let mut r = csv::Reader::from_path(&plot).unwrap();
    let mut checked = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        if &rec[1] != "ei" {
            continue;
        }
        let step: usize = rec[2].parse().unwrap();
        let mean: f64 = rec[3].parse().unwrap();
        let xs = &per_step[&("ei".to_string(), step)];
        let expect = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - expect).abs() < 1e-12, "step {step}: {mean} vs {expect}");
        checked += 1;
    }
    assert_eq!(checked, 7);
}

#[test]
fn external_objective_failure_is_recorded_per_seed() {
    let cfg = ExperimentConfig {
        steps: 2,
        seeds: vec![0],
        ..ExperimentConfig::new(
            ObjectiveSpec::External {
                command: "read line; echo '{\"y\":1.0}'; read line; echo garbage".into(),
                bounds: vec![(0.0, 1.0)],
                f_max: 2.0,
                name: "stub".into(),
                timeout_ms: 5000,
            },
            PolicyKind::Random,
        )
    };
    let traces = run_experiment(&cfg).unwrap();
    assert_eq!(traces[0].observations.len(), 1);
    assert_eq!(traces[0].observations[0].regret, 1.0);
    assert!(traces[0].error.as_deref().unwrap().contains("malformed"));
}
