use hsic_tune::analysis::{run_algorithm1, worst_level_report, AnalysisOptions, GoalSet};
use hsic_tune::harness::replay_trial;
use hsic_tune::objectives::{builtin, Objective, ThreeTerm, BUILTIN_NAMES};
use hsic_tune::report::{write_bundle, write_two_step};
use hsic_tune::space::Value;
use hsic_tune::trial::Trial;
use hsic_tune::two_step::{audit_fixed, two_step_optimize, Budget, FixingMode, Provenance, TwoStepOptions};

fn trials(obj: &dyn Objective, n: u64, seed: u64) -> Vec<Trial> {
    (0..n).map(|i| replay_trial(obj, seed, i)).collect()
}

#[test]
fn every_builtin_evaluates_a_sample() {
    for name in BUILTIN_NAMES {
        let obj = builtin(name).unwrap();
        let t = replay_trial(obj.as_ref(), 4, 0);
        assert!(t.is_ok() || !t.tags.is_empty(), "{name}: {t:?}");
    }
    assert!(builtin("example3:1.2").is_ok());
    assert!(builtin("nope").is_err());
}

#[test]
fn accuracy_only_mode_frees_speed_parameters_in_step_two() {
    let obj = ThreeTerm::new();
    let t = trials(&obj, 150, 2);
    let opts = TwoStepOptions {
        mode: FixingMode::AccuracyOnly,
        step1: Budget { n_init: 5, n_iter: 5 },
        step2: Budget { n_init: 3, n_iter: 3 },
        ..TwoStepOptions::default()
    };
    let res = two_step_optimize(&obj, &t, &GoalSet::BestPercentile { p: 0.1 }, &opts, 2).unwrap();
    assert!(audit_fixed(obj.space(), &res.fixed_configuration(), &res.step1.history).is_empty());
    for f in res.fixed.iter().filter(|f| f.provenance == Provenance::SpeedRule) {
        assert!(res.step2_fixed.get(&f.param).is_none(), "{} still pinned", f.param);
    }
}

#[test]
fn speed_mode_pins_the_cost_parameter_to_its_cheap_end() {
    let obj = ThreeTerm::new();
    let t = trials(&obj, 200, 3);
    let opts = TwoStepOptions {
        step1: Budget { n_init: 5, n_iter: 5 },
        step2: Budget { n_init: 3, n_iter: 3 },
        ..TwoStepOptions::default()
    };
    let res = two_step_optimize(&obj, &t, &GoalSet::BestPercentile { p: 0.1 }, &opts, 3).unwrap();
    let x3 = res.fixed.iter().find(|f| f.param == "x3").expect("x3 fixed");
    assert_eq!(x3.provenance, Provenance::SpeedRule);
    assert_eq!(x3.value, Value::Int(1));
    assert!(res.step1.history.iter().all(|h| h.config.get("x3") == Some(&Value::Int(1))));

    let dir = tempfile::tempdir().unwrap();
    let files = write_two_step(dir.path(), &res).unwrap();
    let trace = std::fs::read_to_string(&files[1]).unwrap();
    assert_eq!(trace.lines().count(), 1 + res.n_evaluations());
}

#[test]
fn bundle_contains_rankings_and_summary() {
    let obj = builtin("depth-threshold").unwrap();
    let t = trials(obj.as_ref(), 600, 1);
    let report = run_algorithm1(obj.space(), &t, &GoalSet::BestPercentile { p: 0.1 }, 1, &AnalysisOptions::default()).unwrap();
    assert!(report.is_impactful("x"));
    let levels = vec![worst_level_report(obj.space(), "n_layers", &t, 0.1, 1.5).unwrap()];
    let dir = tempfile::tempdir().unwrap();
    let files = write_bundle(dir.path(), &report, &[], &levels).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert!(names.contains(&"ranking_main.csv".to_string()), "{names:?}");
    assert!(names.contains(&"levels_n_layers.csv".to_string()));
    assert_eq!(names.last().unwrap(), "summary.json");
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(files.last().unwrap()).unwrap()).unwrap();
    assert!(summary.get("report").is_some());
}
