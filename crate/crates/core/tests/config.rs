//! Configuration parsing, validation and problem construction.

use fedbcd::config::{RunConfig, Severity};
use fedbcd::data::{
    device_classes, partition_by_diversity, synthetic_pool, PartitionSpec, SyntheticSpec,
};
use fedbcd::experiment::run_simulation;
use fedbcd::LossKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

const SMALL: &str = r#"
algorithm = "fedbcd"
rounds = 4
seeds = [1]

[topology]
servers = 2
devices_per_server = 3

[problem]
classes = 4
features = 3
diversity = 2
samples_per_device = 12
test_samples_per_device = 6

[hyper]
active_per_server = 2
available_per_server = 3
batch_size = 4
"#;

#[test]
fn toml_round_trip_preserves_the_config() {
    let cfg = RunConfig::from_toml_str(SMALL).unwrap();
    let again = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(
        cfg.to_toml_string().unwrap(),
        again.to_toml_string().unwrap()
    );
    assert_eq!(
        run_simulation(&cfg, 1).unwrap().records,
        run_simulation(&again, 1).unwrap().records
    );
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(RunConfig::from_toml_str("[hyper]\neta = 0.1").is_err());
    assert!(RunConfig::from_toml_str("algorithm = \"sgd\"").is_err());
    assert!(RunConfig::from_toml_str("[latency]\narrival = \"gamma:1\"").is_err());
}

#[test]
fn defaults_are_valid() {
    let cfg = RunConfig::default();
    assert!(!cfg.validate().has_errors(), "{}", cfg.validate());
    assert_eq!(cfg.gamma(), 1.0);
    let i = RunConfig::from_toml_str("algorithm = \"fedbcd_i\"").unwrap();
    assert_eq!(i.gamma(), 0.2);
}

#[test]
fn structural_errors_are_reported() {
    for bad in [
        "[protocol]\nkind = \"async_cloud_simple\"\nb = 9",
        "[hyper]\neta_x = -1.0",
        "[problem]\ndiversity = 0",
        "algorithm = \"fedavg\"\n[protocol]\nkind = \"async_cloud_rigorous\"\nb = 1",
    ] {
        let r = RunConfig::from_toml_str(bad).unwrap().validate();
        assert!(r.has_errors(), "accepted: {bad}");
    }
}

#[test]
fn large_edge_stepsize_draws_a_warning() {
    let mut cfg = RunConfig::from_toml_str(SMALL).unwrap();
    cfg.hyper.eta_x = 50.0;
    let (problem, _) = cfg.build_problem(1).unwrap();
    let r = cfg.validate_with_problem(&problem);
    assert!(!r.has_errors());
    assert!(r
        .findings
        .iter()
        .any(|f| f.severity == Severity::Warning && f.message.contains("eta_x")));
}

#[test]
fn built_devices_hold_exactly_their_classes() {
    let cfg = RunConfig::from_toml_str(SMALL).unwrap();
    let (problem, tests) = cfg.build_problem(1).unwrap();
    assert_eq!(problem.num_devices(), 6);
    for (i, d) in problem.devices().iter().enumerate() {
        assert_eq!(d.dataset.len(), 12);
        assert_eq!(d.dataset.classes_present(), device_classes(i, 2, 4));
        assert_eq!(tests.personal[i].classes_present(), device_classes(i, 2, 4));
    }
    assert_eq!(tests.global.unwrap().len(), 36);
}

#[test]
fn partition_uses_every_sample_at_most_once() {
    let kind = LossKind::MultinomialLogistic { classes: 5 };
    let spec = SyntheticSpec {
        kind,
        features: 2,
        separation: 1.0,
        noise: 1.0,
        samples_per_class: 40,
    };
    let pool = synthetic_pool(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let part = PartitionSpec {
        diversity: 3,
        samples_per_device: 10,
    };
    let parts =
        partition_by_diversity(&pool, kind, 9, &part, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let all: Vec<usize> = parts.concat();
    assert_eq!(all.len(), 90);
    assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), 90);
    let too_many = PartitionSpec {
        diversity: 3,
        samples_per_device: 40,
    };
    assert!(
        partition_by_diversity(&pool, kind, 9, &too_many, &mut ChaCha8Rng::seed_from_u64(2))
            .is_err()
    );
}

#[test]
fn csv_data_paths_resolve_next_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("f0,f1,label\n");
    for k in 0..40 {
        let c = k % 2;
        csv.push_str(&format!(
            "{},{},{}\n",
            c as f64 + 0.01 * k as f64,
            1.0 - c as f64,
            c
        ));
    }
    std::fs::write(dir.path().join("train.csv"), &csv).unwrap();
    let toml = "rounds = 2\n[topology]\nservers = 2\ndevices_per_server = 2\n\
                [problem]\nloss = \"multinomial_logistic\"\nclasses = 2\ndiversity = 1\nsamples_per_device = 5\n\
                train_csv = \"train.csv\"\n[hyper]\nactive_per_server = 1\nbatch_size = 2";
    let path = dir.path().join("run.toml");
    std::fs::write(&path, toml).unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    let (problem, _) = cfg.build_problem(0).unwrap();
    assert_eq!(problem.num_devices(), 4);
    assert_eq!(problem.dim(), 2 * 2);
}
