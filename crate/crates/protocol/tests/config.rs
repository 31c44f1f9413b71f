use std::path::PathBuf;

use privcoll_protocol::config::{write_partitions, ConfigError, PartyData, TrainingConfig};

const MINIMAL: &str = r#"
[model]
kind = "linear"
outputs = 1

[training]
learning_rate = 0.05
batch_size = 10
max_iterations = 5
seed = 4

[topology]
nodes = 3

[data]
source = "synthetic"
samples = 40
features = 9
"#;

fn parse(text: &str) -> Result<TrainingConfig, ConfigError> {
    TrainingConfig::parse(text, "test.toml", PathBuf::new())
}

#[test]
fn minimal_config_gets_defaults() {
    let c = parse(MINIMAL).unwrap();
    assert_eq!(c.ring.width, 64);
    assert_eq!(c.ring.frac_bits, 20);
    assert_eq!(c.training.tol, 1e-8);
    assert_eq!(c.training.timeout_secs, 30.0);
    assert!(c.net_profile().is_ideal());
    let back = parse(&c.to_toml()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn syntax_errors_point_at_the_line() {
    let bad = MINIMAL.replace("batch_size = 10", "batch_size = = 10");
    let err = parse(&bad).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, ConfigError::Parse { .. }));
    assert!(msg.contains("line 8"), "{msg}");
}

#[test]
fn unknown_and_invalid_fields_are_named() {
    let err = parse(&MINIMAL.replace("seed = 4", "sede = 4")).unwrap_err().to_string();
    assert!(err.contains("sede"), "{err}");
    let err = parse(&MINIMAL.replace("nodes = 3", "nodes = 1")).unwrap_err().to_string();
    assert!(err.contains("topology.nodes"), "{err}");
    let err = parse(&MINIMAL.replace("learning_rate = 0.05", "learning_rate = -1.0")).unwrap_err().to_string();
    assert!(err.contains("learning_rate"), "{err}");
    let err = parse(&MINIMAL.replace("kind = \"linear\"", "kind = \"svm\"")).unwrap_err().to_string();
    assert!(err.contains("svm"), "{err}");
    let tcp = MINIMAL.replace("nodes = 3", "nodes = 3\ntransport = \"tcp\"");
    assert!(parse(&tcp).unwrap_err().to_string().contains("addresses"));
}

#[test]
fn adversary_bound_outside_regime_warns() {
    let c = parse(&MINIMAL.replace("nodes = 3", "nodes = 3\nadversary_bound = 2")).unwrap();
    assert!(c.warnings().iter().any(|w| w.contains("t = 2")));
    let c = parse(&MINIMAL.replace("nodes = 3", "nodes = 3\nadversary_bound = 1")).unwrap();
    assert!(c.warnings().is_empty());
}

#[test]
fn fingerprint_ignores_the_network_profile() {
    let a = parse(MINIMAL).unwrap();
    let b = parse(&format!("{MINIMAL}\n[net]\nprofile = \"wan\"\n")).unwrap();
    let c = parse(&MINIMAL.replace("seed = 4", "seed = 5")).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_ne!(a.fingerprint(), c.fingerprint());
}

#[test]
fn partitioned_data_loads_per_party() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse(MINIMAL).unwrap();
    let data = cfg.load_dataset().unwrap();
    let plan = cfg.plan(9).unwrap();
    write_partitions(&data, &plan, &dir.path().join("parts")).unwrap();
    let text = MINIMAL.replace(
        "source = \"synthetic\"\nsamples = 40\nfeatures = 9",
        "source = \"partitioned\"\ndir = \"parts\"",
    );
    let pcfg = TrainingConfig::parse(&text, "p.toml", dir.path().to_path_buf()).unwrap();
    assert_eq!(pcfg.load_dataset().unwrap(), data);
    let (params, agg) = pcfg.load_party(0).unwrap();
    assert_eq!((params.samples, params.features), (40, 9));
    match agg {
        PartyData::Aggregator(a) => assert_eq!(a.y_steps, data.y_steps),
        PartyData::Node(_) => panic!("party 0 is the aggregator"),
    }
    let (_, node) = pcfg.load_party(2).unwrap();
    let expect = data.partition(&plan).unwrap().swap_remove(1);
    match node {
        PartyData::Node(n) => assert_eq!((n.id, n.x_steps), (2, expect)),
        PartyData::Aggregator(_) => panic!("party 2 is a node"),
    }
    assert!(pcfg.load_party(4).is_err());
}
