use dpse::env::{sample_mixture, HoleProcess, MixtureSpec};
use dpse::params::StrategyKind;
use dpse::shadow::{ShadowConfig, ShadowModel};
use dpse::sim::{collect_task_dataset, ParamSampler, SimConfig};
use dpse::trainers::SourceDataset;
use dpse::Error;
use harness::cache::{source_from_bytes, source_to_bytes, ArtifactCache};
use harness::config::{ExperimentConfig, ExperimentKind, Method};
use harness::metrics::*;
use serde_json::Value;

const KINDS: [ExperimentKind; 4] = [
    ExperimentKind::SpiralStationary,
    ExperimentKind::ProbeStationary,
    ExperimentKind::ProbeNonstationary,
    ExperimentKind::MetaComparison,
];

#[test]
fn presets_validate_and_round_trip() {
    for k in KINDS {
        let cfg = ExperimentConfig::preset(k);
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }
    let p = ExperimentConfig::preset(ExperimentKind::ProbeStationary);
    assert_eq!((p.m_train, p.n_train, p.m_test, p.n_test), (200, 128, 10, 128));
    assert_eq!(p.nsga2.as_ref().unwrap().budget, 300);
    assert_eq!(ExperimentConfig::preset(ExperimentKind::SpiralStationary).nsga2.unwrap().budget, 250);
    assert_eq!(ExperimentConfig::preset(ExperimentKind::ProbeNonstationary).processes.len(), 3);
}

#[test]
fn minimal_file_gets_kind_defaults() {
    let cfg = ExperimentConfig::from_json(r#"{"kind":"spiral-stationary","seed":4}"#).unwrap();
    assert_eq!(cfg.seed, 4);
    assert_eq!(cfg.methods, vec![Method::Dpse, Method::Fixed, Method::Pca, Method::Nsga2]);
    assert_eq!(cfg.sim().region.clearance, 0.5);
}

#[test]
fn invalid_configs_are_configuration_errors() {
    let bad = [
        r#"{"kind":"probe-stationary","methods":["pca"]}"#,
        r#"{"kind":"spiral-stationary","methods":["gmm"]}"#,
        r#"{"kind":"spiral-stationary","methods":["dpse-cdist"]}"#,
        r#"{"kind":"probe-stationary","methods":["fomaml"]}"#,
        r#"{"kind":"meta-comparison","methods":["fixed"]}"#,
        r#"{"kind":"probe-stationary","methods":["fixed","fixed"]}"#,
        r#"{"kind":"probe-stationary","m_test":0}"#,
        r#"{"kind":"probe-stationary","eval_samples":0}"#,
        r#"{"kind":"probe-stationary","region":{"half_extent":10.0,"clearance":20.0}}"#,
        r#"{"kind":"probe-stationary","pretrain":{"lr":0.0}}"#,
        r#"{"kind":"probe-stationary","nsga2":{"mu":30,"lambda":30,"budget":5,"evals_per_individual":1,"eta_c":15.0,"eta_m":20.0,"p_crossover":0.9,"seed":0}}"#,
        r#"{"kind":"meta-comparison","m_train":1}"#,
        r#"{"kind":"probe-stationary","typo_field":1}"#,
        r#"{"kind":"nonsense"}"#,
        "not json",
    ];
    for text in bad {
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))), "{text}");
    }
}

/// Every numeric or boolean leaf of the JSON, as a pointer.
fn leaves(v: &Value, path: String, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                leaves(x, format!("{path}/{k}"), out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                leaves(x, format!("{path}/{i}"), out);
            }
        }
        Value::Number(_) | Value::Bool(_) => out.push(path),
        _ => {}
    }
}

#[test]
fn hash_changes_with_every_field() {
    for k in KINDS {
        let cfg = ExperimentConfig::preset(k);
        let base: Value = serde_json::from_str(&cfg.to_json()).unwrap();
        let mut paths = Vec::new();
        leaves(&base, String::new(), &mut paths);
        assert!(paths.len() > 40, "{}", paths.len());
        for p in paths {
            let mut v = base.clone();
            let leaf = v.pointer_mut(&p).unwrap();
            *leaf = match leaf {
                Value::Bool(b) => Value::Bool(!*b),
                Value::Number(n) if n.is_u64() => Value::from(n.as_u64().unwrap() + 1),
                Value::Number(n) => Value::from(n.as_f64().unwrap() * 1.5 + 0.125),
                _ => unreachable!(),
            };
            let changed: ExperimentConfig = serde_json::from_value(v).unwrap();
            assert_ne!(changed.hash(), cfg.hash(), "field {p}");
        }
    }
}

fn small_source() -> SourceDataset {
    let sim = SimConfig {
        region: dpse::params::SearchRegion::new(10.0, 1.5).unwrap(),
        timing: Default::default(),
    };
    let tasks = (0..3)
        .map(|s| {
            let mix = sample_mixture(s, &MixtureSpec::probe_default()).unwrap();
            let mut p = HoleProcess::stationary(mix, s);
            let mut smp = ParamSampler::uniform(StrategyKind::Probe, &sim.region, s);
            collect_task_dataset(&mut p, &mut smp, 20, &sim).unwrap()
        })
        .collect();
    SourceDataset::new(tasks).unwrap()
}

#[test]
fn cache_round_trips_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ArtifactCache::new(dir.path());
    let sim = SimConfig {
        region: dpse::params::SearchRegion::new(10.0, 1.5).unwrap(),
        timing: Default::default(),
    };
    let m = ShadowModel::new(StrategyKind::Probe, ShadowConfig::field().with_seed(3), &sim).unwrap();
    assert!(cache.load_model("k").unwrap().is_none());
    cache.store_model("k", &m).unwrap();
    let back = cache.load_model("k").unwrap().unwrap();
    assert_eq!(back.to_bytes(), m.to_bytes());
    for (a, b) in back.weights().iter().zip(m.weights()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let src = small_source();
    cache.store_source("s", &src).unwrap();
    assert_eq!(cache.load_source("s").unwrap().unwrap(), src);
}

#[test]
fn cache_refuses_corrupt_or_foreign_versions() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ArtifactCache::new(dir.path());
    let mut bytes = source_to_bytes(&small_source()).unwrap();
    assert!(source_from_bytes(&bytes).is_ok());
    bytes[8] = 9;
    match source_from_bytes(&bytes) {
        Err(Error::Integrity(msg)) => assert!(msg.contains("version"), "{msg}"),
        other => panic!("{other:?}"),
    }
    let good = source_to_bytes(&small_source()).unwrap();
    assert!(matches!(source_from_bytes(&good[..good.len() - 3]), Err(Error::Integrity(_))));
    let mut extra = good.clone();
    extra.push(0);
    assert!(matches!(source_from_bytes(&extra), Err(Error::Integrity(_))));

    std::fs::write(dir.path().join("bad.ckpt"), b"definitely not a checkpoint").unwrap();
    assert!(matches!(cache.load_model("bad"), Err(Error::Integrity(_))));
}

#[test]
fn cache_miss_without_training_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ArtifactCache::new(dir.path());
    let r = cache.model_or("missing", true, || panic!("must not train"));
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn csv_rows_have_fixed_headers_and_quote_fields() {
    let rows = vec![
        MetricsRow {
            config_hash: "abc".into(),
            method: "gmm".into(),
            seed: 1,
            success_rate: 0.5,
            mean_cycle_time: 3.25,
            executions: 128,
            note: "insufficient successes, fixed grid used".into(),
        },
        MetricsRow {
            config_hash: "abc".into(),
            method: "gmm".into(),
            seed: 2,
            success_rate: 1.0,
            mean_cycle_time: 2.25,
            executions: 128,
            note: String::new(),
        },
    ];
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "config_hash,method,seed,success_rate,mean_cycle_time,executions,note"
    );
    assert_eq!(lines.next().unwrap(), "abc,gmm,1,0.5,3.25,128,\"insufficient successes, fixed grid used\"");
    let s = summarize(&rows);
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].mean_success_rate, 0.75);
    assert_eq!(s[0].mean_cycle_time, 2.75);
    assert!(check_single_config(["a", "a"]).is_ok());
    assert!(matches!(check_single_config(["a", "b"]), Err(Error::Config(_))));
}

#[test]
fn shipped_configs_resolve_to_presets() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for k in KINDS {
        let cfg = ExperimentConfig::load(&dir.join(format!("{}.json", k.name()))).unwrap();
        assert_eq!(cfg, ExperimentConfig::preset(k));
    }
}

#[test]
fn partial_sections_keep_their_other_defaults() {
    let cfg = ExperimentConfig::from_json(
        r#"{
  "kind": "probe-stationary",
  "seed": 3,
  "methods": ["dpse-cdist", "fixed", "gmm"],
  "m_test": 5,
  "region": { "half_extent": 10.0, "clearance": 1.5 },
  "finetune": { "epochs": 30 },
  "inversion": { "steps": 400, "lr": 0.01, "restarts": 8, "seed": 0 }
}"#,
    )
    .unwrap();
    let preset = ExperimentConfig::preset(ExperimentKind::ProbeStationary);
    assert_eq!(cfg.finetune.epochs, 30);
    assert_eq!(cfg.finetune.lr, preset.finetune.lr);
    assert_eq!(cfg.m_test, 5);
    assert_eq!(cfg.n_test, preset.n_test);

    let meta = ExperimentConfig::from_json(r#"{"kind":"meta-comparison","fomaml":{"epochs":3}}"#).unwrap();
    let want = ExperimentConfig::preset(ExperimentKind::MetaComparison).fomaml;
    assert_eq!(meta.fomaml.trainer, want.trainer);
    assert_eq!(meta.fomaml.epochs, 3);
}
