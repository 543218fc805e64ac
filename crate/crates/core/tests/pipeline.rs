mod common;

use std::fs;

use deepcompress::pipeline::{run_pipeline, RunConfig};
use deepcompress::quant::pack::model_bits;
use deepcompress::quant::QuantSpec;
use deepcompress::report::{episode_rows, layer_rows, read_csv, EpisodeRow, LayerRow};
use deepcompress::Error;

use common::tiny_config;

#[test]
fn all_stages_disabled_reports_baseline_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.stages.prune = false;
    cfg.stages.quantize = false;
    let r = run_pipeline(&cfg, &dir.path().join("out")).unwrap();
    assert_eq!(r.stages.len(), 1);
    assert_eq!(r.stages[0].stage, "baseline");
    assert!(r.prune_episodes.is_empty() && r.quant_episodes.is_empty());
    assert!(r.failure.is_none());
    assert!(dir.path().join("out/baseline.json").exists());
}

#[test]
fn zero_bound_prunes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.prune.env.max_rate = 0.0;
    cfg.stages.quantize = false;
    let r = run_pipeline(&cfg, &dir.path().join("out")).unwrap();
    let base = r.stage("baseline").unwrap();
    for name in ["pruned", "finetuned"] {
        let s = r.stage(name).unwrap();
        assert_eq!(s.nonzero_params, base.nonzero_params);
        assert_eq!(s.params, base.params);
        assert_eq!(s.test_accuracy, base.test_accuracy);
        assert_eq!(s.val_accuracy, base.val_accuracy);
    }
    assert!(r.prune_episodes.iter().all(|e| e.actions.iter().all(|&a| a == 0.0)));
}

#[test]
fn full_run_is_reproducible_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = run_pipeline(&cfg, &a).unwrap();
    run_pipeline(&cfg, &b).unwrap();
    for f in ["report.json", "layers.csv", "episodes.csv", "pareto.csv", "prune_trace.csv", "quant_trace.csv", "quantized.qbin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }

    let names: Vec<&str> = ra.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(names, ["baseline", "pruned", "finetuned", "quantized"]);
    for s in &ra.stages {
        assert!(s.totals_consistent());
        assert_eq!(s.params, s.layers.iter().map(|l| l.params).sum::<usize>());
    }
    for w in ra.stages.windows(2) {
        assert!(w[1].nonzero_params <= w[0].nonzero_params, "{} grew after {}", w[1].stage, w[0].stage);
        assert!(w[1].params <= w[0].params);
    }
    assert_eq!(ra.prune_episodes.len(), 2);
    assert_eq!(ra.quant_episodes.len(), 2);
    assert!(!ra.pareto_front.is_empty());

    // Packed file size follows the bit accounting.
    let q = ra.stage("quantized").unwrap();
    let model: deepcompress::Network = deepcompress::nn::checkpoint::load(&a.join("pruned")).unwrap();
    let spec = QuantSpec { bits: q.layers.iter().filter_map(|l| l.bits).collect() };
    let bits = model_bits(&model, &spec);
    assert_eq!(q.model_bits, bits);
    assert_eq!(fs::metadata(a.join("quantized.qbin")).unwrap().len(), bits.div_ceil(8));

    // JSON → CSV → JSON projection of the tabular parts.
    let layers: Vec<LayerRow> = read_csv(fs::File::open(a.join("layers.csv")).unwrap()).unwrap();
    assert_eq!(layers, layer_rows(&ra));
    let eps: Vec<EpisodeRow> = read_csv(fs::File::open(a.join("episodes.csv")).unwrap()).unwrap();
    assert_eq!(eps, episode_rows(&ra));
    let back: Vec<_> = eps.iter().filter(|e| e.stage == "prune").map(|e| e.to_summary().unwrap()).collect();
    assert_eq!(back, ra.prune_episodes);
    let json: deepcompress::CompressionReport = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(json, ra);
}

#[test]
fn failure_yields_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.data.images = dir.path().join("missing.idx");
    let out = dir.path().join("out");
    let partial = run_pipeline(&cfg, &out).unwrap_err();
    assert!(matches!(partial.error, Error::Io { .. }));
    assert_eq!(partial.error.exit_code(), 5);
    assert_eq!(partial.report.failure.as_ref().unwrap().stage, "data");
    let on_disk: deepcompress::CompressionReport = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(on_disk.is_partial());
}

#[test]
fn data_errors_are_classified() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.data.train = 10_000;
    let partial = run_pipeline(&cfg, &dir.path().join("out")).unwrap_err();
    assert_eq!(partial.error.exit_code(), 3);
    assert_eq!(partial.report.failure.unwrap().stage, "data");
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    let e = RunConfig::from_json(r#"{"seed": 1, "sede": 2}"#).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let e = RunConfig::from_json(r#"{"prune": {"max_rate": 0.5, "bogus": 1}}"#).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let cfg = RunConfig::from_json(r#"{"prune": {"max_rate": 1.5}}"#).unwrap();
    assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    let cfg = RunConfig::default();
    let round: RunConfig = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(round, cfg);
}

#[test]
fn shipped_config_parses() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/mnist_lenet.json");
    let cfg = RunConfig::from_file(&path).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.prune.env.max_rate, 0.5);
    assert_eq!(cfg.prune.episodes, 30);
    assert!(cfg.data.images.exists(), "{:?}", cfg.data.images);
}
