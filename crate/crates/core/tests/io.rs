mod common;

use prunekit::model::{load_model, load_model_with, save_model, save_model_with, GraphBuilder, ParseMode, Provenance};
use prunekit::prune::{load_mask, prune_block, prune_global, save_mask};
use prunekit::{Error, Role};

#[test]
fn ten_thousand_layer_round_trip() {
    let mut b = GraphBuilder::new("deep", 4, 2, 2);
    for i in 0..5000 {
        b.pointwise(&format!("pw{i}"), 4, Role::Pw).relu(&format!("relu{i}"));
    }
    let m = b.build_random(10).unwrap();
    assert_eq!(m.layers.len(), 10_000);
    let dir = tempfile::tempdir().unwrap();
    let (mp, wp) = (dir.path().join("m.json"), dir.path().join("m.bin"));
    save_model(&m, &mp, &wp).unwrap();
    let back = load_model(&mp, &wp).unwrap();
    assert_eq!(back, m);
    let bits_a: Vec<u32> = m.weights.iter().map(|w| w.to_bits()).collect();
    let bits_b: Vec<u32> = back.weights.iter().map(|w| w.to_bits()).collect();
    assert_eq!(bits_a, bits_b);
}

#[test]
fn provenance_and_unknown_fields() {
    let m = common::random_model(5, 1000);
    let dir = tempfile::tempdir().unwrap();
    let (mp, wp) = (dir.path().join("m.json"), dir.path().join("m.bin"));
    let prov = Provenance { toolkit_version: prunekit::TOOLKIT_VERSION.into(), config_hash: "ab12".into() };
    save_model_with(&m, &mp, &wp, Some(&prov)).unwrap();
    let (back, got) = load_model_with(&mp, &wp, ParseMode::Strict).unwrap();
    assert_eq!((back, got), (m.clone(), Some(prov)));

    let text = std::fs::read_to_string(&mp).unwrap().replacen("\"prunable\"", "\"color\": 1, \"prunable\"", 1);
    std::fs::write(&mp, text).unwrap();
    let err = load_model(&mp, &wp).unwrap_err();
    assert!(err.to_string().contains("color"), "{err}");
    assert_eq!(load_model_with(&mp, &wp, ParseMode::Lenient).unwrap().0, m);
}

#[test]
fn truncated_blob_is_rejected() {
    let m = common::random_model(1, 1000);
    let dir = tempfile::tempdir().unwrap();
    let (mp, wp) = (dir.path().join("m.json"), dir.path().join("m.bin"));
    save_model(&m, &mp, &wp).unwrap();
    let bytes = std::fs::read(&wp).unwrap();
    std::fs::write(&wp, &bytes[..bytes.len() - 4]).unwrap();
    let err = load_model(&mp, &wp).unwrap_err();
    assert!(matches!(err, Error::WeightsLength { .. } | Error::InvalidLayer { .. }), "{err:?}");
    assert!(matches!(load_model(dir.path().join("missing.json"), &wp), Err(Error::Io { .. })));
}

#[test]
fn mask_files_round_trip() {
    let m = common::random_model(7, 20_000);
    let dir = tempfile::tempdir().unwrap();
    for (mask, _) in [prune_global(&m, 0.37).unwrap(), prune_block(&m, 0.5).unwrap()] {
        let path = dir.path().join("mask.json");
        save_mask(&mask, &path, None).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
    }
}
