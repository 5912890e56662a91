use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{LayerSpec, ModelGraph, LAYER_FIELDS};
use crate::error::{Error, Result};

/// How unknown manifest fields are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

/// Who wrote an artifact and under which configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub toolkit_version: String,
    pub config_hash: String,
}

/// On-disk JSON form of a graph, without the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

const MANIFEST_FIELDS: &[&str] = &["name", "layers", "provenance"];

impl Manifest {
    pub fn parse(text: &str, mode: ParseMode) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        if mode == ParseMode::Strict {
            check_known_fields(&value)?;
        }
        serde_json::from_value(value).map_err(|e| Error::Manifest(e.to_string()))
    }
}

fn check_known_fields(value: &Value) -> Result<()> {
    let top = value
        .as_object()
        .ok_or_else(|| Error::Manifest("top level must be an object".into()))?;
    if let Some(key) = top.keys().find(|k| !MANIFEST_FIELDS.contains(&k.as_str())) {
        return Err(Error::Manifest(format!("unknown top-level field `{key}`")));
    }
    let Some(layers) = top.get("layers").and_then(Value::as_array) else {
        return Ok(());
    };
    for (i, layer) in layers.iter().enumerate() {
        let Some(obj) = layer.as_object() else { continue };
        if let Some(key) = obj.keys().find(|k| !LAYER_FIELDS.contains(&k.as_str())) {
            let name = obj
                .get("name")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("#{i}"));
            return Err(Error::Manifest(format!("layer `{name}`: unknown field `{key}`")));
        }
    }
    Ok(())
}

/// Loads a manifest and its weight blob, rejecting unknown manifest fields.
pub fn load_model(manifest_path: impl AsRef<Path>, weights_path: impl AsRef<Path>) -> Result<ModelGraph> {
    load_model_with(manifest_path, weights_path, ParseMode::Strict).map(|(m, _)| m)
}

/// Loads a graph and returns the provenance block of its manifest, if any.
pub fn load_model_with(
    manifest_path: impl AsRef<Path>,
    weights_path: impl AsRef<Path>,
    mode: ParseMode,
) -> Result<(ModelGraph, Option<Provenance>)> {
    let manifest_path = manifest_path.as_ref();
    let weights_path = weights_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = Manifest::parse(&text, mode)?;
    let bytes = fs::read(weights_path).map_err(|e| Error::io(weights_path, e))?;
    let weights = decode_weights(&bytes)?;
    let model = ModelGraph::new(manifest.name, manifest.layers, weights)?;
    Ok((model, manifest.provenance))
}

pub fn save_model(model: &ModelGraph, manifest_path: impl AsRef<Path>, weights_path: impl AsRef<Path>) -> Result<()> {
    save_model_with(model, manifest_path, weights_path, None)
}

/// Writes the manifest (with an optional provenance block) and the weight
/// blob. Each file is replaced atomically.
pub fn save_model_with(
    model: &ModelGraph,
    manifest_path: impl AsRef<Path>,
    weights_path: impl AsRef<Path>,
    provenance: Option<&Provenance>,
) -> Result<()> {
    let manifest = Manifest {
        name: model.name.clone(),
        layers: model.layers.clone(),
        provenance: provenance.cloned(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    text.push('\n');
    write_atomic(manifest_path.as_ref(), text.as_bytes())?;
    write_atomic(weights_path.as_ref(), &encode_weights(&model.weights))
}

pub fn encode_weights(weights: &[f32]) -> Vec<u8> {
    weights.iter().flat_map(|w| w.to_le_bytes()).collect()
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Manifest(format!(
            "weights blob length {} is not a multiple of 4 bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::pw;

    fn fixture() -> ModelGraph {
        let a = pw("a", 2, 3, 4, 0);
        let mut b = pw("b", 3, 2, 4, 6);
        b.role = crate::model::Role::Pwl;
        let mut relu = pw("r", 2, 2, 4, 0);
        relu.op_kind = crate::model::OpKind::Relu;
        relu.role = crate::model::Role::Other;
        relu.weight_len = 0;
        relu.prunable = false;
        let weights = (0..12).map(|i| i as f32 * 0.25 - 1.0).collect();
        ModelGraph::new("tiny", vec![a, b, relu], weights).unwrap()
    }

    #[test]
    fn round_trip_three_layers() {
        let dir = tempfile::tempdir().unwrap();
        let (mp, wp) = (dir.path().join("m.json"), dir.path().join("m.bin"));
        let m = fixture();
        save_model(&m, &mp, &wp).unwrap();
        let back = load_model(&mp, &wp).unwrap();
        assert_eq!(back.layers.len(), 3);
        assert_eq!(back, m);
        assert_eq!(fs::read(&wp).unwrap(), encode_weights(&m.weights));
    }

    #[test]
    fn strict_mode_rejects_unknown_fields() {
        let m = fixture();
        let mut v = serde_json::to_value(Manifest {
            name: m.name.clone(),
            layers: m.layers.clone(),
            provenance: None,
        })
        .unwrap();
        v["layers"][1]["dilation"] = Value::from(2);
        let text = v.to_string();
        let err = Manifest::parse(&text, ParseMode::Strict).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`b`") && msg.contains("dilation"), "{msg}");
        assert!(Manifest::parse(&text, ParseMode::Lenient).is_ok());
    }

    #[test]
    fn blob_length_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (mp, wp) = (dir.path().join("m.json"), dir.path().join("m.bin"));
        save_model(&fixture(), &mp, &wp).unwrap();
        fs::write(&wp, encode_weights(&[0.0; 11])).unwrap();
        let err = load_model(&mp, &wp).unwrap_err();
        assert!(matches!(err, Error::InvalidLayer { .. } | Error::WeightsLength { .. }), "{err}");
    }

    #[test]
    fn malformed_manifest() {
        let err = Manifest::parse("{\"name\": 3}", ParseMode::Strict).unwrap_err();
        assert!(matches!(err, Error::Manifest(_)));
    }

    #[test]
    fn empty_layer_list_loads() {
        let dir = tempfile::tempdir().unwrap();
        let (mp, wp) = (dir.path().join("m.json"), dir.path().join("m.bin"));
        fs::write(&mp, r#"{"name":"empty","layers":[]}"#).unwrap();
        fs::write(&wp, b"").unwrap();
        let m = load_model(&mp, &wp).unwrap();
        assert!(m.layers.is_empty());
        assert_eq!(crate::model::model_flops(&m, None).unwrap().total, 0);
    }
}
