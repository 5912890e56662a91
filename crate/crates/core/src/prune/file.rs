//! JSON envelope for masks.
//!
//! ```json
//! {
//!   "format": "prunekit.mask",
//!   "toolkit_version": "prunekit 0.1.0",
//!   "config_hash": "…",
//!   "method": "block_magnitude",
//!   "block_shape": [1, 4],
//!   "bit_order": "lsb0",
//!   "layers": [{"name": "pw1", "length": 96, "encoding": "base64", "bits": "…"}]
//! }
//! ```
//!
//! Bit `i` of a layer is bit `i % 8` (least significant first) of byte
//! `i / 8`; 1 keeps the weight. `"encoding": "raw"` spells the bits as a
//! string of `0`/`1` characters in index order instead.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Bitset, PruneMethod, SparsityMask};
use crate::error::{Error, Result};
use crate::model::io::write_atomic;
use crate::model::Provenance;

pub const MASK_FORMAT: &str = "prunekit.mask";
const BIT_ORDER: &str = "lsb0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskFile {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toolkit_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub method: PruneMethod,
    pub block_shape: Option<(usize, usize)>,
    pub bit_order: String,
    pub layers: Vec<MaskRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitEncoding {
    Base64,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRecord {
    pub name: String,
    pub length: usize,
    pub encoding: BitEncoding,
    pub bits: String,
}

impl MaskFile {
    pub fn from_mask(mask: &SparsityMask, provenance: Option<&Provenance>) -> Self {
        MaskFile {
            format: MASK_FORMAT.to_string(),
            toolkit_version: provenance.map(|p| p.toolkit_version.clone()),
            config_hash: provenance.map(|p| p.config_hash.clone()),
            method: mask.method,
            block_shape: mask.block_shape,
            bit_order: BIT_ORDER.to_string(),
            layers: mask
                .layers()
                .iter()
                .map(|(name, bits)| MaskRecord {
                    name: name.clone(),
                    length: bits.len(),
                    encoding: BitEncoding::Base64,
                    bits: STANDARD.encode(bits.to_bytes()),
                })
                .collect(),
        }
    }

    pub fn into_mask(self) -> Result<SparsityMask> {
        if self.format != MASK_FORMAT {
            return Err(Error::MaskFormat(format!("unknown format `{}`", self.format)));
        }
        if self.bit_order != BIT_ORDER {
            return Err(Error::MaskFormat(format!("unsupported bit order `{}`", self.bit_order)));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for rec in self.layers {
            let bits = match rec.encoding {
                BitEncoding::Base64 => {
                    let bytes = STANDARD
                        .decode(rec.bits.as_bytes())
                        .map_err(|e| Error::MaskFormat(format!("layer `{}`: {e}", rec.name)))?;
                    Bitset::from_bytes(&bytes, rec.length)
                }
                BitEncoding::Raw => {
                    let chars: Vec<char> = rec.bits.chars().collect();
                    (chars.len() == rec.length && chars.iter().all(|c| matches!(c, '0' | '1')))
                        .then(|| Bitset::from_bools(chars.iter().map(|&c| c == '1')))
                }
            }
            .ok_or_else(|| Error::MaskFormat(format!("layer `{}`: bits do not match length {}", rec.name, rec.length)))?;
            layers.push((rec.name, bits));
        }
        Ok(SparsityMask::from_layers(self.method, self.block_shape, layers))
    }
}

pub fn mask_to_json(mask: &SparsityMask, provenance: Option<&Provenance>) -> String {
    let mut s = serde_json::to_string_pretty(&MaskFile::from_mask(mask, provenance)).expect("mask serializes");
    s.push('\n');
    s
}

pub fn mask_from_json(text: &str) -> Result<SparsityMask> {
    let file: MaskFile = serde_json::from_str(text).map_err(|e| Error::MaskFormat(e.to_string()))?;
    file.into_mask()
}

pub fn save_mask(mask: &SparsityMask, path: impl AsRef<Path>, provenance: Option<&Provenance>) -> Result<()> {
    write_atomic(path.as_ref(), mask_to_json(mask, provenance).as_bytes())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<SparsityMask> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    mask_from_json(&text)
}
