//! Binary checkpoint: an 8-byte magic, a little-endian `u32` format version,
//! a `u64` header length, a JSON header (config, array names and shapes,
//! free-form metadata), then every array's values as little-endian `f64` in
//! header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelState};
use crate::diffcore::Array;

pub const MAGIC: &[u8; 8] = b"LFRAMECK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    arrays: Vec<Entry>,
    extra: Vec<Entry>,
    metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

/// A model plus optional auxiliary arrays (optimizer moments) and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: ModelState,
    pub extra: Vec<(String, Array)>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new(state: ModelState) -> Self {
        Self {
            state,
            extra: Vec::new(),
            metadata: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let entry = |(n, a): (&String, &Array)| Entry {
            name: n.clone(),
            shape: a.shape().to_vec(),
        };
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.state.config().clone(),
            arrays: self.state.names().iter().zip(self.state.arrays()).map(entry).collect(),
            extra: self.extra.iter().map(|(n, a)| entry((n, a))).collect(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let values = self
            .state
            .arrays()
            .iter()
            .chain(self.extra.iter().map(|(_, a)| a))
            .flat_map(|a| a.data().iter());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)
            .map_err(|e| ModelError::Checkpoint(format!("invalid header: {e}")))?;
        let mut data = &bytes[20 + hlen..];
        let mut read = |entries: Vec<Entry>| -> Result<Vec<(String, Array)>, ModelError> {
            entries
                .into_iter()
                .map(|e| {
                    let len: usize = e.shape.iter().product();
                    if data.len() < 8 * len {
                        return Err(bad("truncated array data"));
                    }
                    let values = data[..8 * len]
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    data = &data[8 * len..];
                    Ok((e.name, Array::new(e.shape, values)?))
                })
                .collect()
        };
        let arrays = read(header.arrays)?;
        let extra = read(header.extra)?;
        if !data.is_empty() {
            return Err(bad("trailing bytes after array data"));
        }
        Ok(Self {
            state: ModelState::from_arrays(header.config, arrays)?,
            extra,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelState {
        let c = ModelConfig {
            num_layers: 2,
            hidden_channels: 8,
            num_heads: 2,
            num_basis: 4,
            ..ModelConfig::default()
        };
        ModelState::init(&c, 3).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let mut ck = Checkpoint::new(tiny());
        ck.extra.push(("adam.step".into(), Array::scalar(17.0)));
        ck.metadata = serde_json::json!({"step": 17});
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = Checkpoint::new(tiny()).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
        let mut version = bytes;
        version[8] = 9;
        let err = Checkpoint::from_bytes(&version).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
