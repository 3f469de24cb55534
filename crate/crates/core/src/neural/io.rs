//! On-disk parameter format: a JSON manifest (`<stem>.manifest`) describing
//! network specs, array shapes and offsets, plus a flat little-endian f64 blob
//! (`<stem>.weights`) holding every array back to back.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MlpParams, MlpSpec};
use crate::error::{Error, Result};

pub const FORMAT: &str = "curio-params-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the weights blob, in f64 elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub networks: BTreeMap<String, MlpSpec>,
    pub arrays: Vec<ArrayEntry>,
    pub metadata: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub networks: BTreeMap<String, MlpSpec>,
    pub arrays: Vec<NamedArray>,
    pub metadata: serde_json::Value,
}

impl Default for Bundle {
    fn default() -> Self {
        Self {
            networks: BTreeMap::new(),
            arrays: Vec::new(),
            metadata: serde_json::Value::Object(Default::default()),
        }
    }
}

impl Bundle {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            metadata,
            ..Self::default()
        }
    }

    pub fn push_array(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn add_mlp(&mut self, name: &str, spec: &MlpSpec, params: &MlpParams) {
        self.networks.insert(name.to_string(), spec.clone());
        for (i, l) in params.layers.iter().enumerate() {
            self.push_array(format!("{name}.{i}.weight"), vec![l.fan_in, l.fan_out], l.weight.clone());
            self.push_array(format!("{name}.{i}.bias"), vec![l.fan_out], l.bias.clone());
        }
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| format_err(format!("missing array {name}")))
    }

    pub fn mlp(&self, name: &str) -> Result<(MlpSpec, MlpParams)> {
        let spec = self
            .networks
            .get(name)
            .ok_or_else(|| format_err(format!("missing network {name}")))?
            .clone();
        spec.validate()?;
        let mut params = MlpParams::zeros(&spec);
        for (i, l) in params.layers.iter_mut().enumerate() {
            let w = self.array(&format!("{name}.{i}.weight"))?;
            let b = self.array(&format!("{name}.{i}.bias"))?;
            if w.shape != [l.fan_in, l.fan_out] || b.shape != [l.fan_out] {
                return Err(format_err(format!("shape mismatch in {name} layer {i}")));
            }
            l.weight.clone_from(&w.data);
            l.bias.clone_from(&b.data);
        }
        Ok((spec, params))
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0;
        let arrays = self
            .arrays
            .iter()
            .map(|a| {
                let e = ArrayEntry {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                    offset,
                    len: a.data.len(),
                };
                offset += a.data.len();
                e
            })
            .collect();
        Manifest {
            format: FORMAT.to_string(),
            networks: self.networks.clone(),
            arrays,
            metadata: self.metadata.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let mut manifest = serde_json::to_vec_pretty(&self.manifest())?;
        manifest.push(b'\n');
        let weights = self
            .arrays
            .iter()
            .flat_map(|a| a.data.iter().flat_map(|v| v.to_le_bytes()))
            .collect();
        Ok((manifest, weights))
    }

    pub fn from_bytes(manifest: &[u8], weights: &[u8]) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(manifest)?;
        if m.format != FORMAT {
            return Err(format_err(format!("unknown format {:?}", m.format)));
        }
        if weights.len() % 8 != 0 {
            return Err(format_err("weights blob is not a whole number of f64".into()));
        }
        let values: Vec<f64> = weights
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mut expected_offset = 0;
        let mut arrays = Vec::with_capacity(m.arrays.len());
        for e in m.arrays {
            let shape_len: usize = e.shape.iter().product();
            if e.offset != expected_offset || shape_len != e.len || e.offset + e.len > values.len() {
                return Err(format_err(format!("bad extent for array {}", e.name)));
            }
            expected_offset += e.len;
            arrays.push(NamedArray {
                data: values[e.offset..e.offset + e.len].to_vec(),
                name: e.name,
                shape: e.shape,
            });
        }
        if expected_offset != values.len() {
            return Err(format_err("trailing data in weights blob".into()));
        }
        Ok(Self {
            networks: m.networks,
            arrays,
            metadata: m.metadata,
        })
    }

    /// Writes `<stem>.manifest` and `<stem>.weights`.
    pub fn save(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        let (manifest, weights) = self.to_bytes()?;
        let (mp, wp) = paths(stem);
        if let Some(dir) = mp.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&mp, manifest)?;
        fs::write(&wp, weights)?;
        Ok((mp, wp))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (mp, wp) = paths(stem);
        let manifest = fs::read(&mp)?;
        let weights = fs::read(&wp)?;
        Self::from_bytes(&manifest, &weights).map_err(|e| match e {
            Error::Format { reason, .. } => Error::Format { path: mp, reason },
            Error::Json(j) => Error::Format {
                path: mp,
                reason: j.to_string(),
            },
            other => other,
        })
    }
}

pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    let s = stem.as_os_str().to_owned();
    let mut m = s.clone();
    m.push(".manifest");
    let mut w = s;
    w.push(".weights");
    (PathBuf::from(m), PathBuf::from(w))
}

fn format_err(reason: String) -> Error {
    Error::Format {
        path: PathBuf::new(),
        reason,
    }
}
