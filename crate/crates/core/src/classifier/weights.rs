//! Named-tensor container used for backbone weights and classifier
//! checkpoints: a JSON header describing tensor names/dtypes/shapes plus a
//! metadata object, followed by raw little-endian data.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ClassifierError;

const MAGIC: &[u8; 4] = b"DWTF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Little-endian bytes; also the basis of weights-manifest hashes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match self {
            TensorData::F32(v) => Some(v),
            TensorData::F64(_) => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match self {
            TensorData::F64(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeaderEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileHeader {
    tensors: Vec<TensorHeaderEntry>,
    meta: serde_json::Value,
}

/// An ordered collection of named tensors plus free-form metadata.
#[derive(Debug, Clone, Default)]
pub struct TensorFile {
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let header = FileHeader {
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorHeaderEntry {
                    name: t.name.clone(),
                    dtype: match t.data {
                        TensorData::F32(_) => "f32".to_string(),
                        TensorData::F64(_) => "f64".to_string(),
                    },
                    shape: t.shape.clone(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");
        let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(MAGIC).map_err(|e| io_err(path, e))?;
        w.write_all(&VERSION.to_le_bytes())
            .map_err(|e| io_err(path, e))?;
        w.write_all(&(header_json.len() as u32).to_le_bytes())
            .map_err(|e| io_err(path, e))?;
        w.write_all(&header_json).map_err(|e| io_err(path, e))?;
        for t in &self.tensors {
            w.write_all(&t.data.to_le_bytes())
                .map_err(|e| io_err(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let file =
            std::fs::File::open(path).map_err(|_| ClassifierError::MissingPretrainedWeights {
                path: path.to_path_buf(),
            })?;
        let mut r = std::io::BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| parse_err(path, e))?;
        if &magic != MAGIC {
            return Err(ClassifierError::WeightsParse {
                path: path.to_path_buf(),
                reason: "bad magic".to_string(),
            });
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4).map_err(|e| parse_err(path, e))?;
        let version = u32::from_le_bytes(buf4);
        if version != VERSION {
            return Err(ClassifierError::WeightsParse {
                path: path.to_path_buf(),
                reason: format!("unsupported version {version}"),
            });
        }
        r.read_exact(&mut buf4).map_err(|e| parse_err(path, e))?;
        let header_len = u32::from_le_bytes(buf4) as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)
            .map_err(|e| parse_err(path, e))?;
        let header: FileHeader =
            serde_json::from_slice(&header_bytes).map_err(|e| ClassifierError::WeightsParse {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let count: usize = entry.shape.iter().product();
            let data = match entry.dtype.as_str() {
                "f32" => {
                    let mut bytes = vec![0u8; count * 4];
                    r.read_exact(&mut bytes).map_err(|e| parse_err(path, e))?;
                    TensorData::F32(
                        bytes
                            .chunks_exact(4)
                            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                "f64" => {
                    let mut bytes = vec![0u8; count * 8];
                    r.read_exact(&mut bytes).map_err(|e| parse_err(path, e))?;
                    TensorData::F64(
                        bytes
                            .chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                other => {
                    return Err(ClassifierError::WeightsParse {
                        path: path.to_path_buf(),
                        reason: format!("unknown dtype {other}"),
                    })
                }
            };
            tensors.push(Tensor {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ClassifierError {
    ClassifierError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn parse_err(path: &Path, e: std::io::Error) -> ClassifierError {
    ClassifierError::WeightsParse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// One row of the portable weights manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub parameter_count: usize,
    pub sha256: String,
    pub trainable: bool,
}

/// Ordered (layer name, parameter count, content hash, trainable flag)
/// records; the freeze-verification surface.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub entries: Vec<LayerEntry>,
}

impl WeightsManifest {
    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        std::fs::write(path, serde_json::to_vec_pretty(self).expect("serializes"))
            .map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| ClassifierError::WeightsParse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn entry(&self, name: &str) -> Option<&LayerEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Names of layers whose content hash differs between the manifests.
    pub fn changed_layers(&self, other: &WeightsManifest) -> Vec<String> {
        self.entries
            .iter()
            .filter_map(|e| {
                other
                    .entry(&e.name)
                    .filter(|o| o.sha256 != e.sha256)
                    .map(|_| e.name.clone())
            })
            .collect()
    }
}

pub(crate) fn tensor_sha256(t: &Tensor) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(t.data.to_le_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub(crate) fn file_sha256(path: &Path) -> Result<String, ClassifierError> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
