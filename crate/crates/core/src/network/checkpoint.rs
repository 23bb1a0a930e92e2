//! Parameter checkpoints.
//!
//! Flat binary layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  b"SYMP"
//! version u32      1
//! count   u32      number of tensors
//! tensor  repeated: name_len u16, name bytes (utf-8),
//!                   rows u32, cols u32, rows*cols f64 payload (row-major)
//! ```
//!
//! Tensor names are `w0..w{d-1}`, `theta`, and per layer `bn{l}.scale`,
//! `bn{l}.shift`, `bn{l}.run_mean`, `bn{l}.run_var` (vectors stored as
//! `1 x n`). Payloads are always f64 regardless of the in-memory scalar.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::linalg::Matrix;
use crate::scalar::Scalar;

use super::{BnLayer, NetworkParams};

const MAGIC: &[u8; 4] = b"SYMP";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

fn tensor_pairs<S: Scalar>(params: &NetworkParams<S>) -> Vec<(String, Matrix<S>)> {
    let mut tensors = Vec::new();
    for (l, w) in params.weights.iter().enumerate() {
        tensors.push((format!("w{l}"), w.clone()));
    }
    tensors.push(("theta".to_string(), params.theta.clone()));
    if let Some(bn) = &params.bn {
        for (l, layer) in bn.iter().enumerate() {
            let vecs = [
                ("scale", &layer.scale),
                ("shift", &layer.shift),
                ("run_mean", &layer.run_mean),
                ("run_var", &layer.run_var),
            ];
            for (field, v) in vecs {
                tensors.push((
                    format!("bn{l}.{field}"),
                    Matrix::from_vec(1, v.len(), v.clone()),
                ));
            }
        }
    }
    tensors
}

pub fn save_params<S: Scalar>(
    params: &NetworkParams<S>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let wrap = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tensors = tensor_pairs(params);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in &tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for &x in m.as_slice() {
            buf.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(wrap)?;
    file.write_all(&buf).map_err(wrap)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "needed {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_params<S: Scalar>(path: &Path) -> Result<NetworkParams<S>, CheckpointError> {
    let wrap = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(wrap)?
        .read_to_end(&mut bytes)
        .map_err(wrap)?;

    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = r.u32()? as usize;
    let mut tensors: HashMap<String, Matrix<S>> = HashMap::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| CheckpointError::Corrupt(format!("tensor name not utf-8: {e}")))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let payload = r.take(rows * cols * 8)?;
        let data: Vec<S> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .map(|x| {
                if x.is_finite() {
                    Ok(S::cast(x))
                } else {
                    Err(CheckpointError::Corrupt(format!(
                        "non-finite entry in {name}"
                    )))
                }
            })
            .collect::<Result<_, _>>()?;
        tensors.insert(name, Matrix::from_vec(rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    let mut weights = Vec::new();
    while let Some(w) = tensors.remove(&format!("w{}", weights.len())) {
        weights.push(w);
    }
    if weights.is_empty() {
        return Err(CheckpointError::Corrupt("no weight tensors".to_string()));
    }
    let theta = tensors
        .remove("theta")
        .ok_or_else(|| CheckpointError::Corrupt("missing theta".to_string()))?;

    let bn = if tensors.contains_key("bn0.scale") {
        let mut layers = Vec::new();
        for l in 0..weights.len() {
            let mut field = |f: &str| -> Result<Vec<S>, CheckpointError> {
                let name = format!("bn{l}.{f}");
                let m = tensors
                    .remove(&name)
                    .ok_or_else(|| CheckpointError::Corrupt(format!("missing {name}")))?;
                Ok(m.as_slice().to_vec())
            };
            layers.push(BnLayer {
                scale: field("scale")?,
                shift: field("shift")?,
                run_mean: field("run_mean")?,
                run_var: field("run_var")?,
            });
        }
        Some(layers)
    } else {
        None
    };

    if !tensors.is_empty() {
        let mut names: Vec<_> = tensors.into_keys().collect();
        names.sort();
        return Err(CheckpointError::Corrupt(format!(
            "unexpected tensors: {names:?}"
        )));
    }
    Ok(NetworkParams { weights, theta, bn })
}
