//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes            | content                                         |
//! |------------------|-------------------------------------------------|
//! | 8                | magic `VGPINNCK`                                |
//! | 4 (u32)          | format version, currently 1                     |
//! | 8 (u64)          | header length `h` in bytes                      |
//! | `h`              | UTF-8 JSON header                               |
//! | rest             | tensors as f64, concatenated in header order    |
//!
//! The header is `{"kind", "meta", "tensors": [{"name", "shape"}]}`. Each
//! tensor is stored row-major with `shape.iter().product()` values. Floats
//! are written by their bit pattern, so a round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Dense, Mlp, MlpConfig};

pub const MAGIC: &[u8; 8] = b"VGPINNCK";
pub const FORMAT_VERSION: u32 = 1;

const NETWORK_KIND: &str = "mlp";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorInfo>,
}

/// Named tensors plus free-form JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(TensorInfo, Vec<f64>)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: data.len(),
            });
        }
        self.tensors.push((
            TensorInfo {
                name: name.into(),
                shape,
            },
            data,
        ));
        Ok(())
    }

    /// Removes and returns the next tensor, checking its name.
    fn take(&mut self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        if self.tensors.is_empty() {
            return Err(Error::Checkpoint(format!("missing tensor {name}")));
        }
        let (info, data) = self.tensors.remove(0);
        if info.name != name {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {}", info.name)));
        }
        Ok((info.shape, data))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|(i, _)| i.clone()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for (_, data) in &self.tensors {
            for v in data {
                out.write_all(&v.to_bits().to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("file too short".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} not supported (expected {FORMAT_VERSION})"
            )));
        }
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut json = vec![0u8; len];
        input
            .read_exact(&mut json)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&json)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in header.tensors {
            let n: usize = info.shape.iter().product();
            let mut raw = vec![0u8; n * 8];
            input
                .read_exact(&mut raw)
                .map_err(|_| Error::Checkpoint(format!("truncated tensor {}", info.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
                .collect();
            tensors.push((info, data));
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        self.write_to(BufWriter::new(File::create(&tmp)?))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::read_from(BufReader::new(f))
    }
}

/// Appends the weights and biases of `net` as `w{i}` / `b{i}`.
pub fn push_network(c: &mut Container, prefix: &str, net: &Mlp) -> Result<()> {
    for (i, layer) in net.layers().iter().enumerate() {
        let (r, k) = layer.w.dim();
        c.push(format!("{prefix}w{i}"), vec![r, k], layer.w.iter().copied().collect())?;
        c.push(format!("{prefix}b{i}"), vec![r], layer.b.to_vec())?;
    }
    Ok(())
}

/// Inverse of [`push_network`]; shapes are checked against `config`.
pub fn take_network(c: &mut Container, prefix: &str, config: MlpConfig) -> Result<Mlp> {
    config.validate()?;
    let mut layers = Vec::new();
    for (i, (r, k)) in config.shapes().into_iter().enumerate() {
        let (ws, w) = c.take(&format!("{prefix}w{i}"))?;
        let (bs, b) = c.take(&format!("{prefix}b{i}"))?;
        if ws != [r, k] || bs != [r] {
            return Err(Error::Checkpoint(format!(
                "layer {i}: stored shapes {ws:?}/{bs:?}, config implies [{r}, {k}]/[{r}]"
            )));
        }
        let w = Array2::from_shape_vec((r, k), w).map_err(|e| Error::Checkpoint(e.to_string()))?;
        layers.push(Dense { w, b: Array1::from(b) });
    }
    Mlp::from_layers(config, layers)
}

/// Takes the next tensor by name; for containers with custom contents.
pub fn take_tensor(c: &mut Container, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    c.take(name)
}

pub fn network_container(net: &Mlp) -> Result<Container> {
    let mut c = Container::new(NETWORK_KIND, serde_json::to_value(net.config())?);
    push_network(&mut c, "", net)?;
    Ok(c)
}

pub fn network_from_container(mut c: Container) -> Result<Mlp> {
    if c.kind != NETWORK_KIND {
        return Err(Error::Checkpoint(format!("expected a network checkpoint, found kind {}", c.kind)));
    }
    let config: MlpConfig = serde_json::from_value(c.meta.clone())?;
    let net = take_network(&mut c, "", config)?;
    if !c.tensors.is_empty() {
        return Err(Error::Checkpoint("unexpected extra tensors".into()));
    }
    Ok(net)
}

pub fn save_network(path: &Path, net: &Mlp) -> Result<()> {
    network_container(net)?.save(path)
}

pub fn load_network(path: &Path) -> Result<Mlp> {
    network_from_container(Container::load(path)?)
}
