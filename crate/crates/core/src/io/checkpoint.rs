//! Checkpoint files: a magic line, a TOML manifest and a little-endian f32
//! payload.
//!
//! ```text
//! HAFUSE-CKPT-1
//! manifest-bytes <n>
//! <n bytes of TOML>
//! <payload>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Generator, ParamSet};
use crate::tensor::{Shape, Tensor};
use crate::train::{NetworkConfig, TrainConfig};

pub const CHECKPOINT_VERSION: &str = "HAFUSE-CKPT-1";

/// Network configurations, training configuration and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub networks: NetworkConfig,
    pub train: TrainConfig,
    /// Epochs completed when the checkpoint was taken.
    pub epoch: usize,
    /// Parameter sets by network: `generator`, `d_s`, `d_d`.
    pub nets: BTreeMap<String, ParamSet<f32>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    net: String,
    name: String,
    shape: [usize; 4],
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    epoch: usize,
    payload_bytes: usize,
    sha256: String,
    networks: NetworkConfig,
    train: TrainConfig,
    tensor: Vec<TensorEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(networks: NetworkConfig, train: TrainConfig, epoch: usize) -> Self {
        Checkpoint {
            networks,
            train,
            epoch,
            nets: BTreeMap::new(),
        }
    }

    /// The generator and its validated parameters.
    pub fn generator(&self) -> Result<(Generator, &ParamSet<f32>)> {
        let g = Generator::new(self.networks.generator.clone())?;
        let p = self
            .nets
            .get("generator")
            .ok_or_else(|| Error::Checkpoint("no generator parameters".into()))?;
        p.validate(&g.param_specs())
            .map_err(|e| Error::Checkpoint(format!("generator parameters do not match the config: {e}")))?;
        Ok((g, p))
    }

    pub fn param_count(&self) -> usize {
        self.nets.values().map(ParamSet::len).sum()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut tensor = Vec::new();
        for (net, params) in &self.nets {
            for (name, t) in params.iter() {
                tensor.push(TensorEntry {
                    net: net.clone(),
                    name: name.clone(),
                    shape: t.shape().0,
                    offset: payload.len(),
                });
                for v in t.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let manifest = Manifest {
            format: CHECKPOINT_VERSION.into(),
            epoch: self.epoch,
            payload_bytes: payload.len(),
            sha256: hex(&Sha256::digest(&payload)),
            networks: self.networks.clone(),
            train: self.train.clone(),
            tensor,
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Checkpoint(format!("manifest encoding: {e}")))?;
        let mut out = format!("{CHECKPOINT_VERSION}\nmanifest-bytes {}\n", text.len()).into_bytes();
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let magic = lines.next().unwrap_or_default();
        if magic != CHECKPOINT_VERSION.as_bytes() {
            return Err(bad(format!(
                "unsupported format {:?}, expected {CHECKPOINT_VERSION}",
                String::from_utf8_lossy(&magic[..magic.len().min(32)])
            )));
        }
        let len_line = std::str::from_utf8(lines.next().unwrap_or_default()).unwrap_or("");
        let n: usize = len_line
            .strip_prefix("manifest-bytes ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("malformed manifest length line {len_line:?}")))?;
        let rest = lines.next().unwrap_or_default();
        if rest.len() < n {
            return Err(bad("truncated manifest".into()));
        }
        let text = std::str::from_utf8(&rest[..n]).map_err(|_| bad("manifest is not UTF-8".into()))?;
        let m: Manifest = toml::from_str(text).map_err(|e| bad(format!("manifest: {e}")))?;
        if m.format != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported format {:?}, expected {CHECKPOINT_VERSION}", m.format)));
        }
        let payload = &rest[n..];
        if payload.len() != m.payload_bytes {
            return Err(bad(format!(
                "payload holds {} bytes, manifest declares {}",
                payload.len(),
                m.payload_bytes
            )));
        }
        if hex(&Sha256::digest(payload)) != m.sha256 {
            return Err(bad("payload checksum mismatch".into()));
        }
        let mut nets: BTreeMap<String, ParamSet<f32>> = BTreeMap::new();
        let mut expected = 0;
        for e in m.tensor {
            if e.offset != expected {
                return Err(bad(format!("{}/{}: offset {} but expected {expected}", e.net, e.name, e.offset)));
            }
            let shape = Shape(e.shape);
            let end = e.offset + 4 * shape.numel();
            if end > payload.len() {
                return Err(bad(format!("{}/{}: extends past the payload", e.net, e.name)));
            }
            let data = payload[e.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            nets.entry(e.net).or_default().insert(e.name, Tensor::new(shape, data)?);
            expected = end;
        }
        if expected != payload.len() {
            return Err(bad(format!(
                "declared tensors cover {expected} of {} payload bytes",
                payload.len()
            )));
        }
        Ok(Checkpoint {
            networks: m.networks,
            train: m.train,
            epoch: m.epoch,
            nets,
        })
    }
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = c.encode().map_err(|e| e.in_file(path))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes).map_err(|e| e.in_file(path))
}
