//! Checkpoint file: magic, version, a JSON manifest and a raw f64 payload.
//!
//! ```text
//! offset 0   b"GFCKPT\0\0"
//! offset 8   u32 LE  format version
//! offset 12  u64 LE  manifest length in bytes
//! offset 20  manifest (UTF-8 JSON)
//! ...        payload: little-endian f64 arrays in manifest order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, LatentTable, Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::glyph::Alphabet;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GFCKPT\0\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub latents: LatentTable,
    pub network_adam: AdamState,
    pub latent_adam: AdamState,
    /// Number of completed epochs.
    pub epoch: usize,
    pub families: Vec<String>,
    pub alphabet: Alphabet,
    /// Effective run configuration, echoed verbatim.
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    network: NetworkConfig,
    alphabet: Alphabet,
    families: Vec<String>,
    latent_dim: usize,
    latent_frozen: bool,
    network_adam: AdamConfig,
    network_adam_step: u64,
    latent_adam: AdamConfig,
    latent_adam_step: u64,
    epoch: usize,
    payload: Vec<PayloadEntry>,
    config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PayloadEntry {
    name: String,
    len: usize,
}

impl Checkpoint {
    fn arrays(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("params", self.network.params()),
            ("latents", &self.latents.codes),
            ("network_adam_m", &self.network_adam.m),
            ("network_adam_v", &self.network_adam.v),
            ("latent_adam_m", &self.latent_adam.m),
            ("latent_adam_v", &self.latent_adam.v),
        ]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arrays = self.arrays();
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            network: self.network.config().clone(),
            alphabet: self.alphabet.clone(),
            families: self.families.clone(),
            latent_dim: self.latents.dim,
            latent_frozen: self.latents.frozen,
            network_adam: self.network_adam.config,
            network_adam_step: self.network_adam.step,
            latent_adam: self.latent_adam.config,
            latent_adam_step: self.latent_adam.step,
            epoch: self.epoch,
            payload: arrays
                .iter()
                .map(|(n, a)| PayloadEntry {
                    name: n.to_string(),
                    len: a.len(),
                })
                .collect(),
            config: self.config.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(20 + json.len() + arrays.iter().map(|a| a.1.len() * 8).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, a) in arrays {
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let json_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let json_end = 20usize
            .checked_add(json_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("checkpoint truncated inside manifest".into()))?;
        let m: Manifest = serde_json::from_slice(&bytes[20..json_end])?;

        let mut cursor = json_end;
        let mut arrays: Vec<Vec<f64>> = Vec::with_capacity(m.payload.len());
        for entry in &m.payload {
            let end = cursor + entry.len * 8;
            if end > bytes.len() {
                return Err(Error::Format(format!("checkpoint truncated in array '{}'", entry.name)));
            }
            arrays.push(
                bytes[cursor..end]
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            );
            cursor = end;
        }
        if cursor != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint payload".into()));
        }
        let names: Vec<&str> = m.payload.iter().map(|e| e.name.as_str()).collect();
        if names
            != [
                "params",
                "latents",
                "network_adam_m",
                "network_adam_v",
                "latent_adam_m",
                "latent_adam_v",
            ]
        {
            return Err(Error::Format(format!("unexpected payload layout {names:?}")));
        }
        let mut it = arrays.into_iter();
        let params = it.next().unwrap();
        let codes = it.next().unwrap();
        let (nm, nv, lm, lv) = (
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
        );

        if m.network.label_count != m.alphabet.len() {
            return Err(Error::Shape(format!(
                "network expects {} labels, alphabet has {}",
                m.network.label_count,
                m.alphabet.len()
            )));
        }
        if m.latent_dim != m.network.latent_dim || codes.len() != m.families.len() * m.latent_dim {
            return Err(Error::Shape("latent table does not match the network".into()));
        }
        if nm.len() != params.len() || nv.len() != params.len() {
            return Err(Error::Shape("network ADAM moments do not match parameters".into()));
        }
        if lm.len() != codes.len() || lv.len() != codes.len() {
            return Err(Error::Shape("latent ADAM moments do not match the table".into()));
        }
        let network = Network::from_params(m.network, params)?;
        Ok(Checkpoint {
            network,
            latents: LatentTable {
                dim: m.latent_dim,
                codes,
                frozen: m.latent_frozen,
            },
            network_adam: AdamState {
                config: m.network_adam,
                m: nm,
                v: nv,
                step: m.network_adam_step,
            },
            latent_adam: AdamState {
                config: m.latent_adam,
                m: lm,
                v: lv,
                step: m.latent_adam_step,
            },
            epoch: m.epoch,
            families: m.families,
            alphabet: m.alphabet,
            config: m.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Load and require the stored network to match `expected` exactly.
    pub fn load_expecting(path: &Path, expected: &NetworkConfig) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let got = ck.network.config();
        if got != expected {
            return Err(Error::Shape(format!(
                "checkpoint network {} labels / {}-D latent / {}x{} / {} channels does not match \
                 configured {} labels / {}-D latent / {}x{} / {} channels",
                got.label_count,
                got.latent_dim,
                got.hidden_layers,
                got.hidden_width,
                got.out_channels,
                expected.label_count,
                expected.latent_dim,
                expected.hidden_layers,
                expected.hidden_width,
                expected.out_channels
            )));
        }
        Ok(ck)
    }

    pub fn family_index(&self, family: &str) -> Result<usize> {
        self.families
            .iter()
            .position(|f| f == family)
            .ok_or_else(|| Error::Dataset(format!("unknown family '{family}'")))
    }
}
