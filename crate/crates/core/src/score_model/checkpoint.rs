//! Checkpoint files: 8-byte magic, little-endian `u64` header length, a JSON
//! header, then the parameters as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NetworkLayout, ScoreNetwork, TrainConfig};
use crate::error::{PdmError, Result};
use crate::schedule::NoiseSchedule;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PDMCKPT\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub layout: NetworkLayout,
    pub layout_hash: String,
    pub schedule: NoiseSchedule,
    pub schedule_hash: String,
    pub n_params: usize,
    pub train: Option<TrainConfig>,
    /// Generator seeds of the training instances.
    #[serde(default)]
    pub training_seeds: Vec<u64>,
    #[serde(default)]
    pub families: Vec<String>,
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub network: ScoreNetwork,
}

impl Checkpoint {
    pub fn new(network: ScoreNetwork, schedule: NoiseSchedule) -> Self {
        let layout = network.layout().clone();
        Self {
            header: CheckpointHeader {
                version: CHECKPOINT_VERSION,
                layout_hash: layout.hash(),
                n_params: layout.n_params(),
                layout,
                schedule_hash: schedule_hash(&schedule),
                schedule,
                train: None,
                training_seeds: Vec::new(),
                families: Vec::new(),
                loss_history: Vec::new(),
            },
            network,
        }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.header.schedule
    }
}

/// Hex SHA-256 over the schedule's variances and inner step count.
pub fn schedule_hash(s: &NoiseSchedule) -> String {
    let mut h = Sha256::new();
    h.update((s.inner_steps() as u64).to_le_bytes());
    for b in s.betas() {
        h.update(b.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn checkpoint_to_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    if ck.network.params().iter().any(|p| !p.is_finite()) {
        return Err(PdmError::contract("refusing to save non-finite parameters"));
    }
    let header = serde_json::to_vec(&ck.header).map_err(|e| PdmError::contract(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + header.len() + 8 * ck.network.params().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in ck.network.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(PdmError::parse("magic", 0, "not a checkpoint file"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| PdmError::parse("header", 8, format!("header length {len} exceeds file size")))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..body])
        .map_err(|e| PdmError::parse("header", 16 + e.column(), e.to_string()))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(PdmError::Version {
            found: header.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if header.layout.hash() != header.layout_hash {
        return Err(PdmError::parse("layout_hash", 16, "layout hash does not match the layout"));
    }
    let schedule = NoiseSchedule::from_betas(header.schedule.betas().to_vec(), header.schedule.inner_steps())
        .map_err(|e| PdmError::parse("schedule", 16, e.to_string()))?;
    if schedule_hash(&schedule) != header.schedule_hash {
        return Err(PdmError::parse("schedule_hash", 16, "schedule hash does not match the schedule"));
    }
    if header.n_params != header.layout.n_params() {
        return Err(PdmError::parse("n_params", 16, "parameter count does not match the layout"));
    }
    let blob = &bytes[body..];
    if blob.len() != 8 * header.n_params {
        return Err(PdmError::parse(
            "params",
            body,
            format!("expected {} parameter bytes, found {}", 8 * header.n_params, blob.len()),
        ));
    }
    let params = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let network = ScoreNetwork::from_params(header.layout.clone(), params)?;
    Ok(Checkpoint { header, network })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_to_bytes(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    checkpoint_from_bytes(&fs::read(path)?)
}
