//! Checkpoint files: JSON tensor dumps with shape headers.
//!
//! Every tensor serializes as `{rows, cols, data}`, so a checkpoint is
//! self-describing and round-trips bit-exactly (floats are printed with
//! shortest-exact formatting and parsed back to the same bits).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::Result;
use crate::model::{ClassifierParams, ProjectionParams};
use crate::optimizer::AdamState;

/// All trainable state of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub proj: ProjectionParams,
    pub clf: ClassifierParams,
    pub encoder: EncoderParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// 1-based epoch this checkpoint was written after.
    pub epoch: usize,
    pub model: ModelState,
    pub adam: AdamState,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, checkpoint)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}
