//! Checkpoint files.

use std::fs;
use std::path::Path;

use ssb_core::network::Checkpoint;

use crate::error::{AppError, AppResult};

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> AppResult<()> {
    fs::write(path, ckpt.encode()).map_err(|e| AppError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> AppResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    Checkpoint::decode(&bytes).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}
