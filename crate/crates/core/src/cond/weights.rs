//! Weight directories: one `VSTN` file per parameter plus `manifest.json`
//! naming each parameter, its shape and its trainable flag.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CondError;
use crate::numeric::{load_tensor, save_tensor, Module};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub file: String,
}

pub fn save_weights<M: Module + ?Sized>(module: &M, dir: &Path) -> Result<Vec<WeightEntry>, CondError> {
    fs::create_dir_all(dir).map_err(crate::numeric::NumericError::from)?;
    let mut entries = Vec::new();
    for (name, p) in module.named_params() {
        let file = format!("{name}.vstn");
        save_tensor(&dir.join(&file), &p.value)?;
        entries.push(WeightEntry { name, shape: p.shape().to_vec(), trainable: p.trainable, file });
    }
    let json = serde_json::to_string_pretty(&entries).expect("manifest serializes");
    fs::write(dir.join(MANIFEST), json).map_err(crate::numeric::NumericError::from)?;
    Ok(entries)
}

/// Loads values and trainable flags into `module`, which must have exactly
/// the manifest's parameter names and shapes.
pub fn load_weights<M: Module + ?Sized>(module: &mut M, dir: &Path) -> Result<(), CondError> {
    let text = fs::read_to_string(dir.join(MANIFEST)).map_err(crate::numeric::NumericError::from)?;
    let entries: Vec<WeightEntry> =
        serde_json::from_str(&text).map_err(|e| CondError::Weights(format!("manifest: {e}")))?;
    let mut params = module.named_params_mut();
    if params.len() != entries.len() {
        return Err(CondError::Weights(format!(
            "manifest lists {} parameters, model has {}",
            entries.len(),
            params.len()
        )));
    }
    for ((name, p), e) in params.iter_mut().zip(&entries) {
        if *name != e.name || p.shape() != e.shape.as_slice() {
            return Err(CondError::Weights(format!(
                "manifest entry {} {:?} does not match parameter {name} {:?}",
                e.name,
                e.shape,
                p.shape()
            )));
        }
        let t = load_tensor(&dir.join(&e.file))?;
        if t.shape() != e.shape.as_slice() {
            return Err(CondError::Weights(format!("{} holds shape {:?}", e.file, t.shape())));
        }
        p.value = t;
        p.trainable = e.trainable;
    }
    Ok(())
}
