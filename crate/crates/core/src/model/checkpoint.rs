//! Checkpoint layout: one SKDM file per parameter, one SKPM file per installed
//! mask, and `manifest.json` listing names, shapes and files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TinyModel, TinyModelConfig};
use crate::error::{Error, Result};
use crate::pruning::PruneMask;
use crate::tensor::{load_skdm, save_skdm};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: TinyModelConfig,
    pub head_prunable: bool,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(model: &TinyModel, dir: &Path) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let names = model.param_names();
    let mut entries = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let p = &model.params()[i];
        let file = format!("{name}.skdm");
        save_skdm(p, &dir.join(&file))?;
        let mask = match &model.masks()[i] {
            Some(m) => {
                let f = format!("{name}.skpm");
                m.save(&dir.join(&f))?;
                Some(f)
            }
            None => None,
        };
        entries.push(ParamEntry {
            name: name.clone(),
            rows: p.rows(),
            cols: p.cols(),
            file,
            mask,
        });
    }
    let head = model.params().len() - 2;
    let manifest = CheckpointManifest {
        config: *model.config(),
        head_prunable: model.prunable_params().contains(&head),
        params: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<TinyModel> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let mut model = TinyModel::zeros(manifest.config)?;
    let names = model.param_names();
    if manifest.params.len() != names.len() {
        return Err(Error::corrupt(format!(
            "manifest lists {} parameters, config implies {}",
            manifest.params.len(),
            names.len()
        )));
    }
    for (i, (entry, name)) in manifest.params.iter().zip(&names).enumerate() {
        if &entry.name != name {
            return Err(Error::corrupt(format!("parameter {i} is '{}', expected '{name}'", entry.name)));
        }
        let m = load_skdm(&dir.join(&entry.file))?;
        if !m.same_shape(&model.params()[i]) || m.rows() != entry.rows || m.cols() != entry.cols {
            return Err(Error::corrupt(format!(
                "{name}: stored {}x{}, expected {}x{}",
                m.rows(),
                m.cols(),
                model.params()[i].rows(),
                model.params()[i].cols()
            )));
        }
        model.params_mut()[i] = m;
        if let Some(f) = &entry.mask {
            let mask = PruneMask::load(&dir.join(f))?;
            if model.params()[i].data().iter().enumerate().any(|(k, &v)| {
                let (r, c) = (k / entry.cols, k % entry.cols);
                v != 0.0 && !mask.keep(r, c)
            }) {
                return Err(Error::corrupt(format!("{name}: nonzero weight under a pruned position")));
            }
            model.install_mask(i, mask)?;
        }
    }
    model.set_head_prunable(manifest.head_prunable);
    Ok(model)
}
