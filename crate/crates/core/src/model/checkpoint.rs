//! Checkpoint directory: `params.bin`, `params.json` and `model.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CaModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::ParamStore;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    config: ModelConfig,
    config_hash: String,
    parameter_count: usize,
}

pub fn save_checkpoint(dir: &Path, model: &CaModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.params().save(&dir.join("params.bin"), &dir.join("params.json"))?;
    let meta = ModelFile {
        config: model.config().clone(),
        config_hash: model.config().fingerprint(),
        parameter_count: model.config().parameter_count(),
    };
    let path = dir.join("model.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<CaModel> {
    let path = dir.join("model.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: ModelFile = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let hash = meta.config.fingerprint();
    if hash != meta.config_hash {
        return Err(Error::format(
            &path,
            format!("config hash {} does not match recorded {}", hash, meta.config_hash),
        ));
    }
    let params = ParamStore::load(&dir.join("params.bin"), &dir.join("params.json"))?;
    CaModel::from_parts(meta.config, params).map_err(|e| Error::format(dir, e.to_string()))
}
