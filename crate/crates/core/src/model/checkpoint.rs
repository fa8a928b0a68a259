use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ProposalModel};
use crate::error::{Error, Result};
use crate::nn::Real;

const FORMAT: &str = "crowdpoint-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Serialized model: architecture, an optional echo of the run
/// configuration, and every parameter tensor. Values round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelConfig,
    pub epoch: usize,
    #[serde(default)]
    pub config: Option<String>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &ProposalModel<T>, epoch: usize, config: Option<String>) -> Self {
        let params = model.params();
        let tensors = params
            .entries()
            .iter()
            .map(|e| Tensor {
                name: e.name.clone(),
                shape: e.shape,
                data: params.slice(e.id).iter().map(|v| v.f64()).collect(),
            })
            .collect();
        Self {
            format: FORMAT.to_string(),
            model: model.config().clone(),
            epoch,
            config,
            tensors,
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<ProposalModel<T>> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", self.format)));
        }
        let mut model = ProposalModel::<T>::new(self.model.clone(), 0)?;
        let mut seen = HashSet::new();
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::Checkpoint(format!("duplicate tensor `{}`", t.name)));
            }
            model.params_mut().assign(&t.name, t.shape, &t.data)?;
        }
        if let Some(missing) = model
            .params()
            .entries()
            .iter()
            .find(|e| !seen.contains(e.name.as_str()))
        {
            return Err(Error::Checkpoint(format!("missing tensor `{}`", missing.name)));
        }
        Ok(model)
    }
}

pub fn save_checkpoint<T: Real>(
    path: &Path,
    model: &ProposalModel<T>,
    epoch: usize,
    config: Option<String>,
) -> Result<()> {
    let ckpt = Checkpoint::from_model(model, epoch, config);
    let text = serde_json::to_string(&ckpt).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}
