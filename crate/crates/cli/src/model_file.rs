//! Versioned JSON model files.

use std::path::Path;

use anyhow::{Context, Result};
use latent_ensemble::{CIParams, LatentModel};
use serde::{Deserialize, Serialize};

use crate::io::{input_error, open_for_read};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelBody {
    Latent { model: LatentModel },
    Ci { params: CIParams },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    #[serde(flatten)]
    pub body: ModelBody,
}

impl ModelFile {
    pub fn latent(model: LatentModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            body: ModelBody::Latent { model },
        }
    }

    pub fn ci(params: CIParams) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            body: ModelBody::Ci { params },
        }
    }

    pub fn m(&self) -> usize {
        match &self.body {
            ModelBody::Latent { model } => model.m(),
            ModelBody::Ci { params } => params.m(),
        }
    }

    /// The model as a latent model (a CI model becomes all singletons).
    pub fn as_latent(&self) -> Result<LatentModel> {
        match &self.body {
            ModelBody::Latent { model } => Ok(model.clone()),
            ModelBody::Ci { params } => Ok(LatentModel::from_ci(params)?),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = open_for_read(path)?;
        let parsed: ModelFile = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| input_error(format!("{}: not a valid model file: {e}", path.display())))?;
        if parsed.format_version != FORMAT_VERSION {
            return Err(input_error(format!(
                "{}: unsupported model format version {} (expected {FORMAT_VERSION})",
                path.display(),
                parsed.format_version
            )));
        }
        Ok(parsed)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).context("serialising model")?;
        s.push('\n');
        Ok(s)
    }
}
