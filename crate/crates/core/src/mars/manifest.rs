use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::ClassTaxonomy;
use crate::nn::checkpoint;

use super::config::MarsConfig;
use super::model::MarsModel;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Architecture record stored next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub frames: usize,
    pub embed_dim: usize,
    pub point_dim: usize,
    pub motion_dim: usize,
    pub kernels: Vec<usize>,
    pub taxonomy_hash: String,
    pub config: MarsConfig,
}

impl ModelManifest {
    pub fn new(config: &MarsConfig, tax: &ClassTaxonomy) -> Self {
        ModelManifest {
            format_version: MODEL_FORMAT_VERSION,
            frames: config.frames,
            embed_dim: config.embed_dim,
            point_dim: config.point_dim,
            motion_dim: config.motion_dim(),
            kernels: config.kernels.clone(),
            taxonomy_hash: tax.hash(),
            config: config.clone(),
        }
    }

    /// Rejects manifests whose summary fields disagree with the stored config or taxonomy.
    pub fn check(&self, tax: &ClassTaxonomy) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ManifestMismatch(format!(
                "model format version {} (this build reads {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let expected = ModelManifest::new(&self.config, tax);
        if self.taxonomy_hash != expected.taxonomy_hash {
            return Err(Error::ManifestMismatch(format!(
                "model was trained with taxonomy {}, dataset has {}",
                self.taxonomy_hash, expected.taxonomy_hash
            )));
        }
        if *self != expected {
            return Err(Error::ManifestMismatch(
                "manifest summary fields disagree with its architecture".into(),
            ));
        }
        Ok(())
    }
}

pub fn manifest_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("manifest.json")
}

pub fn save_model(model: &MarsModel, tax: &ClassTaxonomy, path: &Path) -> Result<()> {
    checkpoint::save(&model.params, path)?;
    let manifest = ModelManifest::new(&model.config, tax);
    let mpath = manifest_path(path);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
}

pub fn load_manifest(path: &Path) -> Result<ModelManifest> {
    let mpath = manifest_path(path);
    let bytes = std::fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(&mpath, e.to_string()))
}

/// Loads a checkpoint and its manifest, refusing any mismatch with `tax`.
pub fn load_model(path: &Path, tax: &ClassTaxonomy) -> Result<MarsModel> {
    let manifest = load_manifest(path)?;
    manifest.check(tax)?;
    let params = checkpoint::load(path)?;
    MarsModel::from_params(manifest.config, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::BevConfig;

    #[test]
    fn save_load_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let tax = ClassTaxonomy::default_synthetic();
        let cfg = MarsConfig::new(7, 3, BevConfig::centered(8, 8, 1.0).unwrap());
        let model = MarsModel::new(cfg, 4).unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&model, &tax, &path).unwrap();
        assert!(dir.path().join("model.manifest.json").exists());
        assert_eq!(load_model(&path, &tax).unwrap(), model);

        let other = ClassTaxonomy::from_text(&tax.to_text().replace("pole", "mast")).unwrap();
        assert!(matches!(load_model(&path, &other), Err(Error::ManifestMismatch(_))));

        let mut m = load_manifest(&path).unwrap();
        m.motion_dim = 99;
        std::fs::write(manifest_path(&path), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_model(&path, &tax), Err(Error::ManifestMismatch(_))));
    }
}
