//! Projector checkpoints: a JSON manifest next to one MVGF file per tensor.
//!
//! `save_params("p.json", ..)` writes `p.json` plus `p.ffn1.weight.mvgf`,
//! `p.ffn1.bias.mvgf`, and so on, in the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ProjectorConfig, ProjectorParams};
use crate::error::{Error, Result};
use crate::format::{read_f32, write_features};
use crate::numerics::{ConvParams, LinearParams};
use crate::tensor::{DType, Tensor};

pub const MANIFEST_FORMAT: &str = "framescope-projector";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    /// One of `ffn1.weight`, `ffn1.bias`, `ffn2.weight`, `ffn2.bias`,
    /// `posenc.kernel`, `posenc.bias`.
    pub role: String,
    /// Path relative to the manifest.
    pub file: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectorManifest {
    pub format: String,
    pub version: u32,
    pub config: ProjectorConfig,
    pub tensors: Vec<TensorEntry>,
}

fn roles(params: &ProjectorParams<f32>) -> Vec<(&'static str, &Tensor<f32>)> {
    let mut out = vec![
        ("ffn1.weight", &params.ffn1.weight),
        ("ffn1.bias", &params.ffn1.bias),
        ("ffn2.weight", &params.ffn2.weight),
        ("ffn2.bias", &params.ffn2.bias),
    ];
    if let Some(p) = &params.posenc {
        out.push(("posenc.kernel", &p.kernel));
        out.push(("posenc.bias", &p.bias));
    }
    out
}

fn sibling(manifest: &Path, file: &str) -> PathBuf {
    manifest
        .parent()
        .map(|d| d.join(file))
        .unwrap_or_else(|| PathBuf::from(file))
}

pub fn save_params(
    manifest_path: impl AsRef<Path>,
    cfg: &ProjectorConfig,
    params: &ProjectorParams<f32>,
) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    params.check(cfg)?;
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::argument(format!("bad manifest path {}", manifest_path.display())))?;
    let mut tensors = Vec::new();
    for (role, t) in roles(params) {
        let file = format!("{stem}.{role}.mvgf");
        write_features(sibling(manifest_path, &file), t.clone())?;
        tensors.push(TensorEntry {
            role: role.to_string(),
            file,
            dtype: DType::F32,
            shape: t.shape().to_vec(),
        });
    }
    let manifest = ProjectorManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        tensors,
    };
    fs::write(manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_params(manifest_path: impl AsRef<Path>) -> Result<(ProjectorConfig, ProjectorParams<f32>)> {
    let manifest_path = manifest_path.as_ref();
    let manifest: ProjectorManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(Error::argument(format!(
            "unsupported manifest {} v{}",
            manifest.format, manifest.version
        )));
    }
    let load = |role: &str| -> Result<Option<Tensor<f32>>> {
        let Some(entry) = manifest.tensors.iter().find(|e| e.role == role) else {
            return Ok(None);
        };
        let t = read_f32(sibling(manifest_path, &entry.file))?;
        if t.shape() != entry.shape {
            return Err(Error::mismatch("load_params", &entry.shape, t.shape()));
        }
        Ok(Some(t))
    };
    let need = |role: &str| -> Result<Tensor<f32>> {
        load(role)?.ok_or_else(|| Error::argument(format!("manifest lacks tensor {role}")))
    };
    let posenc = match (load("posenc.kernel")?, load("posenc.bias")?) {
        (Some(k), Some(b)) => Some(ConvParams::new(k, b)?),
        (None, None) => None,
        _ => return Err(Error::argument("manifest has half of the positional encoder")),
    };
    let params = ProjectorParams {
        ffn1: LinearParams::new(need("ffn1.weight")?, need("ffn1.bias")?)?,
        ffn2: LinearParams::new(need("ffn2.weight")?, need("ffn2.bias")?)?,
        posenc,
    };
    manifest.config.validate()?;
    params.check(&manifest.config)?;
    Ok((manifest.config, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.json");
        let cfg = ProjectorConfig::et(6, 4, (4, 4), (2, 2));
        let mut params = ProjectorParams::<f32>::init(&cfg, 3).unwrap();
        params.posenc = Some(ConvParams::identity(4).unwrap());
        save_params(&path, &cfg, &params).unwrap();
        assert!(dir.path().join("img.posenc.kernel.mvgf").exists());
        let (cfg2, params2) = load_params(&path).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(params2, params);
    }

    #[test]
    fn mlp_checkpoint_has_no_posenc() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mlp.json");
        let cfg = ProjectorConfig::mlp(3, 2, (2, 2));
        let params = ProjectorParams::<f32>::init(&cfg, 1).unwrap();
        save_params(&path, &cfg, &params).unwrap();
        let manifest: ProjectorManifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(manifest.tensors.len(), 4);
        assert_eq!(load_params(&path).unwrap().1, params);
    }
}
