//! On-disk format: `manifest.toml` plus one little-endian f32 blob per tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};
use crate::numgrad::Tensor;
use crate::params::ParamStore;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: String,
    pub seed: u64,
    /// What the classification head reads.
    pub head_input: String,
    pub move_encoding: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn write_blob(path: &Path, data: &[f32]) -> Result<(), ModelError> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_blob(path: &Path, expected_len: usize) -> Result<Vec<f32>, ModelError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != expected_len * 4 {
        return Err(ckpt_err(
            path,
            format!("blob holds {} bytes, expected {}", bytes.len(), expected_len * 4),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Writes `tensors` as blobs under `dir/sub` and returns their manifest entries.
pub(crate) fn write_tensors<F: Scalar>(
    dir: &Path,
    sub: &str,
    names: &[String],
    tensors: &[Tensor<F>],
) -> Result<Vec<TensorEntry>, ModelError> {
    let tdir = dir.join(sub);
    fs::create_dir_all(&tdir).map_err(io_err(&tdir))?;
    names
        .iter()
        .zip(tensors)
        .map(|(name, t)| {
            let file = format!("{sub}/{name}.f32");
            let data: Vec<f32> = t.data().iter().map(|v| v.as_f64() as f32).collect();
            write_blob(&dir.join(&file), &data)?;
            Ok(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                file,
            })
        })
        .collect()
}

pub(crate) fn read_tensors<F: Scalar>(dir: &Path, entries: &[TensorEntry]) -> Result<Vec<Tensor<F>>, ModelError> {
    entries
        .iter()
        .map(|e| {
            let n = e.shape.iter().product();
            let data = read_blob(&dir.join(&e.file), n)?;
            Tensor::new(e.shape.clone(), data.into_iter().map(|v| F::lit(v as f64)).collect())
                .map_err(|err| ckpt_err(&dir.join(&e.file), err.to_string()))
        })
        .collect()
}

pub(crate) fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), ModelError> {
    let text = toml::to_string(value).map_err(|e| ckpt_err(path, e.to_string()))?;
    fs::write(path, text).map_err(io_err(path))
}

pub(crate) fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ModelError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| ckpt_err(path, e.to_string()))
}

/// Model checkpoint directory.
pub struct Checkpoint {
    pub dir: PathBuf,
}

impl Checkpoint {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST)
    }

    pub fn save<F: Scalar>(
        &self,
        model: &Model<F>,
        seed: u64,
        meta: BTreeMap<String, String>,
    ) -> Result<CheckpointManifest, ModelError> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let tensors = write_tensors(&self.dir, "tensors", model.params.names(), model.params.tensors())?;
        let manifest = CheckpointManifest {
            format_version: FORMAT_VERSION,
            dtype: "f32".into(),
            seed,
            head_input: "rms_norm(z_L)".into(),
            move_encoding: format!(
                "interleaved sin/cos of raw pixel deltas, base {}, x then y",
                model.config.freq_base
            ),
            meta,
            config: model.config.clone(),
            tensors,
        };
        write_toml(&self.manifest_path(), &manifest)?;
        Ok(manifest)
    }

    pub fn read_manifest(&self) -> Result<CheckpointManifest, ModelError> {
        let m: CheckpointManifest = read_toml(&self.manifest_path())?;
        if m.format_version != FORMAT_VERSION {
            return Err(ckpt_err(
                &self.manifest_path(),
                format!("format version {} unsupported (expected {FORMAT_VERSION})", m.format_version),
            ));
        }
        if m.dtype != "f32" {
            return Err(ckpt_err(&self.manifest_path(), format!("dtype {} unsupported", m.dtype)));
        }
        Ok(m)
    }

    /// Loads and validates every tensor shape against the stored config.
    pub fn load<F: Scalar>(&self) -> Result<(Model<F>, CheckpointManifest), ModelError> {
        let manifest = self.read_manifest()?;
        let want = super::param_shapes(&manifest.config);
        if want.len() != manifest.tensors.len() {
            return Err(ckpt_err(
                &self.manifest_path(),
                format!("{} tensors listed, config needs {}", manifest.tensors.len(), want.len()),
            ));
        }
        for ((name, shape), e) in want.iter().zip(&manifest.tensors) {
            if name != &e.name || shape != &e.shape {
                return Err(ckpt_err(
                    &self.manifest_path(),
                    format!("tensor {}: shape {:?} does not match config ({name} {shape:?})", e.name, e.shape),
                ));
            }
        }
        let tensors = read_tensors::<F>(&self.dir, &manifest.tensors)?;
        let mut params = ParamStore::new();
        for (e, t) in manifest.tensors.iter().zip(tensors) {
            params.push(e.name.clone(), t);
        }
        let model = Model::from_params(manifest.config.clone(), params)?;
        Ok((model, manifest))
    }
}
