use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::patchio::{load_dataset, parse_cifar_batch, synthetic, Dataset, DatasetFormat, PatchIoError};
use crate::seed;

/// Overrides `data.root` when set.
pub const DATA_ROOT_ENV: &str = "MAMBAEYE_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Ten synthetic shape classes.
    Shapes,
    /// Two synthetic classes (horizontal / vertical bar).
    Bars,
    /// CIFAR-10 binary batches: `data_batch_*.bin` for training, `test_batch.bin` for validation.
    Cifar,
    /// `root/train/<class>/*.png` and `root/val/<class>/*.png`.
    Folder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    pub root: Option<PathBuf>,
    /// `0` keeps every available training sample.
    pub train_size: usize,
    pub val_size: usize,
    /// Image side of the synthetic sets.
    pub side: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Shapes,
            root: None,
            train_size: 600,
            val_size: 200,
            side: 32,
            seed: 0,
        }
    }
}

fn truncate(d: Dataset, n: usize) -> Dataset {
    if n == 0 || n >= d.len() {
        d
    } else {
        d.take(n)
    }
}

fn read_cifar_files(files: &[PathBuf]) -> Result<Dataset, PatchIoError> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let bytes = std::fs::read(f).map_err(|source| PatchIoError::Io {
            path: f.clone(),
            source,
        })?;
        let (i, l) = parse_cifar_batch(&bytes, f)?;
        images.extend(i);
        labels.extend(l);
    }
    Dataset::new(images, labels, 10)
}

fn cifar_train_files(root: &Path) -> Result<Vec<PathBuf>, PatchIoError> {
    let rd = std::fs::read_dir(root).map_err(|source| PatchIoError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("data_batch") && n.ends_with(".bin"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(PatchIoError::NoSamples(format!("no data_batch_*.bin under {}", root.display())));
    }
    Ok(files)
}

impl DataConfig {
    /// Root after applying the environment override.
    pub fn resolved_root(&self) -> Option<PathBuf> {
        std::env::var_os(DATA_ROOT_ENV)
            .map(PathBuf::from)
            .or_else(|| self.root.clone())
    }

    fn root(&self) -> Result<PathBuf, TrainError> {
        self.resolved_root().ok_or_else(|| {
            TrainError::Config(format!("data source {:?} needs `data.root` or {DATA_ROOT_ENV}", self.source))
        })
    }

    /// `(train, val)`; `val` may be `None` when `val_size` is 0.
    pub fn load(&self) -> Result<(Dataset, Option<Dataset>), TrainError> {
        let val_seed = seed::derive(self.seed, &[seed::stream::SPLIT, 1]);
        let (train, val) = match self.source {
            DataSource::Shapes | DataSource::Bars => {
                if self.train_size == 0 {
                    return Err(TrainError::Config("synthetic sets need train_size > 0".into()));
                }
                let make = if self.source == DataSource::Shapes {
                    synthetic::shapes
                } else {
                    synthetic::bars
                };
                let val = (self.val_size > 0).then(|| make(self.val_size, self.side, val_seed));
                (make(self.train_size, self.side, self.seed), val)
            }
            DataSource::Cifar => {
                let root = self.root()?;
                let train = read_cifar_files(&cifar_train_files(&root)?)?;
                let val = if self.val_size > 0 {
                    Some(read_cifar_files(&[root.join("test_batch.bin")])?)
                } else {
                    None
                };
                (train, val)
            }
            DataSource::Folder => {
                let root = self.root()?;
                let fmt = DatasetFormat::ImageFolder { num_classes: None };
                let train = load_dataset(&root.join("train"), &fmt)?;
                let val = if self.val_size > 0 {
                    Some(load_dataset(&root.join("val"), &fmt)?)
                } else {
                    None
                };
                (train, val)
            }
        };
        Ok((truncate(train, self.train_size), val.map(|v| truncate(v, self.val_size))))
    }
}
