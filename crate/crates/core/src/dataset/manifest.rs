use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{load_idx, Dataset};
use crate::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Paths (relative to the manifest) of one IDX image/label pair plus optional checksums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdxPair {
    pub images: PathBuf,
    #[serde(default)]
    pub images_sha256: Option<String>,
    pub labels: PathBuf,
    #[serde(default)]
    pub labels_sha256: Option<String>,
}

/// TOML description of a dataset on local disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub name: String,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub source: String,
    pub train: IdxPair,
    pub test: IdxPair,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported manifest schema_version {}", manifest.schema_version),
            ));
        }
        if manifest.class_names.is_empty() {
            return Err(Error::format(path, "class_names must not be empty"));
        }
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn load_train(&self) -> Result<Dataset> {
        self.load_pair(&self.train, "train")
    }

    pub fn load_test(&self) -> Result<Dataset> {
        self.load_pair(&self.test, "test")
    }

    fn load_pair(&self, pair: &IdxPair, part: &str) -> Result<Dataset> {
        let images = self.resolve(&pair.images);
        let labels = self.resolve(&pair.labels);
        verify_checksum(&images, pair.images_sha256.as_deref())?;
        verify_checksum(&labels, pair.labels_sha256.as_deref())?;
        let raw = load_idx(&images, &labels)?;
        if raw.class_count() > self.class_count() {
            return Err(Error::format(
                &labels,
                format!(
                    "label {} exceeds the {} declared classes",
                    raw.class_count() - 1,
                    self.class_count()
                ),
            ));
        }
        let examples = raw.examples().to_vec();
        Dataset::new(
            format!("{}/{part}", self.name),
            raw.shape(),
            self.class_count(),
            examples,
        )
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn verify_checksum(path: &Path, expected: Option<&str>) -> Result<()> {
    if let Some(expected) = expected {
        let actual = sha256_file(path)?;
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
                expected: expected.to_string(),
                actual,
            });
        }
    }
    Ok(())
}
