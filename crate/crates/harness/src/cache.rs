//! Content-addressed store for checkpoints and source datasets.

use std::path::{Path, PathBuf};

use dpse::dataset_io::{dataset_from_bytes, dataset_to_bytes};
use dpse::shadow::ShadowModel;
use dpse::trainers::SourceDataset;
use dpse::{Error, Result};
use serde::Serialize;

use crate::config::hash_json;

/// Environment variable overriding the cache directory.
pub const CACHE_ENV: &str = "DPSE_CACHE_DIR";

const SOURCE_MAGIC: &[u8; 8] = b"DPSESRC\0";
const SOURCE_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ArtifactCache {
    dir: PathBuf,
}

impl ArtifactCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// `$DPSE_CACHE_DIR` when set, otherwise `fallback`.
    pub fn from_env_or(fallback: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(d) if !d.is_empty() => Self::new(PathBuf::from(d)),
            _ => Self::new(fallback),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Cache key of any serializable description.
    pub fn key<T: Serialize>(what: &T) -> String {
        hash_json(what)
    }

    fn path(&self, key: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{key}.{ext}"))
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    fn read(&self, path: &Path) -> Result<Option<Vec<u8>>> {
        match std::fs::read(path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn load_model(&self, key: &str) -> Result<Option<ShadowModel>> {
        self.read(&self.path(key, "ckpt"))?
            .map(|b| ShadowModel::from_bytes(&b))
            .transpose()
    }

    pub fn store_model(&self, key: &str, model: &ShadowModel) -> Result<PathBuf> {
        let p = self.path(key, "ckpt");
        self.write_atomic(&p, &model.to_bytes())?;
        Ok(p)
    }

    pub fn load_source(&self, key: &str) -> Result<Option<SourceDataset>> {
        self.read(&self.path(key, "src"))?
            .map(|b| source_from_bytes(&b))
            .transpose()
    }

    pub fn store_source(&self, key: &str, source: &SourceDataset) -> Result<PathBuf> {
        let p = self.path(key, "src");
        self.write_atomic(&p, &source_to_bytes(source)?)?;
        Ok(p)
    }

    /// Cached model under `key`, or `build()` stored under it. With
    /// `no_train` a miss is a configuration error.
    pub fn model_or<F>(&self, key: &str, no_train: bool, build: F) -> Result<ShadowModel>
    where
        F: FnOnce() -> Result<ShadowModel>,
    {
        if let Some(m) = self.load_model(key)? {
            log::info!("checkpoint {key} loaded from cache");
            return Ok(m);
        }
        if no_train {
            return Err(Error::Config(format!(
                "checkpoint {key} is not in the cache at {} and training is disabled",
                self.dir.display()
            )));
        }
        let m = build()?;
        self.store_model(key, &m)?;
        Ok(m)
    }
}

/// Source dataset container: magic, version, task count, then each task's
/// dataset encoding with a length prefix.
pub fn source_to_bytes(source: &SourceDataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(SOURCE_MAGIC);
    out.extend_from_slice(&SOURCE_VERSION.to_le_bytes());
    out.extend_from_slice(&(source.tasks.len() as u64).to_le_bytes());
    for t in &source.tasks {
        let b = dataset_to_bytes(t)?;
        out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        out.extend_from_slice(&b);
    }
    Ok(out)
}

pub fn source_from_bytes(bytes: &[u8]) -> Result<SourceDataset> {
    let bad = |m: &str| Error::Integrity(format!("source dataset: {m}"));
    if bytes.len() < 20 || &bytes[..8] != SOURCE_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != SOURCE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let mut pos: usize = 20;
    let mut tasks = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len_end = pos.checked_add(8).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated"))?;
        let len = u64::from_le_bytes(bytes[pos..len_end].try_into().expect("8 bytes")) as usize;
        let end = len_end.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated"))?;
        tasks.push(dataset_from_bytes(&bytes[len_end..end])?);
        pos = end;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    SourceDataset::new(tasks).map_err(|e| bad(&e.to_string()))
}

/// SHA-256 of the source container bytes.
pub fn source_checksum(source: &SourceDataset) -> Result<String> {
    use sha2::{Digest, Sha256};
    Ok(hex::encode(Sha256::digest(source_to_bytes(source)?)))
}
