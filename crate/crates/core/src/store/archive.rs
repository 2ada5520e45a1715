//! On-disk archive: a directory with `manifest.json` plus one raw
//! little-endian `f64` file per array (row-major, complex values stored as
//! interleaved re/im pairs).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::observables::WaveLattice;

pub const FORMAT: &str = "ergoquot-archive";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub file: String,
    /// Logical shape; a complex array of shape `[r, c]` occupies `2rc` doubles.
    pub shape: Vec<usize>,
    pub complex: bool,
    pub sha256: String,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl ArrayEntry {
    pub fn n_doubles(&self) -> usize {
        self.shape.iter().product::<usize>() * if self.complex { 2 } else { 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub fingerprint: String,
    pub completed_at: u64,
    pub arrays: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeInfo {
    pub dim: usize,
    pub bounds: Vec<u32>,
    pub half: bool,
    pub len: usize,
    pub hash: String,
}

impl LatticeInfo {
    pub fn of(lattice: &WaveLattice) -> Self {
        LatticeInfo {
            dim: lattice.dim(),
            bounds: lattice.bounds().to_vec(),
            half: lattice.is_half(),
            len: lattice.len(),
            hash: lattice.hash(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub created_at: u64,
    pub updated_at: u64,
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    #[serde(default)]
    pub lattice: Option<LatticeInfo>,
    #[serde(default)]
    pub stages: BTreeMap<String, StageRecord>,
    #[serde(default)]
    pub arrays: BTreeMap<String, ArrayEntry>,
    #[serde(default)]
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub notes: BTreeMap<String, serde_json::Value>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub struct Archive {
    root: PathBuf,
    manifest: Manifest,
}

impl Archive {
    /// Opens an existing archive or starts an empty one at `root`.
    pub fn open_or_create(root: &Path) -> Result<Self> {
        if root.join(MANIFEST_FILE).exists() {
            return Self::open(root);
        }
        fs::create_dir_all(root)?;
        let t = now();
        let mut archive = Archive {
            root: root.to_path_buf(),
            manifest: Manifest {
                format: FORMAT.into(),
                version: FORMAT_VERSION,
                created_at: t,
                updated_at: t,
                config: None,
                lattice: None,
                stages: BTreeMap::new(),
                arrays: BTreeMap::new(),
                scalars: BTreeMap::new(),
                notes: BTreeMap::new(),
            },
        };
        archive.save()?;
        Ok(archive)
    }

    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("manifest: {e}")))?;
        if manifest.format != FORMAT || manifest.version != FORMAT_VERSION {
            return Err(Error::Corrupt(format!(
                "unsupported archive format {} v{}",
                manifest.format, manifest.version
            )));
        }
        Ok(Archive {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn manifest_mut(&mut self) -> &mut Manifest {
        &mut self.manifest
    }

    pub fn save(&mut self) -> Result<()> {
        self.manifest.updated_at = now();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        write_atomic(&self.root.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn file_path(&self, entry: &ArrayEntry) -> PathBuf {
        self.root.join(&entry.file)
    }

    /// Present in the manifest and on disk.
    pub fn has(&self, name: &str) -> bool {
        self.manifest
            .arrays
            .get(name)
            .is_some_and(|e| self.file_path(e).exists())
    }

    pub fn entry(&self, name: &str) -> Result<&ArrayEntry> {
        self.manifest
            .arrays
            .get(name)
            .ok_or_else(|| Error::MissingStage(format!("array '{name}' not in archive")))
    }

    pub fn write_array(
        &mut self,
        name: &str,
        shape: &[usize],
        data: &[f64],
        meta: BTreeMap<String, serde_json::Value>,
    ) -> Result<()> {
        self.write_doubles(name, shape, false, data, meta)
    }

    pub fn write_complex(
        &mut self,
        name: &str,
        shape: &[usize],
        data: &[Complex64],
        meta: BTreeMap<String, serde_json::Value>,
    ) -> Result<()> {
        let flat: Vec<f64> = data.iter().flat_map(|z| [z.re, z.im]).collect();
        self.write_doubles(name, shape, true, &flat, meta)
    }

    fn write_doubles(
        &mut self,
        name: &str,
        shape: &[usize],
        complex: bool,
        data: &[f64],
        meta: BTreeMap<String, serde_json::Value>,
    ) -> Result<()> {
        let mut entry = ArrayEntry {
            file: format!("{}.bin", name.replace('/', "_")),
            shape: shape.to_vec(),
            complex,
            sha256: String::new(),
            meta,
        };
        if entry.n_doubles() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: entry.n_doubles(),
                got: data.len(),
            });
        }
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        entry.sha256 = sha256_hex(&bytes);
        write_atomic(&self.file_path(&entry), &bytes)?;
        self.manifest.arrays.insert(name.to_string(), entry);
        Ok(())
    }

    /// Raw bytes of an array without any validation.
    pub fn read_bytes(&self, name: &str) -> Result<Vec<u8>> {
        let entry = self.entry(name)?;
        fs::read(self.file_path(entry)).map_err(|e| Error::Corrupt(format!("array '{name}': {e}")))
    }

    /// Reads an array, checking its byte length and hash against the manifest.
    pub fn read_array(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let entry = self.entry(name)?;
        let bytes = self.read_bytes(name)?;
        if bytes.len() != 8 * entry.n_doubles() {
            return Err(Error::Corrupt(format!(
                "array '{name}': shape mismatch, {} bytes on disk for declared shape {:?}{}",
                bytes.len(),
                entry.shape,
                if entry.complex { " (complex)" } else { "" }
            )));
        }
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Corrupt(format!("array '{name}': hash mismatch")));
        }
        Ok((entry.shape.clone(), decode(&bytes)))
    }

    pub fn read_complex(&self, name: &str) -> Result<(Vec<usize>, Vec<Complex64>)> {
        if !self.entry(name)?.complex {
            return Err(Error::Corrupt(format!("array '{name}' is not complex")));
        }
        let (shape, flat) = self.read_array(name)?;
        Ok((
            shape,
            flat.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect(),
        ))
    }

    pub fn remove_array(&mut self, name: &str) -> Result<()> {
        if let Some(entry) = self.manifest.arrays.remove(name) {
            let path = self.file_path(&entry);
            if path.exists() {
                fs::remove_file(path)?;
            }
        }
        Ok(())
    }

    pub fn set_scalar(&mut self, name: &str, value: f64) {
        self.manifest.scalars.insert(name.to_string(), value);
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.manifest
            .scalars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingStage(format!("scalar '{name}' not in archive")))
    }
}

pub fn decode(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}
