//! Checkpoints, run configurations and run manifests.
//!
//! Checkpoint layout (`.npxckpt`): the 8-byte magic `NPXCKPT\0`, a
//! little-endian `u32` format version, a little-endian `u64` header length,
//! a JSON header, then one raw little-endian `f32` blob per array in header
//! order. Writes go to a sibling temp file that is renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{json_error_offset, Error, Result};
use crate::nn::NamedArray;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NPXCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_EXT: &str = "npxckpt";
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Generator,
    Discriminator,
    Siamese,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Generator => "generator",
            Component::Discriminator => "discriminator",
            Component::Siamese => "siamese",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub component: Component,
    pub params: Vec<NamedArray>,
    pub optimizer: Vec<NamedArray>,
    pub optimizer_step: u64,
    /// Echo of the run configuration that produced the state.
    pub config: Value,
    pub seed: u64,
    pub epoch: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    component: Component,
    seed: u64,
    epoch: u64,
    optimizer_step: u64,
    config: Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    section: Section,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Section {
    Param,
    Optimizer,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let all = self
            .params
            .iter()
            .map(|a| (Section::Param, a))
            .chain(self.optimizer.iter().map(|a| (Section::Optimizer, a)));
        let mut arrays = Vec::new();
        let mut blob_len = 0;
        for (section, a) in all.clone() {
            let n: usize = a.shape.iter().product();
            if n != a.data.len() {
                return Err(Error::validation(format!(
                    "array `{}` has {} values for shape {:?}",
                    a.name,
                    a.data.len(),
                    a.shape
                )));
            }
            blob_len += n * 4;
            arrays.push(ArrayEntry {
                name: a.name.clone(),
                section,
                shape: a.shape.clone(),
            });
        }
        let header = serde_json::to_vec(&Header {
            component: self.component,
            seed: self.seed,
            epoch: self.epoch,
            optimizer_step: self.optimizer_step,
            config: self.config.clone(),
            arrays,
        })
        .map_err(|e| Error::validation(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + blob_len);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, a) in all {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Corruption("missing checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = PREAMBLE
            .checked_add(header_len)
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| Error::Corruption("header extends past end of file".into()))?;
        let text = std::str::from_utf8(&bytes[PREAMBLE..header_end])
            .map_err(|e| Error::Corruption(format!("header is not UTF-8: {e}")))?;
        let header: Header = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: PREAMBLE + json_error_offset(text, &e),
            message: e.to_string(),
        })?;
        let mut cursor = header_end;
        let mut params = Vec::new();
        let mut optimizer = Vec::new();
        for entry in header.arrays {
            let n: usize = entry.shape.iter().product();
            let end = cursor + n * 4;
            if end > bytes.len() {
                return Err(Error::Corruption(format!(
                    "blob `{}` truncated: needs {} bytes, {} remain",
                    entry.name,
                    n * 4,
                    bytes.len() - cursor
                )));
            }
            let data = bytes[cursor..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            cursor = end;
            let array = NamedArray {
                name: entry.name,
                shape: entry.shape,
                data,
            };
            match entry.section {
                Section::Param => params.push(array),
                Section::Optimizer => optimizer.push(array),
            }
        }
        if cursor != bytes.len() {
            return Err(Error::Corruption(format!(
                "{} trailing bytes after last blob",
                bytes.len() - cursor
            )));
        }
        Ok(Self {
            component: header.component,
            params,
            optimizer,
            optimizer_step: header.optimizer_step,
            config: header.config,
            seed: header.seed,
            epoch: header.epoch,
        })
    }

    pub fn expect_component(&self, expected: Component) -> Result<()> {
        if self.component != expected {
            return Err(Error::ComponentMismatch {
                expected: expected.as_str().into(),
                found: self.component.as_str().into(),
            });
        }
        Ok(())
    }
}

/// Writes `bytes` to `path` through a temp file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Parses a JSON object into `T`, filling missing keys from `T::default()`.
///
/// Unknown keys and keys whose value has the wrong type are all reported in
/// one validation error.
pub fn parse_config<T>(text: &str) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let given: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: json_error_offset(text, &e),
        message: e.to_string(),
    })?;
    let Value::Object(given) = given else {
        return Err(Error::validation("configuration must be a JSON object"));
    };
    let Value::Object(defaults) = serde_json::to_value(T::default())
        .map_err(|e| Error::validation(format!("default configuration: {e}")))?
    else {
        return Err(Error::validation("configuration type is not an object"));
    };
    let unknown: Vec<&str> = given
        .keys()
        .filter(|k| !defaults.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !unknown.is_empty() {
        return Err(Error::validation(format!(
            "unknown keys: {}",
            unknown.join(", ")
        )));
    }
    let mut bad_type = Vec::new();
    for (k, v) in &given {
        let mut probe = defaults.clone();
        probe.insert(k.clone(), v.clone());
        if let Err(e) = serde_json::from_value::<T>(Value::Object(probe)) {
            bad_type.push(format!("{k} ({e})"));
        }
    }
    if !bad_type.is_empty() {
        return Err(Error::validation(format!(
            "invalid values for keys: {}",
            bad_type.join("; ")
        )));
    }
    let mut merged = defaults;
    merged.extend(given);
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::validation(e.to_string()))
}

pub fn load_config<T>(path: &Path) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    parse_config(&text)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hash of the canonical (key-sorted, compact) JSON form of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let value = serde_json::to_value(config).map_err(|e| Error::validation(e.to_string()))?;
    let canonical = serde_json::to_vec(&value).map_err(|e| Error::validation(e.to_string()))?;
    Ok(sha256_hex(&canonical))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Per-file content hashes of every regular file under `root`, sorted by
/// relative path.
pub fn dataset_fingerprint(root: &Path) -> Result<Vec<FileHash>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else {
                out.push(path);
            }
        }
        Ok(())
    }
    if !root.is_dir() {
        return Err(Error::NotFound(root.to_path_buf()));
    }
    let mut files = Vec::new();
    walk(root, &mut files)?;
    let mut hashes = files
        .into_iter()
        .map(|p| {
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let rel = p.strip_prefix(root).unwrap_or(&p);
            Ok(FileHash {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: sha256_hex(&bytes),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    hashes.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(hashes)
}

pub fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub config_hash: String,
    pub config: Value,
    pub dataset_fingerprint: Vec<FileHash>,
    pub metrics: BTreeMap<String, f64>,
    pub checkpoints: Vec<String>,
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &str, config: &T, started_unix: u64) -> Result<Self> {
        let config_hash = config_hash(config)?;
        Ok(Self {
            run_id: format!("{}-{}", &config_hash[..12], started_unix),
            command: command.into(),
            started_unix,
            finished_unix: started_unix,
            config: serde_json::to_value(config).map_err(|e| Error::validation(e.to_string()))?,
            config_hash,
            dataset_fingerprint: Vec::new(),
            metrics: BTreeMap::new(),
            checkpoints: Vec::new(),
        })
    }

    /// Whether the stored hash still matches the stored config echo.
    pub fn is_consistent(&self) -> bool {
        config_hash(&self.config).is_ok_and(|h| h == self.config_hash)
    }
}

pub fn read_manifests(path: &Path) -> Result<Vec<RunManifest>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        offset: json_error_offset(&text, &e),
        message: e.to_string(),
    })
}

/// Appends `manifest` to the JSON array in `path`; earlier entries are kept
/// verbatim.
pub fn append_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut all = read_manifests(path)?;
    all.push(manifest.clone());
    let text = serde_json::to_string_pretty(&all).map_err(|e| Error::validation(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}
