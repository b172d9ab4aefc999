//! Run manifests: what a subcommand read, how it was configured and the sha256 of every file
//! it wrote. Consumers re-hash an input whenever a manifest lists it.

use std::fs;
use std::path::{Path, PathBuf};

use ellip_core::kv::KeyValues;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| CliError::io(path, e))?))
}

/// `<file>.manifest` next to a file output, or `manifest.txt` inside a directory output.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.txt")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    }
}

pub struct Manifest {
    kv: KeyValues,
}

impl Manifest {
    pub fn new(subcommand: &str, seed: Option<u64>) -> Self {
        let mut kv = KeyValues::new();
        kv.set("subcommand", subcommand);
        kv.set("tool_version", env!("CARGO_PKG_VERSION"));
        if let Some(seed) = seed {
            kv.set("seed", seed);
        }
        Manifest { kv }
    }

    pub fn config(&mut self, cfg: &KeyValues) {
        self.section("config", cfg);
    }

    pub fn section(&mut self, prefix: &str, entries: &KeyValues) {
        for (k, v) in entries.iter() {
            self.kv.set(&format!("{prefix}.{k}"), v);
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.kv.set(&format!("input.{name}"), path.display());
    }

    /// Records and hashes `path`, stored relative to the manifest's directory.
    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.kv.set(&format!("artifact.{name}"), file_hash(path)?);
        Ok(())
    }

    pub fn write(mut self, out: &Path) -> Result<PathBuf, CliError> {
        let path = manifest_path(out);
        self.kv.set("output", out.display());
        fs::write(&path, self.kv.to_text()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// Checks `path` against every manifest that lists it (`<path>.manifest` or the enclosing
/// directory's `manifest.txt`).
pub fn verify_input(path: &Path) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("missing input file {}", path.display())));
    }
    let Some(name) = path.file_name().map(|n| n.to_string_lossy().into_owned()) else { return Ok(()) };
    let mut beside = path.as_os_str().to_owned();
    beside.push(".manifest");
    let dir_manifest = path.parent().map(|p| p.join("manifest.txt"));
    for candidate in [Some(PathBuf::from(beside)), dir_manifest].into_iter().flatten() {
        let Ok(text) = fs::read_to_string(&candidate) else { continue };
        let kv = KeyValues::parse(&text)?;
        if let Some(expected) = kv.get_str(&format!("artifact.{name}")) {
            let actual = file_hash(path)?;
            if actual != expected {
                return Err(CliError::Data(format!(
                    "{} does not match the hash recorded in {}",
                    path.display(),
                    candidate.display()
                )));
            }
        }
    }
    Ok(())
}
