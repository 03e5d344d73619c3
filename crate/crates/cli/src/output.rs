//! Staged output directories and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Sibling directory of an output directory that holds in-progress and failed runs.
pub const QUARANTINE_DIR: &str = ".sdegan-quarantine";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub build: String,
    pub output_dir: PathBuf,
    pub started: String,
    pub finished: Option<String>,
    /// SHA-256 of every file in the directory except manifests, keyed by
    /// relative path.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, seed: Option<u64>, output_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            seed,
            build: build_id(),
            output_dir: output_dir.to_path_buf(),
            started: now(),
            finished: None,
            outputs: BTreeMap::new(),
        }
    }

    /// Hash the contents of `dir`, stamp the end time and write the manifest.
    pub fn finish(&mut self, dir: &Path) -> CliResult<()> {
        self.outputs = hash_tree(dir)?;
        self.finished = Some(now());
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self).map_err(sdegan_core::Error::from)?;
        fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(serde_json::from_str(&text).map_err(sdegan_core::Error::from)?)
    }
}

pub fn build_id() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("SDEGAN_GIT_REV"))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// SHA-256 of every regular file below `dir`, skipping manifests.
pub fn hash_tree(dir: &Path) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| CliError::io(&d, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(&d, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
                let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
                let rel = path.strip_prefix(dir).unwrap_or(&path);
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.insert(key, hex::encode(Sha256::digest(&bytes)));
            }
        }
    }
    Ok(out)
}

/// An output directory under construction. Files go into a quarantine
/// directory beside the target; [`Staging::commit`] moves them into place.
/// A staging area that is dropped without committing stays in quarantine.
#[derive(Debug)]
pub struct Staging {
    target: PathBuf,
    tmp: PathBuf,
    force: bool,
    manifest: RunManifest,
    committed: bool,
}

impl Staging {
    pub fn begin(target: &Path, force: bool, command: &str, config_path: Option<&Path>, seed: Option<u64>) -> CliResult<Self> {
        check_target(target, force)?;
        let quarantine = quarantine_dir(target);
        fs::create_dir_all(&quarantine).map_err(|e| CliError::io(&quarantine, e))?;
        let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let tmp = quarantine.join(format!("{name}.{}.{stamp}", std::process::id()));
        fs::create_dir_all(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        Ok(Self {
            target: target.to_path_buf(),
            tmp,
            force,
            manifest: RunManifest::new(command, config_path, seed, target),
            committed: false,
        })
    }

    /// Directory to write outputs into.
    pub fn path(&self) -> &Path {
        &self.tmp
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    /// Write the manifest and move the staged directory to the target,
    /// replacing an existing one when forced.
    pub fn commit(mut self) -> CliResult<RunManifest> {
        self.manifest.finish(&self.tmp)?;
        let quarantine = quarantine_dir(&self.target);
        let mut displaced = None;
        if self.target.exists() {
            if !self.force {
                return Err(CliError::usage(format!("{} appeared while the command ran", self.target.display())));
            }
            let old = self.tmp.with_extension("replaced");
            fs::rename(&self.target, &old).map_err(|e| CliError::io(&self.target, e))?;
            displaced = Some(old);
        }
        fs::rename(&self.tmp, &self.target).map_err(|e| CliError::io(&self.target, e))?;
        self.committed = true;
        if let Some(old) = displaced {
            if old.is_dir() {
                fs::remove_dir_all(&old).map_err(|e| CliError::io(&old, e))?;
            } else {
                fs::remove_file(&old).map_err(|e| CliError::io(&old, e))?;
            }
        }
        // only removes the quarantine when nothing else is parked there
        let _ = fs::remove_dir(&quarantine);
        Ok(self.manifest.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            log::warn!("incomplete output left in {}", self.tmp.display());
        }
    }
}

fn quarantine_dir(target: &Path) -> PathBuf {
    let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parent.join(QUARANTINE_DIR)
}

/// Refuse an existing target unless forced.
pub fn check_target(target: &Path, force: bool) -> CliResult<()> {
    if target.exists() && !force {
        return Err(CliError::usage(format!(
            "output directory {} already exists (pass --force to replace it)",
            target.display()
        )));
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let json = serde_json::to_string_pretty(value).map_err(sdegan_core::Error::from)?;
    write_text(path, &(json + "\n"))
}
