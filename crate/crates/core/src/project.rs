//! On-disk project: content-addressed artifact files under `objects/`, a
//! `manifest.json` naming the current version of each artifact, and an
//! append-only `events.jsonl` of researcher actions.
//!
//! Every write goes to a temporary file first and is renamed into place, so a
//! crash never leaves a half-written manifest or object.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MANIFEST: &str = "manifest.json";
pub const EVENTS: &str = "events.jsonl";
pub const OBJECTS: &str = "objects";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("project exists at {0}")]
    Exists(PathBuf),
    #[error("no project at {0}")]
    NotAProject(PathBuf),
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("hash mismatch for artifact {artifact}: manifest {expected}, file {actual}")]
    HashMismatch { artifact: String, expected: String, actual: String },
    #[error("artifact {artifact} is missing its file {file}")]
    MissingObject { artifact: String, file: String },
    #[error("artifact {0} not found")]
    UnknownArtifact(String),
    #[error("corrupt event log line {line}: {message}")]
    CorruptEvents { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// SHA-256 of the file contents.
    pub hash: String,
    /// Path relative to the project root.
    pub file: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub artifacts: BTreeMap<String, ArtifactRef>,
    /// Sequence number of the last event applied.
    pub last_event: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at_ms: u64,
    pub action: String,
    /// Artifact written by this event, with its new version.
    #[serde(default)]
    pub artifact: Option<(String, ArtifactRef)>,
    #[serde(default)]
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Project {
    root: PathBuf,
    manifest: Manifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Rebuilds the manifest's artifact table from an event sequence.
pub fn replay(events: &[Event]) -> Manifest {
    let mut m = Manifest { format: FORMAT_VERSION, artifacts: BTreeMap::new(), last_event: 0 };
    for e in events {
        if let Some((name, r)) = &e.artifact {
            m.artifacts.insert(name.clone(), r.clone());
        }
        m.last_event = e.seq;
    }
    m
}

/// Creates an empty project. Fails if `root` already holds one.
pub fn init_project(root: impl AsRef<Path>) -> Result<Project, ProjectError> {
    let root = root.as_ref().to_path_buf();
    if root.join(MANIFEST).exists() || root.join(OBJECTS).exists() || root.join(EVENTS).exists() {
        return Err(ProjectError::Exists(root));
    }
    fs::create_dir_all(root.join(OBJECTS))?;
    File::create(root.join(EVENTS))?;
    let project = Project { root, manifest: replay(&[]) };
    project.save_manifest()?;
    Ok(project)
}

/// Opens a project and verifies every artifact against its recorded hash.
pub fn load_project(root: impl AsRef<Path>) -> Result<Project, ProjectError> {
    let root = root.as_ref().to_path_buf();
    let path = root.join(MANIFEST);
    if !path.exists() {
        return Err(ProjectError::NotAProject(root));
    }
    let manifest: Manifest =
        serde_json::from_slice(&fs::read(&path)?).map_err(|e| ProjectError::CorruptManifest(e.to_string()))?;
    if manifest.format != FORMAT_VERSION {
        return Err(ProjectError::CorruptManifest(format!("unsupported format {}", manifest.format)));
    }
    let project = Project { root, manifest };
    for name in project.manifest.artifacts.keys() {
        project.read_verified(name)?;
    }
    Ok(project)
}

impl Project {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn artifact(&self, name: &str) -> Option<&ArtifactRef> {
        self.manifest.artifacts.get(name)
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.artifacts.contains_key(name)
    }

    fn save_manifest(&self) -> Result<(), ProjectError> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.root.join(MANIFEST), &bytes)?;
        Ok(())
    }

    fn append_event(&mut self, action: &str, artifact: Option<(String, ArtifactRef)>, detail: serde_json::Value) -> Result<Event, ProjectError> {
        let event = Event { seq: self.manifest.last_event + 1, at_ms: now_ms(), action: action.to_string(), artifact, detail };
        let mut line = serde_json::to_vec(&event)?;
        line.push(b'\n');
        let mut f = OpenOptions::new().append(true).create(true).open(self.root.join(EVENTS))?;
        f.write_all(&line)?;
        f.sync_all()?;
        self.manifest.last_event = event.seq;
        Ok(event)
    }

    /// Records an action that writes no artifact.
    pub fn log(&mut self, action: &str, detail: serde_json::Value) -> Result<Event, ProjectError> {
        let e = self.append_event(action, None, detail)?;
        self.save_manifest()?;
        Ok(e)
    }

    /// Stores `bytes` as the new version of artifact `name` and logs `action`.
    pub fn put_bytes(
        &mut self,
        name: &str,
        extension: &str,
        bytes: &[u8],
        action: &str,
        detail: serde_json::Value,
    ) -> Result<ArtifactRef, ProjectError> {
        let hash = sha256_hex(bytes);
        let file = format!("{OBJECTS}/{hash}.{extension}");
        let path = self.root.join(&file);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        let r = ArtifactRef { hash, file, bytes: bytes.len() as u64 };
        self.append_event(action, Some((name.to_string(), r.clone())), detail)?;
        self.manifest.artifacts.insert(name.to_string(), r.clone());
        self.save_manifest()?;
        Ok(r)
    }

    pub fn put_json<T: Serialize + ?Sized>(
        &mut self,
        name: &str,
        value: &T,
        action: &str,
        detail: serde_json::Value,
    ) -> Result<ArtifactRef, ProjectError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put_bytes(name, "json", &bytes, action, detail)
    }

    fn read_verified(&self, name: &str) -> Result<Vec<u8>, ProjectError> {
        let r = self.artifact(name).ok_or_else(|| ProjectError::UnknownArtifact(name.to_string()))?;
        let path = self.root.join(&r.file);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ProjectError::MissingObject { artifact: name.to_string(), file: r.file.clone() },
            _ => ProjectError::Io(e),
        })?;
        let actual = sha256_hex(&bytes);
        if actual != r.hash {
            return Err(ProjectError::HashMismatch { artifact: name.to_string(), expected: r.hash.clone(), actual });
        }
        Ok(bytes)
    }

    /// Current contents of artifact `name`, hash-checked.
    pub fn get_bytes(&self, name: &str) -> Result<Vec<u8>, ProjectError> {
        self.read_verified(name)
    }

    pub fn get_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, ProjectError> {
        Ok(serde_json::from_slice(&self.read_verified(name)?)?)
    }

    /// Like [`Project::get_json`] but `None` when the artifact does not exist.
    pub fn try_get_json<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>, ProjectError> {
        if self.has(name) {
            self.get_json(name).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn events(&self) -> Result<Vec<Event>, ProjectError> {
        let f = File::open(self.root.join(EVENTS))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line)
                    .map_err(|e| ProjectError::CorruptEvents { line: i + 1, message: e.to_string() })?,
            );
        }
        Ok(out)
    }

    /// Artifact names with their hashes, for status displays.
    pub fn status(&self) -> ProjectStatus {
        ProjectStatus {
            root: self.root.display().to_string(),
            artifacts: self.manifest.artifacts.iter().map(|(k, v)| (k.clone(), v.hash.clone())).collect(),
            events: self.manifest.last_event,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectStatus {
    pub root: String,
    pub artifacts: BTreeMap<String, String>,
    pub events: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn init_load_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = init_project(dir.path()).unwrap();
        assert_eq!(load_project(dir.path()).unwrap().manifest(), p.manifest());
        p.put_json("tree", &json!({"mains": 3}), "qdtm.train", json!({"seed": 1})).unwrap();
        p.put_json("tree", &json!({"mains": 4}), "qdtm.prune", json!(null)).unwrap();
        p.put_bytes("sheet", "csv", b"a,b\n", "coding.export", json!(null)).unwrap();
        p.log("annotate.serve", json!({"address": "x"})).unwrap();
        let loaded = load_project(dir.path()).unwrap();
        assert_eq!(loaded.manifest(), p.manifest());
        assert_eq!(loaded.get_json::<serde_json::Value>("tree").unwrap()["mains"], 4);
        let events = loaded.events().unwrap();
        assert_eq!(events.len(), 4);
        assert_eq!(&replay(&events), loaded.manifest());
    }

    #[test]
    fn init_refuses_existing_project() {
        let dir = tempfile::tempdir().unwrap();
        init_project(dir.path()).unwrap();
        let err = init_project(dir.path()).unwrap_err();
        assert!(err.to_string().starts_with("project exists"));
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = init_project(dir.path()).unwrap();
        let r = p.put_json("bundle", &json!([1, 2]), "qdtm.export", json!(null)).unwrap();
        fs::write(dir.path().join(&r.file), b"[1, 3]\n").unwrap();
        match load_project(dir.path()) {
            Err(ProjectError::HashMismatch { artifact, .. }) => assert_eq!(artifact, "bundle"),
            other => panic!("{other:?}"),
        }
        fs::remove_file(dir.path().join(&r.file)).unwrap();
        assert!(matches!(load_project(dir.path()), Err(ProjectError::MissingObject { .. })));
        fs::write(dir.path().join(MANIFEST), b"{").unwrap();
        assert!(matches!(load_project(dir.path()), Err(ProjectError::CorruptManifest(_))));
    }
}
