use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dtppm::PermissionLevel;
use crate::error::{Error, Result};
use crate::schedule::ScheduleParams;

use super::layout;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestImage {
    pub file: String,
    pub seed: u64,
}

/// Everything needed to replay a protection run. Serialized as JSON with
/// keys in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub schedule: ScheduleParams,
    pub gamma: f64,
    pub trigger_sha256: String,
    pub levels: Vec<PermissionLevel>,
    pub adverse_steps: usize,
    pub reverse_factor: f64,
    pub master_seed: u64,
    /// Directory the clean images were read from, as given on the command line.
    pub source_dir: String,
    pub images: Vec<ManifestImage>,
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion(self.format_version));
        }
        if self.levels.is_empty() {
            return Err(Error::Manifest("no permission levels".into()));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.level != i + 1 {
                return Err(Error::Manifest(format!(
                    "levels must be numbered 1..n in order, found {} at position {}",
                    l.level,
                    i + 1
                )));
            }
        }
        if self.levels.windows(2).any(|w| w[0].noise_step >= w[1].noise_step) {
            return Err(Error::Manifest("noise steps must strictly increase".into()));
        }
        if self.trigger_sha256.len() != 64 || !self.trigger_sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::Manifest("trigger digest is not a SHA-256 hex string".into()));
        }
        if self.images.is_empty() {
            return Err(Error::Manifest("no images listed".into()));
        }
        for img in &self.images {
            let p = Path::new(&img.file);
            if p.components().count() != 1 || img.file.is_empty() {
                return Err(Error::Manifest(format!("image entry {:?} is not a bare file name", img.file)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Manifest(format!("invalid JSON: {e}")))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == MANIFEST_VERSION as u64 => {}
            Some(v) => return Err(Error::UnsupportedVersion(v.min(u32::MAX as u64) as u32)),
            None => return Err(Error::Manifest("missing format_version".into())),
        }
        let manifest: DatasetManifest =
            serde_json::from_value(value).map_err(|e| Error::Manifest(format!("schema violation: {e}")))?;
        manifest.validate()?;
        Ok(manifest)
    }

    /// Refuses a trigger file whose digest differs from the recorded one.
    pub fn verify_trigger(&self, trigger_path: impl AsRef<Path>) -> Result<()> {
        let actual = file_digest(trigger_path)?;
        if actual != self.trigger_sha256 {
            return Err(Error::DigestMismatch {
                expected: self.trigger_sha256.clone(),
                actual,
            });
        }
        Ok(())
    }

    /// Paths of every protected image under `root`, level by level.
    pub fn protected_files(&self, root: &Path) -> Vec<(PermissionLevel, PathBuf)> {
        self.levels
            .iter()
            .flat_map(|&l| {
                self.images
                    .iter()
                    .map(move |img| (l, layout::protected_dir(root, l.level).join(&img.file)))
            })
            .collect()
    }

    pub fn verify_files(&self, root: &Path) -> Result<()> {
        for (_, path) in self.protected_files(root) {
            if !path.is_file() {
                return Err(Error::MissingFile(path));
            }
        }
        Ok(())
    }
}

/// Atomic write: temp file in the same directory, then rename.
pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let text = manifest.to_json()?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::from_json(&text)
}

/// Reads the manifest stored in `root`, then checks the trigger digest and
/// that every protected file it references exists.
pub fn load_verified(root: &Path, trigger_path: &Path) -> Result<DatasetManifest> {
    let manifest = read_manifest(root.join(layout::MANIFEST_FILE))?;
    manifest.verify_trigger(trigger_path)?;
    manifest.verify_files(root)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(digest: String) -> DatasetManifest {
        DatasetManifest {
            format_version: MANIFEST_VERSION,
            schedule: ScheduleParams::default(),
            gamma: 0.6,
            trigger_sha256: digest,
            levels: vec![
                PermissionLevel { level: 1, noise_step: 1 },
                PermissionLevel { level: 2, noise_step: 2 },
            ],
            adverse_steps: 20,
            reverse_factor: 1.4,
            master_seed: u64::MAX - 3,
            source_dir: "clean".into(),
            images: vec![ManifestImage {
                file: "a.pgm".into(),
                seed: 12345678901234567890,
            }],
        }
    }

    #[test]
    fn round_trip_and_key_order() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample("ab".repeat(32));
        let path = dir.path().join(layout::MANIFEST_FILE);
        write_manifest(&m, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
        let text = std::fs::read_to_string(&path).unwrap();
        let order = ["format_version", "schedule", "gamma", "trigger_sha256", "levels", "adverse_steps", "reverse_factor", "master_seed", "source_dir", "images"];
        let positions: Vec<usize> = order.iter().map(|k| text.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(!dir.path().join("manifest.json.tmp").exists());
    }

    #[test]
    fn unsupported_version() {
        let mut m = sample("00".repeat(32));
        m.format_version = 7;
        let text = serde_json::to_string(&m).unwrap();
        assert!(matches!(DatasetManifest::from_json(&text), Err(Error::UnsupportedVersion(7))));
    }

    #[test]
    fn schema_violations() {
        let good = serde_json::to_value(sample("00".repeat(32))).unwrap();
        let mut extra = good.clone();
        extra["surprise"] = serde_json::json!(1);
        assert!(matches!(DatasetManifest::from_json(&extra.to_string()), Err(Error::Manifest(_))));
        let mut unordered = good.clone();
        unordered["levels"][1]["noise_step"] = serde_json::json!(1);
        assert!(matches!(DatasetManifest::from_json(&unordered.to_string()), Err(Error::Manifest(_))));
        let mut escape = good;
        escape["images"][0]["file"] = serde_json::json!("../a.pgm");
        assert!(matches!(DatasetManifest::from_json(&escape.to_string()), Err(Error::Manifest(_))));
    }

    #[test]
    fn trigger_digest_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let trigger = dir.path().join("t.pgm");
        std::fs::write(&trigger, b"P5\n1 1\n255\n\x10").unwrap();
        let m = sample(file_digest(&trigger).unwrap());
        m.verify_trigger(&trigger).unwrap();

        assert!(matches!(m.verify_files(dir.path()), Err(Error::MissingFile(_))));
        for (_, p) in m.protected_files(dir.path()) {
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, b"x").unwrap();
        }
        m.verify_files(dir.path()).unwrap();

        std::fs::write(&trigger, b"P5\n1 1\n255\n\x11").unwrap();
        assert!(matches!(m.verify_trigger(&trigger), Err(Error::DigestMismatch { .. })));
    }
}
