//! Image files, manifests and dataset directories.

mod manifest;
mod pnm;

pub use manifest::{
    file_digest, load_verified, read_manifest, write_manifest, DatasetManifest, ManifestImage,
    MANIFEST_VERSION,
};
pub use pnm::{decode, encode, pixel_to_value, read_image, value_to_pixel, write_image};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Directory layout of a protected dataset.
pub mod layout {
    use std::path::{Path, PathBuf};

    pub const MANIFEST_FILE: &str = "manifest.json";

    pub fn level_dir(root: &Path, level: usize) -> PathBuf {
        root.join(format!("level{level}"))
    }

    /// Slight-noise images `x_sn`.
    pub fn noisy_dir(root: &Path, level: usize) -> PathBuf {
        level_dir(root, level).join("sn")
    }

    /// Protected images `x_p`.
    pub fn protected_dir(root: &Path, level: usize) -> PathBuf {
        level_dir(root, level).join("protected")
    }
}

fn is_netpbm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("pgm" | "ppm")
    )
}

/// Sorted `.pgm`/`.ppm` file names directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_netpbm(&path) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_owned());
            }
        }
    }
    names.sort();
    Ok(names)
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub names: Vec<String>,
    pub images: Vec<ImageTensor>,
}

/// Loads every image in `dir` in file-name order; all must share one shape.
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let names = list_images(dir)?;
    load_named(dir, names)
}

pub fn load_named(dir: &Path, names: Vec<String>) -> Result<LoadedDataset> {
    if names.is_empty() {
        return Err(Error::Empty("image directory"));
    }
    let images = names
        .iter()
        .map(|n| {
            let p = dir.join(n);
            if !p.is_file() {
                return Err(Error::MissingFile(p));
            }
            read_image(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let shape = images[0].shape();
    if let Some((name, img)) = names.iter().zip(&images).find(|(_, i)| i.shape() != shape) {
        return Err(Error::ImageFormat {
            path: dir.join(name),
            reason: format!("shape {} differs from {}", img.shape(), shape),
        });
    }
    Ok(LoadedDataset { names, images })
}

pub fn write_dataset(dir: &Path, names: &[String], images: &[ImageTensor]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    names
        .iter()
        .zip(images)
        .map(|(n, img)| {
            let p = dir.join(n);
            write_image(img, &p)?;
            Ok(p)
        })
        .collect()
}
