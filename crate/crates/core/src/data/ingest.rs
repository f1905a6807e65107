use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::pnm;

use super::{Dataset, LabeledImage};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestedFile {
    /// Path relative to the ingested root, `/`-separated.
    pub path: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestManifest {
    pub side: usize,
    pub classes: Vec<String>,
    pub files: Vec<IngestedFile>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        v.push(e.map_err(|e| Error::io(dir, e))?.path());
    }
    v.sort();
    Ok(v)
}

/// Loads a `root/<class>/<image>.{pgm,ppm}` tree. Classes are numbered in
/// lexicographic order of their directory names; every image is center
/// cropped to a square, resized to `side × side` and expanded to RGB.
pub fn ingest_folder(root: &Path, side: usize) -> Result<(Dataset, IngestManifest)> {
    if side == 0 {
        return Err(Error::arg("ingest side must be positive"));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::config(format!("no class subdirectories under {}", root.display())));
    }
    let mut classes = Vec::new();
    let mut files = Vec::new();
    let mut images = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let entries: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_file()).collect();
        if entries.is_empty() {
            return Err(Error::config(format!("class directory {} is empty", dir.display())));
        }
        for path in entries {
            let img = pnm::read(&path)?;
            let img = to_rgb(img).center_crop_resize(side);
            // snap to the 8-bit grid so the container round-trips exactly
            let img = Image::from_u8(3, side, side, &img.to_u8())?;
            files.push(IngestedFile { path: format!("{name}/{}", path.file_name().unwrap().to_string_lossy()), label });
            images.push(LabeledImage { image: img, label, part_box: None });
        }
        classes.push(name);
    }
    let ds = Dataset { classes: classes.len(), side, channels: 3, images };
    Ok((ds, IngestManifest { side, classes, files }))
}

fn to_rgb(img: Image) -> Image {
    if img.channels() == 3 {
        return img;
    }
    let plane = img.plane(0).to_vec();
    let mut data = Vec::with_capacity(plane.len() * 3);
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Image::new(3, img.height(), img.width(), data).expect("rgb dims")
}
