//! Image access by record, from disk or memory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::RgbaImage;

use crate::error::{Error, Result};
use crate::model::ImageRecord;

pub trait ImageSource: Sync {
    fn load(&self, record: &ImageRecord) -> Result<RgbaImage>;
}

/// Resolves `uri` relative to a root directory.
#[derive(Debug, Clone)]
pub struct DirImageSource {
    pub root: PathBuf,
}

impl DirImageSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirImageSource { root: root.into() }
    }
}

impl ImageSource for DirImageSource {
    fn load(&self, record: &ImageRecord) -> Result<RgbaImage> {
        read_rgba(&self.root.join(&record.uri))
    }
}

/// Images keyed by uri.
#[derive(Debug, Clone, Default)]
pub struct MemoryImageSource {
    pub images: HashMap<String, RgbaImage>,
}

impl MemoryImageSource {
    pub fn insert(&mut self, uri: impl Into<String>, image: RgbaImage) {
        self.images.insert(uri.into(), image);
    }
}

impl ImageSource for MemoryImageSource {
    fn load(&self, record: &ImageRecord) -> Result<RgbaImage> {
        self.images
            .get(&record.uri)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no image for uri {}", record.uri)))
    }
}

pub fn read_rgba(path: &Path) -> Result<RgbaImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgba8())
}

pub fn write_png(path: &Path, img: &RgbaImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Lists image files in `dir` (sorted by name) as records with ids
/// starting at 1; dimensions are read from file headers.
pub fn scan_image_dir(dir: &Path) -> Result<Vec<ImageRecord>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| {
            Path::new(n)
                .extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let path = dir.join(&name);
            let (width, height) = image::image_dimensions(&path).map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
            Ok(ImageRecord {
                id: i as u64 + 1,
                width,
                height,
                uri: name,
                geotag: None,
            })
        })
        .collect()
}
