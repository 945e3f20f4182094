//! MVTec-style dataset trees.
//!
//! ```text
//! <root>/<class>/train/good/*.png
//! <root>/<class>/test/good/*.png
//! <root>/<class>/test/<defect>/<stem>.png
//! <root>/<class>/ground_truth/<defect>/<stem>_mask.png   (or <stem>.png)
//! ```
//!
//! Every listing is sorted lexicographically, so indexing the same tree
//! twice gives the same result.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{file_err, Error, Result};
use crate::imageio::{dimensions, is_image_file, IMAGE_EXTENSIONS};

pub const NORMAL_DIR: &str = "good";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    #[default]
    MvtecStyle,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestEntry {
    pub image: PathBuf,
    /// `None` for normal images (implicit all-zero mask).
    pub mask: Option<PathBuf>,
    pub defect: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassIndex {
    pub name: String,
    pub train: Vec<PathBuf>,
    pub test: Vec<TestEntry>,
}

impl ClassIndex {
    pub fn test_normal(&self) -> usize {
        self.test.iter().filter(|t| t.mask.is_none()).count()
    }

    pub fn test_anomalous(&self) -> usize {
        self.test.len() - self.test_normal()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub classes: Vec<ClassIndex>,
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut v = fs::read_dir(path)
        .map_err(|e| file_err(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| file_err(path, e)))
        .collect::<Result<Vec<_>>>()?;
    v.sort();
    Ok(v)
}

fn images_in(path: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_dir(path)?.into_iter().filter(|p| p.is_file() && is_image_file(p)).collect())
}

fn find_mask(gt_dir: &Path, stem: &str) -> Option<PathBuf> {
    for name in [format!("{stem}_mask"), stem.to_string()] {
        for ext in IMAGE_EXTENSIONS {
            let p = gt_dir.join(format!("{name}.{ext}"));
            if p.is_file() {
                return Some(p);
            }
        }
    }
    None
}

fn index_class(dir: &Path, name: &str) -> Result<ClassIndex> {
    let train_dir = dir.join("train").join(NORMAL_DIR);
    let train = if train_dir.is_dir() { images_in(&train_dir)? } else { Vec::new() };
    if train.is_empty() {
        return Err(Error::Dataset(format!("empty train split: {}", train_dir.display())));
    }
    let mut test = Vec::new();
    let test_dir = dir.join("test");
    if test_dir.is_dir() {
        for defect_dir in sorted_dir(&test_dir)?.into_iter().filter(|p| p.is_dir()) {
            let defect = defect_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let gt_dir = dir.join("ground_truth").join(&defect);
            for image in images_in(&defect_dir)? {
                let mask = if defect == NORMAL_DIR {
                    None
                } else {
                    let stem = image.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    let mask = find_mask(&gt_dir, &stem).ok_or_else(|| {
                        Error::Dataset(format!(
                            "missing ground-truth mask for {} (expected {})",
                            image.display(),
                            gt_dir.join(format!("{stem}_mask.png")).display()
                        ))
                    })?;
                    if dimensions(&mask)? != dimensions(&image)? {
                        return Err(Error::Dataset(format!(
                            "mask {} does not match the size of {}",
                            mask.display(),
                            image.display()
                        )));
                    }
                    Some(mask)
                };
                test.push(TestEntry {
                    image,
                    mask,
                    defect: defect.clone(),
                });
            }
        }
    }
    Ok(ClassIndex {
        name: name.to_string(),
        train,
        test,
    })
}

/// Indexes every class directory under `root` (one with a `train`
/// subdirectory), restricted to `only` when it is non-empty.
pub fn load_dataset(root: &Path, layout: Layout, only: &[String]) -> Result<DatasetIndex> {
    let Layout::MvtecStyle = layout;
    if !root.is_dir() {
        return Err(Error::Dataset(format!("dataset root {} does not exist", root.display())));
    }
    let mut classes = Vec::new();
    for dir in sorted_dir(root)? {
        if !dir.join("train").is_dir() {
            continue;
        }
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        if !only.is_empty() && !only.contains(&name) {
            continue;
        }
        classes.push(index_class(&dir, &name)?);
    }
    if let Some(missing) = only.iter().find(|c| !classes.iter().any(|k| &k.name == *c)) {
        return Err(Error::Dataset(format!("class `{missing}` not found under {}", root.display())));
    }
    if classes.is_empty() {
        return Err(Error::Dataset(format!("no class directories under {}", root.display())));
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        classes,
    })
}

impl DatasetIndex {
    /// SHA-256 over relative paths and file contents, in index order.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        let mut add = |p: &Path| -> Result<()> {
            let rel = p.strip_prefix(&self.root).unwrap_or(p);
            h.update(rel.to_string_lossy().as_bytes());
            h.update(fs::read(p).map_err(|e| file_err(p, e))?);
            Ok(())
        };
        for c in &self.classes {
            for p in &c.train {
                add(p)?;
            }
            for t in &c.test {
                add(&t.image)?;
                if let Some(m) = &t.mask {
                    add(m)?;
                }
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}
