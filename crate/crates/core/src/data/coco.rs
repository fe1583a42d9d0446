use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Slack allowed when checking that a box lies inside its image.
const BOUNDS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, w, h]`.
    pub bbox: [f64; 4],
    #[serde(default)]
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

/// The subset of the COCO annotation schema this crate reads and writes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CocoFile {
    pub images: Vec<CocoImage>,
    #[serde(default)]
    pub annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexedObject {
    pub annotation_id: u64,
    pub bbox: BBox,
    /// Contiguous class index.
    pub class_id: usize,
    /// Crowd regions are skipped in training and treated as ignore regions
    /// in evaluation.
    pub crowd: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<IndexedObject>,
}

/// Images ordered by id, categories ordered by id; a category's position is
/// its contiguous class index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetIndex {
    pub images: Vec<ImageRecord>,
    pub categories: Vec<CocoCategory>,
}

impl DatasetIndex {
    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    pub fn num_objects(&self) -> usize {
        self.images.iter().map(|r| r.objects.len()).sum()
    }

    pub fn to_coco(&self) -> CocoFile {
        let images = self
            .images
            .iter()
            .map(|r| CocoImage {
                id: r.id,
                file_name: r.file_name.clone(),
                width: r.width,
                height: r.height,
            })
            .collect();
        let annotations = self
            .images
            .iter()
            .flat_map(|r| {
                r.objects.iter().map(move |o| CocoAnnotation {
                    id: o.annotation_id,
                    image_id: r.id,
                    category_id: self.categories[o.class_id].id,
                    bbox: [o.bbox.x_min, o.bbox.y_min, o.bbox.width(), o.bbox.height()],
                    area: o.bbox.area(),
                    iscrowd: o.crowd as u8,
                })
            })
            .collect();
        CocoFile {
            images,
            annotations,
            categories: self.categories.clone(),
        }
    }
}

/// Loads a COCO-format annotation file; image paths resolve against
/// `image_dir`.
pub fn load_coco_subset(annotation_path: &Path, image_dir: &Path) -> Result<DatasetIndex> {
    let text = std::fs::read_to_string(annotation_path).map_err(|e| Error::io(annotation_path, e))?;
    let file: CocoFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: annotation_path.to_path_buf(),
        source,
    })?;
    index_from_coco(file, image_dir)
}

pub fn index_from_coco(file: CocoFile, image_dir: &Path) -> Result<DatasetIndex> {
    let mut categories = file.categories;
    categories.sort_by_key(|c| c.id);
    let class_of: HashMap<u64, usize> = categories.iter().enumerate().map(|(i, c)| (c.id, i)).collect();

    let mut images: BTreeMap<u64, ImageRecord> = BTreeMap::new();
    for img in file.images {
        let record = ImageRecord {
            id: img.id,
            path: image_dir.join(&img.file_name),
            file_name: img.file_name,
            width: img.width,
            height: img.height,
            objects: Vec::new(),
        };
        if images.insert(img.id, record).is_some() {
            return Err(Error::DuplicateImageId(img.id));
        }
    }

    let mut annotations = file.annotations;
    annotations.sort_by_key(|a| a.id);
    for ann in annotations {
        let record = images.get_mut(&ann.image_id).ok_or(Error::UnknownImage {
            annotation_id: ann.id,
            image_id: ann.image_id,
        })?;
        let class_id = *class_of.get(&ann.category_id).ok_or(Error::UnknownCategory {
            annotation_id: ann.id,
            category_id: ann.category_id,
        })?;
        let [x, y, w, h] = ann.bbox;
        let bbox = BBox::from_xywh(x, y, w, h);
        let inside = bbox.is_valid()
            && x >= -BOUNDS_TOLERANCE
            && y >= -BOUNDS_TOLERANCE
            && bbox.x_max <= record.width as f64 + BOUNDS_TOLERANCE
            && bbox.y_max <= record.height as f64 + BOUNDS_TOLERANCE;
        if !inside {
            return Err(Error::BoxOutOfBounds {
                annotation_id: ann.id,
                image_id: ann.image_id,
                bbox: ann.bbox,
                width: record.width,
                height: record.height,
            });
        }
        record.objects.push(IndexedObject {
            annotation_id: ann.id,
            bbox: bbox.clip(record.width as f64, record.height as f64),
            class_id,
            crowd: ann.iscrowd != 0,
        });
    }

    Ok(DatasetIndex {
        images: images.into_values().collect(),
        categories,
    })
}

pub fn coco_to_json(file: &CocoFile) -> String {
    serde_json::to_string_pretty(file).expect("COCO structures always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CocoFile {
        CocoFile {
            images: vec![
                CocoImage {
                    id: 7,
                    file_name: "b.png".into(),
                    width: 64,
                    height: 48,
                },
                CocoImage {
                    id: 3,
                    file_name: "a.png".into(),
                    width: 100,
                    height: 100,
                },
            ],
            annotations: vec![
                CocoAnnotation {
                    id: 2,
                    image_id: 3,
                    category_id: 9,
                    bbox: [10.0, 20.0, 30.0, 40.0],
                    area: 1200.0,
                    iscrowd: 0,
                },
                CocoAnnotation {
                    id: 1,
                    image_id: 7,
                    category_id: 4,
                    bbox: [0.0, 0.0, 64.0, 48.0],
                    area: 0.0,
                    iscrowd: 1,
                },
            ],
            categories: vec![
                CocoCategory { id: 9, name: "nine".into() },
                CocoCategory { id: 4, name: "four".into() },
            ],
        }
    }

    #[test]
    fn converts_and_orders() {
        let idx = index_from_coco(sample(), Path::new("imgs")).unwrap();
        assert_eq!(idx.images.iter().map(|r| r.id).collect::<Vec<_>>(), vec![3, 7]);
        assert_eq!(idx.categories[0].id, 4);
        let obj = &idx.images[0].objects[0];
        assert_eq!(obj.bbox, BBox::new(10.0, 20.0, 40.0, 60.0));
        assert_eq!(obj.class_id, 1);
        assert!(idx.images[1].objects[0].crowd);
        assert_eq!(idx.images[0].path, Path::new("imgs/a.png"));
    }

    #[test]
    fn empty_annotations() {
        let mut f = sample();
        f.annotations.clear();
        let idx = index_from_coco(f, Path::new(".")).unwrap();
        assert_eq!(idx.images.len(), 2);
        assert_eq!(idx.num_objects(), 0);
    }

    #[test]
    fn distinct_errors_name_the_offender() {
        let mut f = sample();
        f.annotations[0].image_id = 99;
        assert!(matches!(
            index_from_coco(f, Path::new(".")),
            Err(Error::UnknownImage { annotation_id: 2, image_id: 99 })
        ));
        let mut f = sample();
        f.annotations[0].category_id = 5;
        assert!(matches!(
            index_from_coco(f, Path::new(".")),
            Err(Error::UnknownCategory { annotation_id: 2, category_id: 5 })
        ));
        let mut f = sample();
        f.annotations[0].bbox = [90.0, 20.0, 30.0, 40.0];
        assert!(matches!(
            index_from_coco(f, Path::new(".")),
            Err(Error::BoxOutOfBounds { annotation_id: 2, .. })
        ));
        let mut f = sample();
        f.images[1].id = 7;
        assert!(matches!(index_from_coco(f, Path::new(".")), Err(Error::DuplicateImageId(7))));
    }

    #[test]
    fn file_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_coco_subset(&dir.path().join("none.json"), dir.path()),
            Err(Error::Io { .. })
        ));
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{\"images\": [").unwrap();
        assert!(matches!(load_coco_subset(&bad, dir.path()), Err(Error::Json { .. })));
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let idx = index_from_coco(sample(), dir.path()).unwrap();
        let p = dir.path().join("ann.json");
        std::fs::write(&p, coco_to_json(&idx.to_coco())).unwrap();
        assert_eq!(load_coco_subset(&p, dir.path()).unwrap(), idx);
    }
}
