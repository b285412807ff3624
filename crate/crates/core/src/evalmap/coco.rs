//! COCO-format annotation and detection files.
//!
//! Ground truth uses the standard `images`/`annotations`/`categories`
//! structure with `bbox = [x, y, w, h]`; detections are a flat array of
//! `{image_id, category_id, bbox, score}`. Degenerate boxes and ids that
//! do not appear in the ground-truth header are rejected at ingestion
//! with record context.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

use super::{DetectionRecord, GroundTruthRecord};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    width: f64,
    height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file_name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    /// `[x, y, w, h]` in pixels.
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iscrowd: Option<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoGroundTruthFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoDetection {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
}

/// Image geometry and category ids declared by a ground-truth file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CocoMeta {
    /// image id -> (width, height)
    pub images: BTreeMap<u64, (f64, f64)>,
    /// category id -> name
    pub categories: BTreeMap<u64, String>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serialization cannot fail");
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn bbox_from_parts(context: &str, parts: [f64; 4]) -> Result<BBox> {
    BBox::new(parts[0], parts[1], parts[2], parts[3])
        .map_err(|e| Error::InvalidRecord(format!("{context}: {e}")))
}

/// Reads a COCO ground-truth file, validating every annotation against
/// the declared images and categories.
pub fn read_ground_truth(path: &Path) -> Result<(Vec<GroundTruthRecord>, CocoMeta)> {
    let file: CocoGroundTruthFile = read_json(path)?;
    let mut meta = CocoMeta::default();
    for img in &file.images {
        meta.images.insert(img.id, (img.width, img.height));
    }
    for cat in &file.categories {
        meta.categories.insert(cat.id, cat.name.clone());
    }

    let mut records = Vec::with_capacity(file.annotations.len());
    for ann in &file.annotations {
        let context = format!("annotation id {}", ann.id);
        if !meta.images.contains_key(&ann.image_id) {
            return Err(Error::InvalidRecord(format!(
                "{context}: unknown image id {}",
                ann.image_id
            )));
        }
        if !meta.categories.contains_key(&ann.category_id) {
            return Err(Error::InvalidRecord(format!(
                "{context}: unknown category id {}",
                ann.category_id
            )));
        }
        records.push(GroundTruthRecord {
            image_id: ann.image_id,
            category_id: ann.category_id,
            bbox: bbox_from_parts(&context, ann.bbox)?,
        });
    }
    Ok((records, meta))
}

/// Reads a detection file and validates it against the ground-truth
/// metadata.
pub fn read_detections(path: &Path, meta: &CocoMeta) -> Result<Vec<DetectionRecord>> {
    let file: Vec<CocoDetection> = read_json(path)?;
    let mut records = Vec::with_capacity(file.len());
    for (index, det) in file.iter().enumerate() {
        let context = format!("detection #{index}");
        if !meta.images.contains_key(&det.image_id) {
            return Err(Error::InvalidRecord(format!(
                "{context}: unknown image id {}",
                det.image_id
            )));
        }
        if !meta.categories.contains_key(&det.category_id) {
            return Err(Error::InvalidRecord(format!(
                "{context}: unknown category id {}",
                det.category_id
            )));
        }
        if !(0.0..=1.0).contains(&det.score) {
            return Err(Error::InvalidRecord(format!(
                "{context}: score {} outside [0, 1]",
                det.score
            )));
        }
        records.push(DetectionRecord {
            image_id: det.image_id,
            category_id: det.category_id,
            bbox: bbox_from_parts(&context, det.bbox)?,
            score: det.score,
        });
    }
    Ok(records)
}

/// Writes ground truth in COCO format.
pub fn write_ground_truth(path: &Path, gts: &[GroundTruthRecord], meta: &CocoMeta) -> Result<()> {
    let images: Vec<CocoImage> = meta
        .images
        .iter()
        .map(|(&id, &(width, height))| CocoImage {
            id,
            width,
            height,
            file_name: None,
        })
        .collect();
    let categories: Vec<CocoCategory> = meta
        .categories
        .iter()
        .map(|(&id, name)| CocoCategory {
            id,
            name: name.clone(),
        })
        .collect();
    let annotations: Vec<CocoAnnotation> = gts
        .iter()
        .enumerate()
        .map(|(i, g)| CocoAnnotation {
            id: i as u64 + 1,
            image_id: g.image_id,
            category_id: g.category_id,
            bbox: [g.bbox.x, g.bbox.y, g.bbox.w, g.bbox.h],
            area: Some(g.bbox.area()),
            iscrowd: Some(0),
        })
        .collect();
    write_json(
        path,
        &CocoGroundTruthFile {
            images,
            annotations,
            categories,
        },
    )
}

/// Writes detections as a flat COCO result array.
pub fn write_detections(path: &Path, dets: &[DetectionRecord]) -> Result<()> {
    let rows: Vec<CocoDetection> = dets
        .iter()
        .map(|d| CocoDetection {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
            score: d.score,
        })
        .collect();
    write_json(path, &rows)
}

/// Score-1 detections mirroring the ground truth; the perfect detector.
pub fn detections_from_ground_truth(gts: &[GroundTruthRecord]) -> Vec<DetectionRecord> {
    gts.iter()
        .map(|g| DetectionRecord {
            image_id: g.image_id,
            category_id: g.category_id,
            bbox: g.bbox,
            score: 1.0,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_dir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "sodet-coco-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn sample_meta() -> CocoMeta {
        let mut meta = CocoMeta::default();
        meta.images.insert(1, (64.0, 64.0));
        meta.images.insert(2, (64.0, 64.0));
        meta.categories.insert(1, "cat_1".to_string());
        meta
    }

    #[test]
    fn ground_truth_roundtrip() {
        let dir = temp_dir();
        let path = dir.join("gt_roundtrip.json");
        let gts = vec![
            GroundTruthRecord {
                image_id: 1,
                category_id: 1,
                bbox: BBox::new(3.0, 4.0, 10.0, 12.0).unwrap(),
            },
            GroundTruthRecord {
                image_id: 2,
                category_id: 1,
                bbox: BBox::new(8.0, 1.0, 5.0, 5.0).unwrap(),
            },
        ];
        write_ground_truth(&path, &gts, &sample_meta()).unwrap();
        let (read, meta) = read_ground_truth(&path).unwrap();
        assert_eq!(read, gts);
        assert_eq!(meta, sample_meta());
    }

    #[test]
    fn malformed_json_reports_parse_context() {
        let dir = temp_dir();
        let path = dir.join("broken.json");
        fs::write(&path, "{ \"images\": [ oops").unwrap();
        let err = read_ground_truth(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("broken.json"), "message was {msg}");
    }

    #[test]
    fn unknown_category_is_rejected_with_context() {
        let dir = temp_dir();
        let gt_path = dir.join("gt_unknown.json");
        let gts = vec![GroundTruthRecord {
            image_id: 1,
            category_id: 1,
            bbox: BBox::new(3.0, 4.0, 10.0, 12.0).unwrap(),
        }];
        write_ground_truth(&gt_path, &gts, &sample_meta()).unwrap();
        let (_, meta) = read_ground_truth(&gt_path).unwrap();

        let det_path = dir.join("det_unknown.json");
        fs::write(
            &det_path,
            r#"[{"image_id": 1, "category_id": 9, "bbox": [0, 0, 2, 2], "score": 0.5}]"#,
        )
        .unwrap();
        let err = read_detections(&det_path, &meta).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("detection #0") && msg.contains("category id 9"), "{msg}");
    }

    #[test]
    fn degenerate_boxes_are_rejected_at_ingestion() {
        let dir = temp_dir();
        let path = dir.join("gt_degenerate.json");
        fs::write(
            &path,
            r#"{
              "images": [{"id": 1, "width": 64, "height": 64}],
              "annotations": [{"id": 7, "image_id": 1, "category_id": 1, "bbox": [0, 0, 0, 5]}],
              "categories": [{"id": 1, "name": "thing"}]
            }"#,
        )
        .unwrap();
        let err = read_ground_truth(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("annotation id 7"), "{msg}");
    }

    #[test]
    fn out_of_range_score_is_rejected() {
        let dir = temp_dir();
        let det_path = dir.join("det_badscore.json");
        fs::write(
            &det_path,
            r#"[{"image_id": 1, "category_id": 1, "bbox": [0, 0, 2, 2], "score": 1.5}]"#,
        )
        .unwrap();
        let err = read_detections(&det_path, &sample_meta()).unwrap_err();
        assert!(err.to_string().contains("score"), "{err}");
    }
}
