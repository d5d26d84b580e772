use serde::{Deserialize, Serialize};

use super::layers::sigmoid;
use super::loss::cell_box;
use super::model::{Detector, GridOutput, InputBatch};
use crate::data::{BoundingBox, Image};
use crate::{Error, Result};

/// Evaluation defaults.
pub const EVAL_CONF: f64 = 0.001;
pub const NMS_IOU: f64 = 0.65;

/// A predicted box tied to the image it was produced for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BoundingBox,
}

impl Detection {
    pub fn confidence(&self) -> f64 {
        self.bbox.confidence.unwrap_or(0.0)
    }
}

fn check_threshold(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0,1], got {v}")))
    }
}

/// Candidate boxes of one image of a grid output, unsuppressed.
pub fn candidates(out: &GridOutput, b: usize, n_classes: usize, conf_threshold: f64) -> Vec<BoundingBox> {
    let g = out.grid;
    let mut boxes = Vec::new();
    for gy in 0..g {
        for gx in 0..g {
            let cell = out.cell(b, gy, gx);
            let obj = sigmoid(cell[0]);
            let (cls, p) = (0..n_classes)
                .map(|c| (c, sigmoid(cell[1 + c])))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            // Geometric mean keeps the score on the scale of its factors.
            let conf = (obj * p).sqrt();
            if !(conf >= conf_threshold) {
                continue;
            }
            let [cx, cy, w, h] = cell_box(cell, gx, gy, g, out.box_cells);
            let bx = BoundingBox::new(cls, cx.clamp(0.0, 1.0), cy.clamp(0.0, 1.0), w, h).with_confidence(conf);
            if bx.validate().is_ok() {
                boxes.push(bx);
            }
        }
    }
    boxes
}

/// Greedy per-class NMS. Output is sorted by confidence descending (ties
/// broken by input order).
pub fn nms(boxes: &[BoundingBox], iou_threshold: f64) -> Vec<BoundingBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (boxes[a].confidence.unwrap_or(0.0), boxes[b].confidence.unwrap_or(0.0));
        cb.total_cmp(&ca).then(a.cmp(&b))
    });
    let mut kept: Vec<BoundingBox> = Vec::new();
    for i in order {
        let cand = &boxes[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == cand.class_id && k.iou(cand) > iou_threshold);
        if !suppressed {
            kept.push(*cand);
        }
    }
    kept
}

/// Detections for each image of a batch output.
pub fn decode_output(out: &GridOutput, n_classes: usize, conf_threshold: f64, nms_iou: f64) -> Vec<Vec<BoundingBox>> {
    (0..out.batch)
        .map(|b| nms(&candidates(out, b, n_classes, conf_threshold), nms_iou))
        .collect()
}

/// Eval-mode detection on a single image.
pub fn decode(det: &Detector, image_id: &str, image: &Image, conf_threshold: f64, nms_iou: f64) -> Result<Vec<Detection>> {
    check_threshold("conf_threshold", conf_threshold)?;
    check_threshold("nms_iou", nms_iou)?;
    let x = InputBatch::from_images([image], det.input_size());
    let out = det.forward(&x)?;
    Ok(decode_output(&out, det.config.n_classes, conf_threshold, nms_iou)
        .pop()
        .unwrap_or_default()
        .into_iter()
        .map(|bbox| Detection {
            image_id: image_id.to_string(),
            bbox,
        })
        .collect())
}

/// Eval-mode detection over many images, batched for throughput.
pub fn detect_all<'a>(
    det: &Detector,
    items: impl IntoIterator<Item = (&'a str, &'a Image)>,
    conf_threshold: f64,
    nms_iou: f64,
) -> Result<Vec<Detection>> {
    const CHUNK: usize = 16;
    check_threshold("conf_threshold", conf_threshold)?;
    check_threshold("nms_iou", nms_iou)?;
    let items: Vec<_> = items.into_iter().collect();
    let mut all = Vec::new();
    for chunk in items.chunks(CHUNK) {
        let x = InputBatch::from_images(chunk.iter().map(|(_, img)| *img), det.input_size());
        let out = det.forward(&x)?;
        for ((id, _), boxes) in chunk.iter().zip(decode_output(&out, det.config.n_classes, conf_threshold, nms_iou)) {
            all.extend(boxes.into_iter().map(|bbox| Detection {
                image_id: id.to_string(),
                bbox,
            }));
        }
    }
    Ok(all)
}
