use std::cmp::Ordering;
use std::collections::HashMap;

use crate::data::Dataset;
use crate::detector::Detection;
use crate::{Error, Result};

pub const IOU_THRESHOLD: f64 = 0.5;

/// Confidence descending; ties broken by content so the result does not
/// depend on the order detections were listed in.
pub(crate) fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.confidence()
        .total_cmp(&a.confidence())
        .then_with(|| a.image_id.cmp(&b.image_id))
        .then_with(|| a.bbox.cx.total_cmp(&b.bbox.cx))
        .then_with(|| a.bbox.cy.total_cmp(&b.bbox.cy))
        .then_with(|| a.bbox.w.total_cmp(&b.bbox.w))
        .then_with(|| a.bbox.h.total_cmp(&b.bbox.h))
}

/// All-point interpolated area under a precision/recall curve given in
/// rank order.
pub fn all_point_ap(recall: &[f64], precision: &[f64]) -> f64 {
    let mut env = precision.to_vec();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (r, p) in recall.iter().zip(&env) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// Per-class AP at IoU 0.5 for every class with ground truth, keyed by class.
pub fn ap50_per_class(predictions: &[Detection], truth: &Dataset) -> Result<Vec<(usize, f64)>> {
    let index = truth.index();
    for d in predictions {
        if !index.contains_key(d.image_id.as_str()) {
            return Err(Error::Contract(format!("prediction for unknown image '{}'", d.image_id)));
        }
    }
    let mut n_truth: HashMap<usize, usize> = HashMap::new();
    for item in &truth.items {
        for b in &item.boxes {
            *n_truth.entry(b.class_id).or_default() += 1;
        }
    }
    let mut classes: Vec<usize> = n_truth.keys().copied().collect();
    classes.sort_unstable();

    let mut out = Vec::with_capacity(classes.len());
    for c in classes {
        let mut dets: Vec<&Detection> = predictions.iter().filter(|d| d.bbox.class_id == c).collect();
        dets.sort_by(|a, b| rank(a, b));
        let mut matched: HashMap<(usize, usize), bool> = HashMap::new();
        let (mut tp, mut fp) = (0usize, 0usize);
        let total = n_truth[&c] as f64;
        let mut recall = Vec::with_capacity(dets.len());
        let mut precision = Vec::with_capacity(dets.len());
        for d in dets {
            let img = index[d.image_id.as_str()];
            let best = truth.items[img]
                .boxes
                .iter()
                .enumerate()
                .filter(|(_, g)| g.class_id == c)
                .map(|(j, g)| (j, d.bbox.iou(g)))
                .fold(None, |acc: Option<(usize, f64)>, x| match acc {
                    Some(a) if a.1 >= x.1 => Some(a),
                    _ => Some(x),
                });
            match best {
                Some((j, iou)) if iou >= IOU_THRESHOLD && !matched.contains_key(&(img, j)) => {
                    matched.insert((img, j), true);
                    tp += 1;
                }
                _ => fp += 1,
            }
            recall.push(tp as f64 / total);
            precision.push(tp as f64 / (tp + fp) as f64);
        }
        out.push((c, all_point_ap(&recall, &precision)));
    }
    Ok(out)
}

/// VOC-style AP50 averaged over the classes present in `truth`, as a
/// fraction. Truth without any boxes has no defined AP.
pub fn ap50(predictions: &[Detection], truth: &Dataset) -> Result<f64> {
    let per = ap50_per_class(predictions, truth)?;
    if per.is_empty() {
        return Err(Error::Domain("AP50 is undefined for ground truth without boxes".into()));
    }
    Ok(per.iter().map(|(_, a)| a).sum::<f64>() / per.len() as f64)
}
