//! GIoU box loss, focal classification/objectness losses and the
//! one-box-per-cell target assignment.

use serde::{Deserialize, Serialize};

use super::layers::{sigmoid, softplus};
use super::model::GridOutput;
use super::DetectorConfig;
use crate::data::BoundingBox;
use crate::{Error, Result};

/// Generalized IoU of two boxes with positive area, in `[-1, 1]`.
pub fn giou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    for bx in [a, b] {
        if !(bx.w > 0.0 && bx.h > 0.0) {
            return Err(Error::Domain(format!("giou of a zero-area box {bx:?}")));
        }
    }
    Ok(giou_corners(a.corners(), b.corners()).0)
}

/// GIoU and its gradient with respect to the corners of `a`.
pub(crate) fn giou_corners(a: [f64; 4], b: [f64; 4]) -> (f64, [f64; 4]) {
    let [ax1, ay1, ax2, ay2] = a;
    let [bx1, by1, bx2, by2] = b;
    let (aw, ah) = (ax2 - ax1, ay2 - ay1);
    let area_a = aw * ah;
    let area_b = (bx2 - bx1) * (by2 - by1);

    let iw = ax2.min(bx2) - ax1.max(bx1);
    let ih = ay2.min(by2) - ay1.max(by1);
    let overlap = iw > 0.0 && ih > 0.0;
    let inter = if overlap { iw * ih } else { 0.0 };
    let union = area_a + area_b - inter;
    let cw = ax2.max(bx2) - ax1.min(bx1);
    let ch = ay2.max(by2) - ay1.min(by1);
    let enclose = cw * ch;
    let g = inter / union - 1.0 + union / enclose;

    // d(inter) / d(ax1, ay1, ax2, ay2)
    let mut d_inter = [0.0; 4];
    if overlap {
        if ax1 > bx1 {
            d_inter[0] = -ih;
        }
        if ax2 < bx2 {
            d_inter[2] = ih;
        }
        if ay1 > by1 {
            d_inter[1] = -iw;
        }
        if ay2 < by2 {
            d_inter[3] = iw;
        }
    }
    let d_area = [-ah, -aw, ah, aw];
    let mut d_enc = [0.0; 4];
    if ax1 < bx1 {
        d_enc[0] = -ch;
    }
    if ax2 > bx2 {
        d_enc[2] = ch;
    }
    if ay1 < by1 {
        d_enc[1] = -cw;
    }
    if ay2 > by2 {
        d_enc[3] = cw;
    }
    let mut grad = [0.0; 4];
    for i in 0..4 {
        let d_union = d_area[i] - d_inter[i];
        let d_iou = (d_inter[i] * union - inter * d_union) / (union * union);
        let d_ratio = (d_union * enclose - union * d_enc[i]) / (enclose * enclose);
        grad[i] = d_iou + d_ratio;
    }
    (g, grad)
}

/// Per-element focal loss `alpha_t (1 - p_t)^gamma * BCE` and its
/// derivative with respect to the logit. `target` must be 0 or 1.
#[inline]
pub(crate) fn focal_element(logit: f64, target: bool, gamma: f64, alpha: f64) -> (f64, f64) {
    let (z, sign, a) = if target { (logit, 1.0, alpha) } else { (-logit, -1.0, 1.0 - alpha) };
    let pt = sigmoid(z);
    let q = 1.0 - pt;
    let ce = softplus(-z);
    let m = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
    let loss = a * m * ce;
    let dz = -a * m * (gamma * pt * ce + q);
    (loss, dz * sign)
}

fn check_targets(logits: &[f64], targets: &[f64]) -> Result<()> {
    if logits.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} logits but {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::Contract(format!("focal target {t} is not 0 or 1")));
    }
    Ok(())
}

/// Elementwise focal loss.
pub fn focal_loss_elementwise(logits: &[f64], targets: &[f64], gamma: f64, alpha: f64) -> Result<Vec<f64>> {
    check_targets(logits, targets)?;
    Ok(logits
        .iter()
        .zip(targets)
        .map(|(&x, &t)| focal_element(x, t == 1.0, gamma, alpha).0)
        .collect())
}

/// Mean focal loss over all elements.
pub fn focal_loss(logits: &[f64], targets: &[f64], gamma: f64, alpha: f64) -> Result<f64> {
    let el = focal_loss_elementwise(logits, targets, gamma, alpha)?;
    if el.is_empty() {
        return Ok(0.0);
    }
    Ok(el.iter().sum::<f64>() / el.len() as f64)
}

/// Responsible cell for a normalized coordinate; a center exactly on a
/// cell boundary belongs to the lower cell.
pub fn cell_index(v: f64, grid: usize) -> usize {
    let scaled = v * grid as f64;
    (scaled.ceil() as isize - 1).clamp(0, grid as isize - 1) as usize
}

/// Per-image `grid*grid` slots; one box per cell, larger area wins.
pub(crate) fn assign_targets(boxes: &[BoundingBox], grid: usize) -> Result<Vec<Option<BoundingBox>>> {
    let mut cells: Vec<Option<BoundingBox>> = vec![None; grid * grid];
    for b in boxes {
        b.validate()?;
        let gx = cell_index(b.cx, grid);
        let gy = cell_index(b.cy, grid);
        let slot = &mut cells[gy * grid + gx];
        match slot {
            Some(existing) if existing.area() >= b.area() => {}
            _ => *slot = Some(*b),
        }
    }
    Ok(cells)
}

/// Decoded box of one cell: center offset and size through sigmoids, sizes
/// as a fraction of `box_cells` cells.
#[inline]
pub(crate) fn cell_box(cell: &[f64], gx: usize, gy: usize, grid: usize, box_cells: usize) -> [f64; 4] {
    let k = cell.len();
    let g = grid as f64;
    let span = box_cells as f64 / g;
    [
        (gx as f64 + sigmoid(cell[k - 4])) / g,
        (gy as f64 + sigmoid(cell[k - 3])) / g,
        span * sigmoid(cell[k - 2]),
        span * sigmoid(cell[k - 1]),
    ]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Weighted sum of the three terms.
    pub total: f64,
    /// Mean `1 - GIoU` over positive cells.
    pub box_term: f64,
    /// Focal objectness, summed over cells, averaged over images.
    pub obj_term: f64,
    /// Focal class loss, summed over classes, averaged over positive cells.
    pub cls_term: f64,
    pub positives: usize,
}

/// Loss and `d loss / d output` for a batch of raw predictions.
pub fn compute_loss(
    cfg: &DetectorConfig,
    out: &GridOutput,
    labels: &[Vec<BoundingBox>],
) -> Result<(LossBreakdown, GridOutput)> {
    if labels.len() != out.batch {
        return Err(Error::Contract(format!(
            "{} label lists for a batch of {}",
            labels.len(),
            out.batch
        )));
    }
    let grid = out.grid;
    let span = out.box_cells as f64 / grid as f64;
    let nc = cfg.n_classes;
    let (gamma, alpha) = (cfg.focal_gamma, cfg.focal_alpha);
    let targets = labels
        .iter()
        .map(|l| assign_targets(l, grid))
        .collect::<Result<Vec<_>>>()?;
    let positives = targets.iter().flatten().filter(|t| t.is_some()).count();
    let inv_batch = 1.0 / out.batch as f64;
    let inv_pos = if positives > 0 { 1.0 / positives as f64 } else { 0.0 };

    let mut grad = GridOutput {
        data: vec![0.0; out.data.len()],
        ..out.clone()
    };
    let (mut box_sum, mut obj_sum, mut cls_sum) = (0.0, 0.0, 0.0);
    for (b, cells) in targets.iter().enumerate() {
        for gy in 0..grid {
            for gx in 0..grid {
                let target = cells[gy * grid + gx];
                let off = ((b * grid + gy) * grid + gx) * out.k;
                let cell = &out.data[off..off + out.k];
                let gcell = &mut grad.data[off..off + out.k];

                let (l, d) = focal_element(cell[0], target.is_some(), gamma, alpha);
                obj_sum += l;
                gcell[0] = cfg.obj_weight * inv_batch * d;

                let Some(t) = target else { continue };
                for c in 0..nc {
                    let (l, d) = focal_element(cell[1 + c], t.class_id == c, gamma, alpha);
                    cls_sum += l;
                    gcell[1 + c] = cfg.cls_weight * inv_pos * d;
                }

                let pred = cell_box(cell, gx, gy, grid, out.box_cells);
                let pb = BoundingBox::new(0, pred[0], pred[1], pred[2], pred[3]);
                let (g, dc) = giou_corners(pb.corners(), t.corners());
                box_sum += 1.0 - g;
                // corners -> (cx, cy, w, h)
                let d_cx = dc[0] + dc[2];
                let d_cy = dc[1] + dc[3];
                let d_w = 0.5 * (dc[2] - dc[0]);
                let d_h = 0.5 * (dc[3] - dc[1]);
                let k = out.k;
                let scale = -cfg.box_weight * inv_pos;
                let sg = |x: f64| {
                    let s = sigmoid(x);
                    s * (1.0 - s)
                };
                gcell[k - 4] = scale * d_cx * sg(cell[k - 4]) / grid as f64;
                gcell[k - 3] = scale * d_cy * sg(cell[k - 3]) / grid as f64;
                gcell[k - 2] = scale * d_w * span * sg(cell[k - 2]);
                gcell[k - 1] = scale * d_h * span * sg(cell[k - 1]);
            }
        }
    }
    let box_term = box_sum * inv_pos;
    let obj_term = obj_sum * inv_batch;
    let cls_term = cls_sum * inv_pos;
    let total = cfg.box_weight * box_term + cfg.obj_weight * obj_term + cfg.cls_weight * cls_term;
    Ok((
        LossBreakdown {
            total,
            box_term,
            obj_term,
            cls_term,
            positives,
        },
        grad,
    ))
}
