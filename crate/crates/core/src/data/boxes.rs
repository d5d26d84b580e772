use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Normalized center-format box. `confidence` is `None` for ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: Option<f64>,
}

impl BoundingBox {
    pub fn new(class_id: usize, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            class_id,
            cx,
            cy,
            w,
            h,
            confidence: None,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }

    pub fn from_corners(class_id: usize, [x1, y1, x2, y2]: [f64; 4]) -> Self {
        Self::new(
            class_id,
            0.5 * (x1 + x2),
            0.5 * (y1 + y2),
            x2 - x1,
            y2 - y1,
        )
    }

    /// `[x1, y1, x2, y2]`.
    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        ]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        iou_corners(self.corners(), other.corners())
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Contract(format!("non-finite box {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.cx) || !(0.0..=1.0).contains(&self.cy) {
            return Err(Error::Contract(format!("box center outside [0,1]: {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::Contract(format!("box has non-positive size: {self:?}")));
        }
        let [x1, y1, x2, y2] = self.corners();
        let iw = x2.min(1.0) - x1.max(0.0);
        let ih = y2.min(1.0) - y1.max(0.0);
        if iw <= 0.0 || ih <= 0.0 {
            return Err(Error::Contract(format!("box does not intersect the image: {self:?}")));
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Contract(format!("confidence {c} outside [0,1]")));
            }
        }
        Ok(())
    }
}

pub fn iou_corners(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    inter / (area_a + area_b - inter)
}
