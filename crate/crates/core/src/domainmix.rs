//! Cross-domain 2x2 collages. Each member image is scaled to cover its
//! quadrant and randomly cropped along the overflowing dimension; boxes
//! follow the same affine map and are clipped to the quadrant.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_png, BoundingBox, Dataset, Domain, Image, LabeledImage};
use crate::pseudolabel::PseudoLabelSet;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    /// Output side `S` in pixels.
    pub canvas: usize,
    /// Boxes keeping less than this fraction of their mapped area are dropped.
    pub min_visible: f64,
    /// The split point is drawn uniformly from `[lo*S, hi*S]` per axis.
    pub center_window: (f64, f64),
    /// Pin the split point to the canvas midpoint.
    pub fixed_center: bool,
    /// Stretch whole member images into their quadrants instead of cropping.
    pub full_crops: bool,
}

impl MixConfig {
    pub fn new(canvas: usize) -> Self {
        Self {
            canvas,
            min_visible: 0.25,
            center_window: (0.25, 0.75),
            fixed_center: false,
            full_crops: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas < 8 {
            return Err(Error::Config(format!("canvas {} is below 8 px", self.canvas)));
        }
        if !(self.min_visible > 0.0 && self.min_visible <= 1.0) {
            return Err(Error::Config(format!("min_visible {} outside (0,1]", self.min_visible)));
        }
        let (lo, hi) = self.center_window;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("center window ({lo}, {hi}) must satisfy 0 < lo <= hi < 1")));
        }
        Ok(())
    }
}

/// Integer pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Sub-pixel crop window in a member image's pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl CropRect {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            x1: width as f64,
            y1: height as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixMember {
    pub image_id: String,
    pub domain: Domain,
    pub crop: CropRect,
    pub placement: Rect,
}

/// Provenance of one collage: members in TL, TR, BL, BR order.
#[derive(Clone, Debug, PartialEq)]
pub struct MixPlan {
    pub canvas: usize,
    pub center: (usize, usize),
    pub members: Vec<MixMember>,
}

impl MixPlan {
    /// Index of the member that supplies canvas pixel `(x, y)`.
    pub fn owner(&self, x: usize, y: usize) -> Option<usize> {
        self.members.iter().position(|m| m.placement.contains(x, y))
    }

    /// True when every canvas pixel belongs to exactly one placement.
    pub fn tiles_canvas(&self) -> bool {
        let area: usize = self.members.iter().map(|m| m.placement.width() * m.placement.height()).sum();
        if area != self.canvas * self.canvas {
            return false;
        }
        (0..self.canvas).all(|y| {
            (0..self.canvas).all(|x| self.members.iter().filter(|m| m.placement.contains(x, y)).count() == 1)
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedSample {
    pub image: Image,
    pub boxes: Vec<BoundingBox>,
    pub plan: MixPlan,
}

impl MixedSample {
    pub fn target_members(&self) -> usize {
        self.plan.members.iter().filter(|m| m.domain == Domain::Target).count()
    }
}

/// `k` draws: a fair coin picks the domain, then an item uniformly with
/// replacement. An empty domain falls back to the other with a warning.
pub fn balanced_sample(source: &Dataset, target: &Dataset, k: usize, rng: &mut impl Rng) -> Result<Vec<(String, Domain)>> {
    if k == 0 {
        return Err(Error::Contract("balanced_sample needs k >= 1".into()));
    }
    if source.is_empty() && target.is_empty() {
        return Err(Error::Contract("both domains are empty".into()));
    }
    if source.is_empty() || target.is_empty() {
        log::warn!(
            "{} domain is empty; sampling only from the other",
            if source.is_empty() { "source" } else { "target" }
        );
    }
    Ok((0..k)
        .map(|_| {
            let pick_source = rng.random_bool(0.5);
            let (ds, dom) = match (pick_source, source.is_empty(), target.is_empty()) {
                (_, true, _) | (false, false, false) => (target, Domain::Target),
                _ => (source, Domain::Source),
            };
            let i = rng.random_range(0..ds.len());
            (ds.items[i].id.clone(), dom)
        })
        .collect())
}

/// Maps normalized `boxes` of an `image_w x image_h` member through the
/// affine transform taking `crop` onto `placement`, clips them to
/// `placement`, and renormalizes to the `canvas`. Boxes whose clipped area
/// is below `min_visible` of their mapped area are dropped.
pub fn remap_boxes(
    boxes: &[BoundingBox],
    (image_w, image_h): (usize, usize),
    crop: CropRect,
    placement: Rect,
    canvas: usize,
    min_visible: f64,
) -> Result<Vec<BoundingBox>> {
    if !(min_visible > 0.0 && min_visible <= 1.0) {
        return Err(Error::Contract(format!("min_visible {min_visible} outside (0,1]")));
    }
    let crop_ok = crop.x0 >= 0.0
        && crop.y0 >= 0.0
        && crop.x1 > crop.x0
        && crop.y1 > crop.y0
        && crop.x1 <= image_w as f64 + 1e-9
        && crop.y1 <= image_h as f64 + 1e-9;
    let place_ok = placement.x1 > placement.x0
        && placement.y1 > placement.y0
        && placement.x1 <= canvas
        && placement.y1 <= canvas;
    if !crop_ok || !place_ok {
        return Err(Error::Contract(format!(
            "degenerate remap rects: crop {crop:?} in {image_w}x{image_h}, placement {placement:?} in {canvas}"
        )));
    }
    let sx = placement.width() as f64 / (crop.x1 - crop.x0);
    let sy = placement.height() as f64 / (crop.y1 - crop.y0);
    let (px0, py0, px1, py1) = (
        placement.x0 as f64,
        placement.y0 as f64,
        placement.x1 as f64,
        placement.y1 as f64,
    );
    let s = canvas as f64;
    let mut out = Vec::with_capacity(boxes.len());
    for b in boxes {
        let [x1, y1, x2, y2] = b.corners();
        let mx1 = px0 + (x1 * image_w as f64 - crop.x0) * sx;
        let mx2 = px0 + (x2 * image_w as f64 - crop.x0) * sx;
        let my1 = py0 + (y1 * image_h as f64 - crop.y0) * sy;
        let my2 = py0 + (y2 * image_h as f64 - crop.y0) * sy;
        let mapped = (mx2 - mx1) * (my2 - my1);
        let (cx1, cx2) = (mx1.max(px0), mx2.min(px1));
        let (cy1, cy2) = (my1.max(py0), my2.min(py1));
        if cx2 <= cx1 || cy2 <= cy1 {
            continue;
        }
        let visible = (cx2 - cx1) * (cy2 - cy1);
        if visible < min_visible * mapped * (1.0 - 1e-12) {
            continue;
        }
        let mut nb = BoundingBox::from_corners(b.class_id, [cx1 / s, cy1 / s, cx2 / s, cy2 / s]);
        nb.confidence = b.confidence;
        if nb.validate().is_ok() {
            out.push(nb);
        }
    }
    Ok(out)
}

fn quadrants(canvas: usize, (cx, cy): (usize, usize)) -> [Rect; 4] {
    [
        Rect { x0: 0, y0: 0, x1: cx, y1: cy },
        Rect { x0: cx, y0: 0, x1: canvas, y1: cy },
        Rect { x0: 0, y0: cy, x1: cx, y1: canvas },
        Rect { x0: cx, y0: cy, x1: canvas, y1: canvas },
    ]
}

fn sample_center(cfg: &MixConfig, rng: &mut impl Rng) -> (usize, usize) {
    let s = cfg.canvas;
    if cfg.fixed_center {
        return (s / 2, s / 2);
    }
    let lo = ((cfg.center_window.0 * s as f64).ceil() as usize).max(1);
    let hi = ((cfg.center_window.1 * s as f64).floor() as usize).clamp(lo, s - 1);
    (rng.random_range(lo..=hi), rng.random_range(lo..=hi))
}

/// Covering crop of a `w x h` image for a `pw x ph` quadrant.
fn cover_crop(w: usize, h: usize, place: Rect, full: bool, rng: &mut impl Rng) -> CropRect {
    if full {
        return CropRect::full(w, h);
    }
    let (pw, ph) = (place.width() as f64, place.height() as f64);
    let scale = (pw / w as f64).max(ph / h as f64);
    let (cw, ch) = ((pw / scale).min(w as f64), (ph / scale).min(h as f64));
    let ox = if w as f64 - cw > 1e-9 { rng.random_range(0.0..=w as f64 - cw) } else { 0.0 };
    let oy = if h as f64 - ch > 1e-9 { rng.random_range(0.0..=h as f64 - ch) } else { 0.0 };
    CropRect {
        x0: ox,
        y0: oy,
        x1: ox + cw,
        y1: oy + ch,
    }
}

/// Builds one collage from explicitly chosen members.
pub fn compose(members: [(&LabeledImage, &[BoundingBox]); 4], cfg: &MixConfig, rng: &mut impl Rng) -> Result<MixedSample> {
    cfg.validate()?;
    let s = cfg.canvas;
    let center = sample_center(cfg, rng);
    let places = quadrants(s, center);
    let mut plan = MixPlan {
        canvas: s,
        center,
        members: Vec::with_capacity(4),
    };
    let mut boxes = Vec::new();
    for ((item, labels), place) in members.iter().zip(places) {
        let (w, h) = (item.image.width(), item.image.height());
        let crop = cover_crop(w, h, place, cfg.full_crops, rng);
        boxes.extend(remap_boxes(labels, (w, h), crop, place, s, cfg.min_visible)?);
        plan.members.push(MixMember {
            image_id: item.id.clone(),
            domain: item.domain,
            crop,
            placement: place,
        });
    }
    let image = Image::from_fn(s, s, |x, y| {
        let idx = plan.owner(x, y).expect("quadrants tile the canvas");
        let (p, c) = (plan.members[idx].placement, plan.members[idx].crop);
        let item = members[idx].0;
        let u = c.x0 + ((x - p.x0) as f64 + 0.5) / p.width() as f64 * (c.x1 - c.x0);
        let v = c.y0 + ((y - p.y0) as f64 + 0.5) / p.height() as f64 * (c.y1 - c.y0);
        item.image.sample(u, v)
    })?;
    Ok(MixedSample { image, boxes, plan })
}

/// One collage per batch element: the element itself, then three balanced
/// draws. Source members contribute ground truth, target members their
/// pseudo-labels.
pub fn domain_mix_batch(
    batch: &[&LabeledImage],
    source: &Dataset,
    target: &Dataset,
    pseudo: &PseudoLabelSet,
    cfg: &MixConfig,
    rng: &mut impl Rng,
) -> Result<Vec<MixedSample>> {
    let src_index = source.index();
    let tgt_index = target.index();
    let mut out = Vec::with_capacity(batch.len());
    for &first in batch {
        let draws = balanced_sample(source, target, 3, rng)?;
        let mut members: Vec<(&LabeledImage, &[BoundingBox])> = vec![(first, first.boxes.as_slice())];
        for (id, dom) in &draws {
            let member = match dom {
                Domain::Target => {
                    let item = &target.items[tgt_index[id.as_str()]];
                    let labels = pseudo
                        .get(id)
                        .ok_or_else(|| Error::Contract(format!("no pseudo-label entry for target image '{id}'")))?;
                    (item, labels)
                }
                _ => {
                    let item = &source.items[src_index[id.as_str()]];
                    (item, item.boxes.as_slice())
                }
            };
            members.push(member);
        }
        let members: [_; 4] = members.try_into().expect("four members");
        out.push(compose(members, cfg, rng)?);
    }
    Ok(out)
}

/// Writes each sample as a PNG with its boxes outlined, for inspection.
pub fn dump_debug(samples: &[MixedSample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, smp) in samples.iter().enumerate() {
        let s = smp.image.width();
        let edge = |b: &BoundingBox, x: usize, y: usize| {
            let [x1, y1, x2, y2] = b.corners().map(|v| (v * s as f64) as isize);
            let (x, y) = (x as isize, y as isize);
            let inside = x >= x1 && x <= x2 && y >= y1 && y <= y2;
            inside && (x == x1 || x == x2 || y == y1 || y == y2)
        };
        let img = smp.image.map(|x, y, px| {
            if smp.boxes.iter().any(|b| edge(b, x, y)) {
                [1.0, 0.1, 0.1]
            } else {
                px
            }
        });
        write_png(&dir.join(format!("mix_{i:04}.png")), &img)?;
        let mut plan = String::new();
        for m in &smp.plan.members {
            plan.push_str(&format!("{} {} {:?}\n", m.image_id, m.domain, m.placement));
        }
        let p = dir.join(format!("mix_{i:04}.txt"));
        fs::write(&p, plan).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
