//! Thresholded self-labels for unlabeled target images, always persisted
//! to disk between stages.
//!
//! ```text
//! <dir>/manifest.txt   producer=<id>, conf_threshold=<t>, then one image id per line
//! <dir>/labels/<id>.txt   "class_id cx cy w h confidence" per box
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data::{parse_label_text, write_labels, BoundingBox, Dataset, Domain};
use crate::detector::{detect_all, Detector, NMS_IOU};
use crate::{Error, Result};

pub const PSEUDO_CONF: f64 = 0.4;

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    labels: BTreeMap<String, Vec<BoundingBox>>,
    pub producer: String,
    pub conf_threshold: f64,
}

impl PseudoLabelSet {
    pub fn new(labels: BTreeMap<String, Vec<BoundingBox>>, producer: impl Into<String>, conf_threshold: f64) -> Result<Self> {
        for (id, boxes) in &labels {
            for b in boxes {
                b.validate()?;
                match b.confidence {
                    Some(c) if c >= conf_threshold => {}
                    other => {
                        return Err(Error::Contract(format!(
                            "pseudo-label on '{id}' has confidence {other:?} below threshold {conf_threshold}"
                        )))
                    }
                }
            }
        }
        Ok(Self {
            labels,
            producer: producer.into(),
            conf_threshold,
        })
    }

    /// An entry with no boxes for every image of `target`.
    pub fn empty_for(target: &Dataset, producer: impl Into<String>) -> Self {
        Self {
            labels: target.items.iter().map(|it| (it.id.clone(), Vec::new())).collect(),
            producer: producer.into(),
            conf_threshold: 1.0,
        }
    }

    pub fn get(&self, id: &str) -> Option<&[BoundingBox]> {
        self.labels.get(id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[BoundingBox])> {
        self.labels.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn total_boxes(&self) -> usize {
        self.labels.values().map(Vec::len).sum()
    }

    /// The subset of boxes at or above a stricter threshold.
    pub fn filtered(&self, conf_threshold: f64) -> Self {
        let t = conf_threshold.max(self.conf_threshold);
        Self {
            labels: self
                .labels
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().filter(|b| b.confidence.unwrap_or(0.0) >= t).copied().collect()))
                .collect(),
            producer: self.producer.clone(),
            conf_threshold: t,
        }
    }

    /// Attaches the labels to a copy of `target`, replacing whatever boxes
    /// it carried.
    pub fn apply_to(&self, target: &Dataset) -> Result<Dataset> {
        self.check_coverage(target)?;
        let mut ds = target.clone();
        for item in &mut ds.items {
            item.boxes = self.labels[&item.id].clone();
        }
        Ok(ds)
    }

    /// The set must cover exactly the ids of `target`.
    pub fn check_coverage(&self, target: &Dataset) -> Result<()> {
        let missing: Vec<&str> = target
            .items
            .iter()
            .map(|it| it.id.as_str())
            .filter(|id| !self.labels.contains_key(*id))
            .collect();
        let extra = self.labels.len() + missing.len() - target.len();
        if missing.is_empty() && extra == 0 {
            return Ok(());
        }
        let first = |v: &[&str]| v.iter().take(3).copied().collect::<Vec<_>>().join(",");
        Err(Error::Coverage(format!(
            "{} target ids without labels (e.g. {}), {} label ids not in the target",
            missing.len(),
            first(&missing),
            extra
        )))
    }
}

/// Eval-mode detection with per-class NMS over every target image,
/// keeping boxes at or above `conf_threshold`.
pub fn gen_pseudo(det: &Detector, target: &Dataset, conf_threshold: f64, producer: &str) -> Result<PseudoLabelSet> {
    if target.domain != Domain::Target {
        return Err(Error::Contract(format!(
            "pseudo-labels are generated for target data, got a {} dataset",
            target.domain
        )));
    }
    let mut labels: BTreeMap<String, Vec<BoundingBox>> =
        target.items.iter().map(|it| (it.id.clone(), Vec::new())).collect();
    let dets = detect_all(
        det,
        target.items.iter().map(|it| (it.id.as_str(), &it.image)),
        conf_threshold,
        NMS_IOU,
    )?;
    for d in dets {
        if d.confidence() >= conf_threshold {
            labels.get_mut(&d.image_id).expect("id from target").push(d.bbox);
        }
    }
    PseudoLabelSet::new(labels, producer, conf_threshold)
}

pub fn save_pseudo(set: &PseudoLabelSet, dir: &Path) -> Result<()> {
    let labels = dir.join("labels");
    fs::create_dir_all(&labels).map_err(|e| Error::io(&labels, e))?;
    let mut manifest = format!("producer={}\nconf_threshold={}\n", set.producer, set.conf_threshold);
    for (id, boxes) in &set.labels {
        manifest.push_str(id);
        manifest.push('\n');
        write_labels(&labels.join(format!("{id}.txt")), boxes)?;
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Loads a set and, when `target` is given, checks it covers exactly that
/// dataset's ids.
pub fn load_pseudo(dir: &Path, target: Option<&Dataset>) -> Result<PseudoLabelSet> {
    let mpath = dir.join("manifest.txt");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let perr = |line: usize, message: String| Error::Parse {
        path: mpath.clone(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let mut header = |key: &str| -> Result<String> {
        let (i, l) = lines.next().ok_or_else(|| perr(0, format!("missing {key}")))?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .map(String::from)
            .ok_or_else(|| perr(i + 1, format!("expected '{key}=...'")))
    };
    let producer = header("producer")?;
    let conf_threshold: f64 = header("conf_threshold")?
        .parse()
        .map_err(|_| perr(2, "bad conf_threshold".into()))?;
    let mut labels = BTreeMap::new();
    for (_, id) in lines {
        let id = id.trim();
        if id.is_empty() {
            continue;
        }
        let lpath = dir.join("labels").join(format!("{id}.txt"));
        let text = fs::read_to_string(&lpath).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Coverage(format!("label file for '{id}' is missing")),
            _ => Error::io(&lpath, e),
        })?;
        labels.insert(id.to_string(), parse_label_text(&text, &lpath, true)?);
    }
    let set = PseudoLabelSet::new(labels, producer, conf_threshold)?;
    if let Some(t) = target {
        set.check_coverage(t)?;
    }
    Ok(set)
}
