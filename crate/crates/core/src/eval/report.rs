use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ap::ap50;
use super::metrics::{mpc, rpc};
use crate::data::{apply_corruption_with, format_record, parse_label_text, CorruptionKind, CorruptionSpec, Dataset, SeverityTable};
use crate::detector::{detect_all, Detection, Detector, EVAL_CONF, NMS_IOU};
use crate::seed::{derive, splitmix64};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionScore {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub ap50: f64,
}

/// Scores are stored as fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub model_id: String,
    pub suite_id: String,
    pub ap50_clean: f64,
    pub per_corruption: Vec<CorruptionScore>,
    pub mpc: f64,
    pub rpc: Option<f64>,
    pub tau_c: Option<f64>,
}

impl RobustnessReport {
    /// Aggregates per-(kind, severity) scores. Every kind present must be
    /// scored at each of the five severities exactly once.
    pub fn from_scores(
        model_id: impl Into<String>,
        suite_id: impl Into<String>,
        ap50_clean: f64,
        scores: Vec<CorruptionScore>,
        source: Option<&RobustnessReport>,
    ) -> Result<Self> {
        let mut by_kind: BTreeMap<CorruptionKind, Vec<Option<f64>>> = BTreeMap::new();
        for s in &scores {
            let row = by_kind.entry(s.kind).or_insert_with(|| vec![None; 5]);
            let slot = row
                .get_mut(usize::from(s.severity).wrapping_sub(1))
                .ok_or_else(|| Error::Config(format!("severity {} outside 1..=5", s.severity)))?;
            if slot.replace(s.ap50).is_some() {
                return Err(Error::Config(format!("{}:{} scored twice", s.kind, s.severity)));
            }
        }
        let mut per_kind = Vec::new();
        for (kind, row) in &by_kind {
            let missing: Vec<String> = (1..=5).filter(|&s| row[s - 1].is_none()).map(|s| s.to_string()).collect();
            if !missing.is_empty() {
                return Err(Error::Config(format!(
                    "partial severity coverage for {kind}: missing {}",
                    missing.join(",")
                )));
            }
            per_kind.push(row.iter().map(|v| v.expect("checked")).collect::<Vec<_>>());
        }
        let mpc = mpc(&per_kind)?;
        let mut per_corruption = scores;
        per_corruption.sort_by_key(|s| (s.kind, s.severity));
        Ok(Self {
            model_id: model_id.into(),
            suite_id: suite_id.into(),
            ap50_clean,
            per_corruption,
            mpc,
            rpc: rpc(mpc, ap50_clean),
            tau_c: source.map(|s| mpc - s.mpc),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Aligned plain-text table, percentages with two decimals.
    pub fn render_table(&self) -> String {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), pct);
        let mut s = String::new();
        let _ = writeln!(s, "model       {}", self.model_id);
        let _ = writeln!(s, "suite       {}", self.suite_id);
        let _ = writeln!(s, "AP50 clean  {:>7}", pct(self.ap50_clean));
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<16}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}",
            "corruption", "s1", "s2", "s3", "s4", "s5", "mean"
        );
        let mut kinds: Vec<CorruptionKind> = self.per_corruption.iter().map(|c| c.kind).collect();
        kinds.dedup();
        for kind in kinds {
            let row: Vec<f64> = self.per_corruption.iter().filter(|c| c.kind == kind).map(|c| c.ap50).collect();
            let _ = write!(s, "{:<16}", kind.name());
            for v in &row {
                let _ = write!(s, "{:>8}", pct(*v));
            }
            let _ = writeln!(s, "{:>8}", pct(row.iter().sum::<f64>() / row.len() as f64));
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "mPC         {:>7}", pct(self.mpc));
        let _ = writeln!(s, "rPC         {:>7}", opt(self.rpc));
        let _ = writeln!(s, "tau_c       {:>7}", opt(self.tau_c));
        s
    }
}

/// A copy of `ds` with every image corrupted by `spec`; per-image noise
/// streams derive from `seed`.
pub fn corrupted_copy(ds: &Dataset, spec: CorruptionSpec, table: &SeverityTable, seed: u64) -> Result<Dataset> {
    let base = derive(seed, &format!("corrupt:{spec}"));
    let items = ds
        .items
        .iter()
        .enumerate()
        .map(|(i, it)| apply_corruption_with(it, spec, table, splitmix64(base ^ i as u64)))
        .collect();
    Dataset::new(items, crate::data::Domain::Target, ds.class_names.clone())
}

/// Eval-mode detections for every image of `ds` at the evaluation defaults.
pub fn predict(det: &Detector, ds: &Dataset) -> Result<Vec<Detection>> {
    detect_all(det, ds.items.iter().map(|it| (it.id.as_str(), &it.image)), EVAL_CONF, NMS_IOU)
}

pub fn evaluate(det: &Detector, ds: &Dataset) -> Result<f64> {
    ap50(&predict(det, ds)?, ds)
}

/// Runs `det` on the clean test set and on one corrupted copy per suite
/// entry, then aggregates mPC, rPC and (given a source report) tau_c.
pub fn robustness(
    det: &Detector,
    clean_test: &Dataset,
    suite: &[CorruptionSpec],
    table: &SeverityTable,
    seed: u64,
    ids: (&str, &str),
    source_report: Option<&RobustnessReport>,
) -> Result<RobustnessReport> {
    check_suite(suite)?;
    let clean = evaluate(det, clean_test)?;
    let mut scores = Vec::with_capacity(suite.len());
    for &spec in suite {
        let ds = corrupted_copy(clean_test, spec, table, seed)?;
        scores.push(CorruptionScore {
            kind: spec.kind,
            severity: spec.severity(),
            ap50: evaluate(det, &ds)?,
        });
    }
    RobustnessReport::from_scores(ids.0, ids.1, clean, scores, source_report)
}

/// A suite must list each kind at all five severities.
pub fn check_suite(suite: &[CorruptionSpec]) -> Result<()> {
    let scores: Vec<CorruptionScore> = suite
        .iter()
        .map(|s| CorruptionScore {
            kind: s.kind,
            severity: s.severity(),
            ap50: 0.0,
        })
        .collect();
    if scores.is_empty() {
        return Err(Error::Config("empty corruption suite".into()));
    }
    RobustnessReport::from_scores("", "", 0.0, scores, None).map(|_| ())
}

/// One line per detection: `image_id class_id cx cy w h confidence`.
pub fn format_predictions(dets: &[Detection]) -> String {
    dets.iter()
        .map(|d| format!("{} {}\n", d.image_id, format_record(&d.bbox)))
        .collect()
}

pub fn write_predictions(path: &Path, dets: &[Detection]) -> Result<()> {
    fs::write(path, format_predictions(dets)).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Detection>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (id, rest) = line.split_once(char::is_whitespace).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected an image id followed by a 6-field record".into(),
        })?;
        let b = parse_label_text(rest, path, true).map_err(|e| match e {
            Error::Parse { path, message, .. } => Error::Parse {
                path,
                line: i + 1,
                message,
            },
            other => other,
        })?;
        out.extend(b.into_iter().map(|bbox| Detection {
            image_id: id.to_string(),
            bbox,
        }));
    }
    Ok(out)
}
