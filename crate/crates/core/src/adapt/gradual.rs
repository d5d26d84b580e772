use std::fs;
use std::path::Path;

use super::config::AdaptConfig;
use super::engine::{carve_validation, Batches, Trainer};
use super::record::{AdaptRunRecord, EpochMetrics, Event, Phase};
use crate::data::{Dataset, Domain};
use crate::detector::{save_checkpoint, CheckpointMeta, Detector};
use crate::pseudolabel::{gen_pseudo, load_pseudo, save_pseudo, PseudoLabelSet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum BatchKind {
    Mixed,
    Interleaved,
}

/// Shape of one adaptation run.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Plan {
    /// Start in BN-only mode.
    pub freeze_first: bool,
    /// Epoch at which to switch to full fine-tuning.
    pub switch_at: Option<usize>,
    /// Regenerate pseudo-labels at the switch.
    pub refresh: bool,
    pub batches: BatchKind,
}

#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub model: Detector,
    pub record: AdaptRunRecord,
    /// Adapted teacher and its record, for teacher-guided runs.
    pub teacher: Option<(Detector, AdaptRunRecord)>,
}

/// Persists a pseudo-label set and reads it back, so training always
/// consumes the on-disk copy when a run directory is given.
fn materialize(set: PseudoLabelSet, target: &Dataset, dir: Option<&Path>) -> Result<PseudoLabelSet> {
    match dir {
        Some(d) => {
            save_pseudo(&set, d)?;
            load_pseudo(d, Some(target))
        }
        None => Ok(set),
    }
}

fn check_inputs(source: &Dataset, target: &Dataset) -> Result<()> {
    if source.domain != Domain::Source {
        return Err(Error::Contract(format!("expected a source dataset, got {}", source.domain)));
    }
    if target.domain != Domain::Target {
        return Err(Error::Contract(format!("expected a target dataset, got {}", target.domain)));
    }
    if target.is_empty() {
        return Err(Error::Contract("empty target dataset".into()));
    }
    Ok(())
}

fn write_run_dir(dir: &Path, cfg: &AdaptConfig, record: &AdaptRunRecord) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("config.json", serde_json::to_string_pretty(cfg)? + "\n"),
        ("events.log", record.event_log()),
        ("metrics.csv", record.metrics_csv()),
    ];
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn meta(label: &str, epoch: usize, val_ap50: Option<f64>) -> CheckpointMeta {
    CheckpointMeta {
        epoch,
        val_ap50,
        label: label.to_string(),
    }
}

/// Shared driver for every adaptation row. `target` must already be
/// stripped of labels.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_plan(
    start: &Detector,
    source: &Dataset,
    target: &Dataset,
    initial: PseudoLabelSet,
    cfg: &AdaptConfig,
    plan: Plan,
    stage: &str,
    run_dir: Option<&Path>,
) -> Result<(Detector, AdaptRunRecord)> {
    cfg.validate()?;
    check_inputs(source, target)?;
    let stride = start.config.input_size / start.config.grid;
    if matches!(plan.batches, BatchKind::Mixed) && cfg.mix.canvas % stride != 0 {
        return Err(Error::Config(format!(
            "DomainMix canvas {} is not a multiple of the model stride {stride}",
            cfg.mix.canvas
        )));
    }
    let (train, val) = carve_validation(source, cfg.val_size)?;
    let mut record = AdaptRunRecord::new(stage);
    record.events.push(Event::PseudoInit {
        producer: initial.producer.clone(),
        boxes: initial.total_boxes(),
    });
    let mut pseudo = materialize(initial, target, run_dir.map(|d| d.join("pseudo_init")).as_deref())?;

    let mut det = start.clone();
    if plan.freeze_first {
        det.params.freeze_non_bn();
    } else {
        det.params.unfreeze_all();
    }
    let mut t = Trainer::new(det, &train, val.as_ref(), cfg.train_view(), stage)?;
    let mut phase = if plan.freeze_first { Phase::BnOnly } else { Phase::Full };

    // Best BN-only checkpoint; the starting model stands in when Phase 1
    // has no epochs.
    let mut best_bn: Option<(Option<f64>, usize, Detector)> = None;
    let mut best_full: Option<(Option<f64>, usize)> = None;
    let better = |ap: Option<f64>, cur: Option<f64>| match (ap, cur) {
        (Some(a), Some(c)) => a > c,
        (Some(_), None) => true,
        _ => false,
    };

    for epoch in 1..=cfg.epochs {
        if let Some(w) = plan.switch_at {
            if epoch == w.max(1) && phase == Phase::BnOnly {
                let (_, from_epoch, best) = match best_bn.take() {
                    Some(b) => b,
                    None => (None, 0, start.clone()),
                };
                record.events.push(Event::BestCheckpoint {
                    phase: Phase::BnOnly,
                    epoch: from_epoch,
                });
                if let Some(d) = run_dir {
                    save_checkpoint(&best, &meta(stage, from_epoch, None), &d.join("best_bn_only.ck"))?;
                }
                t.det = best;
                record.events.push(Event::RestoreBest { epoch: w, from_epoch });
                if plan.refresh {
                    let fresh = gen_pseudo(&t.det, target, cfg.conf_threshold, &format!("{stage}@epoch{w}"))?;
                    let boxes = fresh.total_boxes();
                    pseudo = materialize(fresh, target, run_dir.map(|d| d.join("pseudo_refresh")).as_deref())?;
                    record.events.push(Event::PseudoRefresh { epoch: w, boxes });
                }
                t.det.params.unfreeze_all();
                t.reset_momentum();
                record.events.push(Event::Unfreeze { epoch: w });
                phase = Phase::Full;
            }
        }
        let batches = match plan.batches {
            BatchKind::Mixed => Batches::Mixed {
                target,
                pseudo: &pseudo,
                mix: &cfg.mix,
            },
            BatchKind::Interleaved => Batches::Interleaved { target, pseudo: &pseudo },
        };
        let mean_loss = t.run_epoch(epoch, batches)?;
        let val_ap50 = t.validate()?;
        log::info!("{stage} epoch {epoch} [{}]: loss {mean_loss:.4} val_ap50 {val_ap50:?}", phase.name());
        record.epochs.push(EpochMetrics {
            epoch,
            phase,
            mean_loss,
            val_ap50,
        });
        match phase {
            Phase::BnOnly => {
                if best_bn.as_ref().map_or(true, |b| better(val_ap50, b.0)) {
                    best_bn = Some((val_ap50, epoch, t.det.clone()));
                }
            }
            _ => {
                if best_full.map_or(true, |b| better(val_ap50, b.0)) {
                    best_full = Some((val_ap50, epoch));
                    if let Some(d) = run_dir {
                        save_checkpoint(&t.det, &meta(stage, epoch, val_ap50), &d.join("best_full.ck"))?;
                    }
                }
            }
        }
    }
    if let Some((ap, epoch, best)) = &best_bn {
        record.events.push(Event::BestCheckpoint {
            phase: Phase::BnOnly,
            epoch: *epoch,
        });
        if let Some(d) = run_dir {
            save_checkpoint(best, &meta(stage, *epoch, *ap), &d.join("best_bn_only.ck"))?;
        }
    }
    if let Some((_, epoch)) = best_full {
        record.events.push(Event::BestCheckpoint {
            phase: Phase::Full,
            epoch,
        });
    }
    let last_ap = record.epochs.last().and_then(|m| m.val_ap50);
    if let Some(d) = run_dir {
        save_checkpoint(&t.det, &meta(stage, cfg.epochs, last_ap), &d.join("final.ck"))?;
        write_run_dir(d, cfg, &record)?;
    }
    Ok((t.det, record))
}

/// Gradual self-labeling adaptation: BN-only training on DomainMix batches
/// for epochs `1..w`, then at epoch `w` restore the best BN-only
/// checkpoint, regenerate pseudo-labels with it, and fine-tune all layers.
/// Target labels, if any, are never read.
pub fn adapt_self(
    source_model: &Detector,
    source: &Dataset,
    target: &Dataset,
    cfg: &AdaptConfig,
    run_dir: Option<&Path>,
) -> Result<AdaptOutcome> {
    adapt_self_stage(source_model, source, target, cfg, "adapt", run_dir)
}

pub(crate) fn adapt_self_stage(
    source_model: &Detector,
    source: &Dataset,
    target: &Dataset,
    cfg: &AdaptConfig,
    stage: &str,
    run_dir: Option<&Path>,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    let target = target.without_labels();
    check_inputs(source, &target)?;
    let initial = gen_pseudo(source_model, &target, cfg.conf_threshold, &format!("{stage}:source"))?;
    let plan = Plan {
        freeze_first: true,
        switch_at: Some(cfg.w),
        refresh: true,
        batches: BatchKind::Mixed,
    };
    let (model, record) = run_plan(source_model, source, &target, initial, cfg, plan, stage, run_dir)?;
    Ok(AdaptOutcome {
        model,
        record,
        teacher: None,
    })
}

/// Adapts the teacher with [`adapt_self`], labels the target once with the
/// adapted teacher, then runs the student through the same BN-only then
/// full schedule without ever regenerating labels.
pub fn adapt_teacher_guided(
    student: &Detector,
    teacher: &Detector,
    source: &Dataset,
    target: &Dataset,
    cfg: &AdaptConfig,
    run_dir: Option<&Path>,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    if teacher.params.n_scalars() < student.params.n_scalars() {
        log::warn!("teacher has fewer parameters than the student");
    }
    let target = target.without_labels();
    let t = adapt_self_stage(teacher, source, &target, cfg, "teacher", run_dir.map(|d| d.join("teacher")).as_deref())?;
    let labels = gen_pseudo(&t.model, &target, cfg.conf_threshold, "teacher:adapted")?;
    let plan = Plan {
        freeze_first: true,
        switch_at: Some(cfg.w),
        refresh: false,
        batches: BatchKind::Mixed,
    };
    let (model, record) = run_plan(student, source, &target, labels, cfg, plan, "adapt", run_dir.map(|d| d.join("student")).as_deref())?;
    Ok(AdaptOutcome {
        model,
        record,
        teacher: Some((t.model, t.record)),
    })
}
