use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::record::{AdaptRunRecord, EpochMetrics, Event, Phase};
use crate::data::{BoundingBox, Dataset, Domain, Image, LabeledImage};
use crate::detector::{compute_loss, Detector, InputBatch, LrSchedule, Sgd};
use crate::domainmix::{compose, domain_mix_batch, MixConfig};
use crate::eval::evaluate;
use crate::pseudolabel::PseudoLabelSet;
use crate::seed;
use crate::{Error, Result};

/// Where the training images of each step come from.
#[derive(Clone, Copy)]
pub(crate) enum Batches<'a> {
    /// Labeled source images only.
    Source,
    /// A source batch turned into DomainMix collages.
    Mixed {
        target: &'a Dataset,
        pseudo: &'a PseudoLabelSet,
        mix: &'a MixConfig,
    },
    /// Half source images with ground truth, half target images with
    /// pseudo-labels, no mixing.
    Interleaved {
        target: &'a Dataset,
        pseudo: &'a PseudoLabelSet,
    },
}

pub(crate) struct Trainer<'a> {
    pub det: Detector,
    pub train: &'a Dataset,
    pub val: Option<&'a Dataset>,
    cfg: TrainConfig,
    opt: Sgd,
    sched: LrSchedule,
    step: usize,
    steps_per_epoch: usize,
    rng: ChaCha8Rng,
}

fn flip(item: &LabeledImage) -> (Image, Vec<BoundingBox>) {
    let (w, h) = (item.image.width(), item.image.height());
    let img = Image::from_fn(w, h, |x, y| item.image.pixel(w - 1 - x, y)).expect("same size");
    let boxes = item
        .boxes
        .iter()
        .map(|b| BoundingBox {
            cx: 1.0 - b.cx,
            ..*b
        })
        .collect();
    (img, boxes)
}

impl<'a> Trainer<'a> {
    pub fn new(det: Detector, train: &'a Dataset, val: Option<&'a Dataset>, cfg: TrainConfig, stage: &str) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Contract("empty training split".into()));
        }
        let steps_per_epoch = if cfg.steps_per_epoch > 0 {
            cfg.steps_per_epoch
        } else {
            train.len().div_ceil(cfg.batch_size)
        };
        let total = cfg.epochs * steps_per_epoch;
        let warmup = (cfg.warmup_epochs * steps_per_epoch as f64).round() as usize;
        Ok(Self {
            det,
            train,
            val,
            opt: Sgd::new(cfg.momentum, cfg.weight_decay),
            sched: LrSchedule::new(cfg.lr, warmup, total),
            step: 0,
            steps_per_epoch,
            rng: seed::rng(cfg.rng_seed, stage),
            cfg,
        })
    }

    pub fn reset_momentum(&mut self) {
        self.opt.reset();
    }

    pub fn validate(&self) -> Result<Option<f64>> {
        self.val.map(|v| evaluate(&self.det, v)).transpose()
    }

    /// One epoch of optimizer steps; returns the mean total loss.
    pub fn run_epoch(&mut self, epoch: usize, batches: Batches<'_>) -> Result<f64> {
        let n = self.train.len();
        let b = self.cfg.batch_size;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut loss_sum = 0.0;
        for s in 0..self.steps_per_epoch {
            let picks: Vec<&LabeledImage> = (0..b).map(|j| &self.train.items[order[(s * b + j) % n]]).collect();
            let (images, labels) = self.assemble(&picks, batches)?;
            // Collages train at canvas resolution so member objects keep
            // their scale; the detector is fully convolutional.
            let size = match batches {
                Batches::Mixed { mix, .. } => mix.canvas,
                _ => self.det.input_size(),
            };
            let input = InputBatch::from_images(images.iter(), size);
            let (out, tape) = self.det.forward_train(&input)?;
            let (loss, d_out) = compute_loss(&self.det.config, &out, &labels)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged(format!(
                    "epoch {epoch} step {s}: loss {} (box {}, obj {}, cls {}, {} positives)",
                    loss.total, loss.box_term, loss.obj_term, loss.cls_term, loss.positives
                )));
            }
            let grads = self.det.backward(&tape, &d_out);
            let lr = self.sched.at(self.step);
            self.opt
                .step(&mut self.det.params, &grads, lr)
                .map_err(|e| Error::Diverged(format!("epoch {epoch} step {s}: {e}")))?;
            self.det.update_running_stats(&tape);
            self.step += 1;
            loss_sum += loss.total;
        }
        Ok(loss_sum / self.steps_per_epoch as f64)
    }

    fn assemble(&mut self, picks: &[&LabeledImage], batches: Batches<'_>) -> Result<(Vec<Image>, Vec<Vec<BoundingBox>>)> {
        match batches {
            Batches::Source => {
                let mix = MixConfig::new(self.det.input_size());
                let train = self.train;
                let mut images = Vec::with_capacity(picks.len());
                let mut labels = Vec::with_capacity(picks.len());
                for it in picks {
                    let (img, boxes) = if self.cfg.mosaic > 0.0 && self.rng.random_bool(self.cfg.mosaic) {
                        let others: Vec<&LabeledImage> =
                            (0..3).map(|_| &train.items[self.rng.random_range(0..train.len())]).collect();
                        let members = [*it, others[0], others[1], others[2]].map(|m| (m, m.boxes.as_slice()));
                        let m = compose(members, &mix, &mut self.rng)?;
                        (m.image, m.boxes)
                    } else if self.cfg.hflip && self.rng.random_bool(0.5) {
                        flip(it)
                    } else {
                        (it.image.clone(), it.boxes.clone())
                    };
                    images.push(img);
                    labels.push(boxes);
                }
                Ok((images, labels))
            }
            Batches::Mixed { target, pseudo, mix } => {
                let samples = domain_mix_batch(picks, self.train, target, pseudo, mix, &mut self.rng)?;
                Ok(samples.into_iter().map(|m| (m.image, m.boxes)).unzip())
            }
            Batches::Interleaved { target, pseudo } => {
                let half = picks.len() / 2;
                let mut images = Vec::with_capacity(picks.len());
                let mut labels = Vec::with_capacity(picks.len());
                for it in &picks[..picks.len() - half] {
                    images.push(it.image.clone());
                    labels.push(it.boxes.clone());
                }
                for _ in 0..half {
                    let t = &target.items[self.rng.random_range(0..target.len())];
                    let pl = pseudo
                        .get(&t.id)
                        .ok_or_else(|| Error::Contract(format!("no pseudo-label entry for target image '{}'", t.id)))?;
                    images.push(t.image.clone());
                    labels.push(pl.to_vec());
                }
                Ok((images, labels))
            }
        }
    }
}

/// Splits the last `val_size` images off as a validation set; no split
/// when that would leave nothing to train on.
pub(crate) fn carve_validation(ds: &Dataset, val_size: usize) -> Result<(Dataset, Option<Dataset>)> {
    if val_size == 0 || val_size >= ds.len() {
        return Ok((ds.clone(), None));
    }
    let (train, val) = ds.split_holdout(val_size)?;
    Ok((train, Some(val)))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best checkpoint on the validation split (final weights without one).
    pub model: Detector,
    pub best_epoch: usize,
    pub record: AdaptRunRecord,
}

/// Supervised training on source data, returning the best-validation
/// checkpoint.
pub fn train_source(init: &Detector, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if ds.domain != Domain::Source {
        return Err(Error::Contract(format!("source training needs a source dataset, got {}", ds.domain)));
    }
    cfg.validate()?;
    let mut record = AdaptRunRecord::new("train_source");
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            model: init.clone(),
            best_epoch: 0,
            record,
        });
    }
    let (train, val) = carve_validation(ds, cfg.val_size)?;
    let mut t = Trainer::new(init.clone(), &train, val.as_ref(), cfg.clone(), "train_source")?;
    let mut best: Option<(f64, usize, Detector)> = None;
    for epoch in 1..=cfg.epochs {
        let mean_loss = t.run_epoch(epoch, Batches::Source)?;
        let val_ap50 = t.validate()?;
        log::info!("train_source epoch {epoch}: loss {mean_loss:.4} val_ap50 {val_ap50:?}");
        record.epochs.push(EpochMetrics {
            epoch,
            phase: Phase::Source,
            mean_loss,
            val_ap50,
        });
        if let Some(ap) = val_ap50 {
            if best.as_ref().map_or(true, |b| ap > b.0) {
                best = Some((ap, epoch, t.det.clone()));
            }
        }
    }
    let (model, best_epoch) = match best {
        Some((_, e, d)) => (d, e),
        None => (t.det, cfg.epochs),
    };
    record.events.push(Event::BestCheckpoint {
        phase: Phase::Source,
        epoch: best_epoch,
    });
    Ok(TrainOutcome {
        model,
        best_epoch,
        record,
    })
}
