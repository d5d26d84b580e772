use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Supervised source training.
    Source,
    /// BatchNorm-affine-only adaptation.
    BnOnly,
    /// All layers trainable.
    Full,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Source => "source",
            Phase::BnOnly => "bn_only",
            Phase::Full => "full",
        }
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Phase::Source, Phase::BnOnly, Phase::Full]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown phase '{s}'")))
    }
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Event {
    /// Initial pseudo-labels, produced before epoch 1.
    PseudoInit { producer: String, boxes: usize },
    /// Pseudo-labels regenerated with the current model.
    PseudoRefresh { epoch: usize, boxes: usize },
    Unfreeze { epoch: usize },
    /// Phase 2 initialized from the best checkpoint of Phase 1.
    RestoreBest { epoch: usize, from_epoch: usize },
    BestCheckpoint { phase: Phase, epoch: usize },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::PseudoInit { producer, boxes } => write!(f, "pseudo_init producer={producer} boxes={boxes}"),
            Event::PseudoRefresh { epoch, boxes } => write!(f, "pseudo_refresh epoch={epoch} boxes={boxes}"),
            Event::Unfreeze { epoch } => write!(f, "unfreeze epoch={epoch}"),
            Event::RestoreBest { epoch, from_epoch } => write!(f, "restore_best epoch={epoch} from_epoch={from_epoch}"),
            Event::BestCheckpoint { phase, epoch } => write!(f, "best_checkpoint phase={} epoch={epoch}", phase.name()),
        }
    }
}

impl FromStr for Event {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed event line '{line}'"));
        let mut parts = line.split_whitespace();
        let name = parts.next().ok_or_else(bad)?;
        let kv: Vec<(&str, &str)> = parts.map(|p| p.split_once('=').ok_or_else(bad)).collect::<Result<_>>()?;
        let get = |k: &str| kv.iter().find(|(key, _)| *key == k).map(|(_, v)| *v).ok_or_else(bad);
        let num = |k: &str| get(k)?.parse::<usize>().map_err(|_| bad());
        Ok(match name {
            "pseudo_init" => Event::PseudoInit {
                producer: get("producer")?.to_string(),
                boxes: num("boxes")?,
            },
            "pseudo_refresh" => Event::PseudoRefresh {
                epoch: num("epoch")?,
                boxes: num("boxes")?,
            },
            "unfreeze" => Event::Unfreeze { epoch: num("epoch")? },
            "restore_best" => Event::RestoreBest {
                epoch: num("epoch")?,
                from_epoch: num("from_epoch")?,
            },
            "best_checkpoint" => Event::BestCheckpoint {
                phase: get("phase")?.parse()?,
                epoch: num("epoch")?,
            },
            _ => return Err(bad()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: f64,
    /// AP50 on the held-out source split, if one exists.
    pub val_ap50: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptRunRecord {
    pub label: String,
    pub epochs: Vec<EpochMetrics>,
    pub events: Vec<Event>,
}

impl AdaptRunRecord {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            ..Self::default()
        }
    }

    pub fn refresh_epochs(&self) -> Vec<usize> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::PseudoRefresh { epoch, .. } => Some(*epoch),
                _ => None,
            })
            .collect()
    }

    /// Plain-text event log, one event per line.
    pub fn event_log(&self) -> String {
        self.events.iter().map(|e| format!("{e}\n")).collect()
    }

    pub fn parse_event_log(text: &str) -> Result<Vec<Event>> {
        text.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
    }

    /// `epoch,phase,mean_loss,val_ap50` with an empty last field when no
    /// validation split exists.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("epoch,phase,mean_loss,val_ap50\n");
        for m in &self.epochs {
            let ap = m.val_ap50.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", m.epoch, m.phase.name(), m.mean_loss, ap));
        }
        s
    }
}
