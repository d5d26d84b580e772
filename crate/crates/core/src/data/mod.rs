//! Dataset model, synthetic shapes, photometric corruptions and disk layout.

mod boxes;
mod corruption;
mod image;
mod io;
pub mod severity;
mod shapes;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use boxes::{iou_corners, BoundingBox};
pub use corruption::{
    apply_corruption, apply_corruption_with, corrupt_dataset, corrupt_dataset_with, parse_suite, CorruptionKind,
    CorruptionSpec,
};
pub use image::{quantize, Image};
pub use io::{format_record, load_dataset, parse_label_text, read_png, save_dataset, write_png};
pub(crate) use io::write_labels;
pub use severity::SeverityTable;
pub use shapes::{generate_shapes_dataset, ShapesConfig, SHAPE_NAMES};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
    Mixed,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
            Domain::Mixed => "mixed",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            "mixed" => Ok(Domain::Mixed),
            other => Err(Error::Config(format!("unknown domain '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub image: Image,
    pub boxes: Vec<BoundingBox>,
    /// `Source` or `Target`; items are never `Mixed`.
    pub domain: Domain,
}

impl LabeledImage {
    pub fn validate(&self) -> Result<()> {
        if self.domain == Domain::Mixed {
            return Err(Error::Contract(format!("item {} has domain 'mixed'", self.id)));
        }
        for b in &self.boxes {
            b.validate()
                .map_err(|e| Error::Contract(format!("item {}: {e}", self.id)))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub items: Vec<LabeledImage>,
    pub domain: Domain,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(items: Vec<LabeledImage>, domain: Domain, class_names: Vec<String>) -> Result<Self> {
        let ds = Self {
            items,
            domain,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.items.len());
        for item in &self.items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Contract(format!("duplicate item id '{}'", item.id)));
            }
            item.validate()?;
            if let Some(b) = item.boxes.iter().find(|b| b.class_id >= self.class_names.len()) {
                return Err(Error::Contract(format!(
                    "item {}: class {} >= {} class names",
                    item.id,
                    b.class_id,
                    self.class_names.len()
                )));
            }
            if self.domain != Domain::Mixed && item.domain != self.domain {
                return Err(Error::Contract(format!(
                    "item {} is {} inside a {} dataset",
                    item.id, item.domain, self.domain
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, item)| (item.id.as_str(), i))
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledImage> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn total_boxes(&self) -> usize {
        self.items.iter().map(|i| i.boxes.len()).sum()
    }

    /// Same images with every label removed.
    pub fn without_labels(&self) -> Dataset {
        let mut ds = self.clone();
        for item in &mut ds.items {
            item.boxes.clear();
        }
        ds
    }

    /// Splits off the last `n_holdout` items.
    pub fn split_holdout(&self, n_holdout: usize) -> Result<(Dataset, Dataset)> {
        if n_holdout >= self.items.len() {
            return Err(Error::Config(format!(
                "holdout of {n_holdout} leaves no training items out of {}",
                self.items.len()
            )));
        }
        let cut = self.items.len() - n_holdout;
        let train = Dataset {
            items: self.items[..cut].to_vec(),
            ..self.empty_like()
        };
        let hold = Dataset {
            items: self.items[cut..].to_vec(),
            ..self.empty_like()
        };
        Ok((train, hold))
    }

    pub fn empty_like(&self) -> Dataset {
        Dataset {
            items: Vec::new(),
            domain: self.domain,
            class_names: self.class_names.clone(),
        }
    }

    /// Retags the dataset and all its items.
    pub fn with_domain(mut self, domain: Domain) -> Dataset {
        self.domain = domain;
        if domain != Domain::Mixed {
            for item in &mut self.items {
                item.domain = domain;
            }
        }
        self
    }
}
